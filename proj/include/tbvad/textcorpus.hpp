// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tbvad {

enum class Label { normal, abnormal };

std::string_view to_string(Label label);
/// Parses "normal" / "abnormal"; throws ValidationError otherwise.
Label parse_label(std::string_view text);
/// Short class tag used in knowledge files: "n" / "a".
std::string_view class_tag(Label label);
Label parse_class_tag(std::string_view tag);
inline Label opposite(Label l) {
  return l == Label::normal ? Label::abnormal : Label::normal;
}

struct Caption {
  std::string video_id;
  std::uint64_t frame_index = 0;
  std::string text;
};

struct VideoRecord {
  std::string video_id;
  Label label = Label::normal;
  std::vector<Caption> captions; // sorted by frame_index
};

struct CaptionCorpus {
  std::vector<VideoRecord> videos;
  std::string source_tag;

  std::size_t caption_count() const;
  const VideoRecord *find(std::string_view video_id) const;
};

/// Reads a JSON-Lines caption file. Each line is one caption:
///   {"video_id": str, "frame_index": int, "label": "normal"|"abnormal",
///    "text": str}
/// Videos keep first-appearance order; captions are sorted by frame index.
/// Throws ValidationError naming the offending line on any schema problem.
CaptionCorpus load_captions(const std::filesystem::path &path,
                            std::string source_tag = {});
CaptionCorpus parse_captions(std::string_view jsonl, std::string source_tag = {});

/// Writes the corpus back out in the same JSON-Lines format.
void save_captions(const CaptionCorpus &corpus,
                   const std::filesystem::path &path);
std::string captions_to_jsonl(const CaptionCorpus &corpus);

/// Partition into (normal, abnormal), preserving order.
std::pair<CaptionCorpus, CaptionCorpus> group_by_class(const CaptionCorpus &corpus);

/// Caption positions picked for K evenly spaced frames out of N:
/// floor(i * (N - 1) / (K - 1)) for i = 0..K-1 when N > K, else 0..N-1.
std::vector<std::size_t> even_positions(std::size_t n, std::size_t k);
std::vector<Caption> sample_evenly(const VideoRecord &video, std::size_t k);

/// Splits at '.', '!' or '?' followed by whitespace or end of text.
/// Abbreviations are not recognised.
std::vector<std::string> sentence_split(std::string_view text);

/// Trims ASCII whitespace from both ends.
std::string_view trim(std::string_view s);

} // namespace tbvad
