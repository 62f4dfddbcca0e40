// SPDX-License-Identifier: Apache-2.0
#include "tbvad/textcorpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "tbvad/error.hpp"

namespace tbvad {

using nlohmann::json;

std::string_view to_string(Label label) {
  return label == Label::normal ? "normal" : "abnormal";
}

Label parse_label(std::string_view text) {
  if (text == "normal")
    return Label::normal;
  if (text == "abnormal")
    return Label::abnormal;
  throw ValidationError("unknown label '" + std::string(text) + "'");
}

std::string_view class_tag(Label label) {
  return label == Label::normal ? "n" : "a";
}

Label parse_class_tag(std::string_view tag) {
  if (tag == "n")
    return Label::normal;
  if (tag == "a")
    return Label::abnormal;
  throw ValidationError("unknown class tag '" + std::string(tag) + "'");
}

std::size_t CaptionCorpus::caption_count() const {
  std::size_t n = 0;
  for (const auto &v : videos)
    n += v.captions.size();
  return n;
}

const VideoRecord *CaptionCorpus::find(std::string_view video_id) const {
  for (const auto &v : videos)
    if (v.video_id == video_id)
      return &v;
  return nullptr;
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

namespace {

[[noreturn]] void line_error(std::size_t line, const std::string &msg) {
  throw ValidationError("captions line " + std::to_string(line) + ": " + msg);
}

const json &require(const json &obj, const char *key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end())
    line_error(line, std::string("missing field \"") + key + "\"");
  return *it;
}

} // namespace

CaptionCorpus parse_captions(std::string_view jsonl, std::string source_tag) {
  CaptionCorpus corpus;
  corpus.source_tag = std::move(source_tag);
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::set<std::uint64_t>> seen_frames;

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= jsonl.size()) {
    auto end = jsonl.find('\n', start);
    if (end == std::string_view::npos)
      end = jsonl.size();
    ++line_no;
    const auto line = trim(jsonl.substr(start, end - start));
    start = end + 1;
    if (line.empty())
      continue;

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error &e) {
      line_error(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!rec.is_object())
      line_error(line_no, "record is not a JSON object");

    const auto &vid = require(rec, "video_id", line_no);
    const auto &frame = require(rec, "frame_index", line_no);
    const auto &label = require(rec, "label", line_no);
    const auto &text = require(rec, "text", line_no);
    if (!vid.is_string() || vid.get_ref<const std::string &>().empty())
      line_error(line_no, "\"video_id\" must be a non-empty string");
    if (!frame.is_number_integer() || frame.get<std::int64_t>() < 0)
      line_error(line_no, "\"frame_index\" must be a nonnegative integer");
    if (!label.is_string())
      line_error(line_no, "\"label\" must be a string");
    if (!text.is_string())
      line_error(line_no, "\"text\" must be a string");
    if (rec.size() != 4)
      line_error(line_no, "unexpected extra fields");

    Label lab;
    try {
      lab = parse_label(label.get_ref<const std::string &>());
    } catch (const ValidationError &e) {
      line_error(line_no, e.what());
    }
    const auto &body = text.get_ref<const std::string &>();
    if (trim(body).empty())
      line_error(line_no, "caption text is empty");

    const auto &id = vid.get_ref<const std::string &>();
    auto [it, inserted] = index.try_emplace(id, corpus.videos.size());
    if (inserted) {
      corpus.videos.push_back(VideoRecord{id, lab, {}});
      seen_frames.emplace_back();
    }
    auto &video = corpus.videos[it->second];
    if (video.label != lab)
      line_error(line_no, "label disagrees with earlier lines of video '" +
                              id + "'");
    const auto fi = frame.get<std::uint64_t>();
    if (!seen_frames[it->second].insert(fi).second)
      line_error(line_no, "duplicate frame_index " + std::to_string(fi) +
                              " for video '" + id + "'");
    video.captions.push_back(Caption{id, fi, std::string(trim(body))});
  }

  if (corpus.videos.empty())
    throw ValidationError("caption file contains no records");
  for (auto &v : corpus.videos)
    std::stable_sort(v.captions.begin(), v.captions.end(),
                     [](const Caption &a, const Caption &b) {
                       return a.frame_index < b.frame_index;
                     });
  return corpus;
}

CaptionCorpus load_captions(const std::filesystem::path &path,
                            std::string source_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot open captions file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (source_tag.empty())
    source_tag = path.stem().string();
  return parse_captions(buf.str(), std::move(source_tag));
}

std::string captions_to_jsonl(const CaptionCorpus &corpus) {
  std::string out;
  for (const auto &v : corpus.videos)
    for (const auto &c : v.captions) {
      json rec = {{"video_id", v.video_id},
                  {"frame_index", c.frame_index},
                  {"label", to_string(v.label)},
                  {"text", c.text}};
      out += rec.dump();
      out += '\n';
    }
  return out;
}

void save_captions(const CaptionCorpus &corpus,
                   const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write captions file " + path.string());
  out << captions_to_jsonl(corpus);
}

std::pair<CaptionCorpus, CaptionCorpus>
group_by_class(const CaptionCorpus &corpus) {
  CaptionCorpus normal{{}, corpus.source_tag};
  CaptionCorpus abnormal{{}, corpus.source_tag};
  for (const auto &v : corpus.videos)
    (v.label == Label::normal ? normal : abnormal).videos.push_back(v);
  return {std::move(normal), std::move(abnormal)};
}

std::vector<std::size_t> even_positions(std::size_t n, std::size_t k) {
  if (k == 0)
    throw ValidationError("sample count K must be at least 1");
  std::vector<std::size_t> pos;
  if (n <= k) {
    for (std::size_t i = 0; i < n; ++i)
      pos.push_back(i);
    return pos;
  }
  if (k == 1)
    return {0};
  for (std::size_t i = 0; i < k; ++i)
    pos.push_back(i * (n - 1) / (k - 1));
  return pos;
}

std::vector<Caption> sample_evenly(const VideoRecord &video, std::size_t k) {
  if (video.captions.empty())
    throw ValidationError("video '" + video.video_id + "' has no captions");
  std::vector<Caption> out;
  for (auto p : even_positions(video.captions.size(), k))
    out.push_back(video.captions[p]);
  return out;
}

std::vector<std::string> sentence_split(std::string_view text) {
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
  };
  std::vector<std::string> out;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    auto s = trim(text.substr(start, end - start));
    if (!s.empty())
      out.emplace_back(s);
    start = end;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?')
      continue;
    if (i + 1 == text.size() || is_space(text[i + 1]))
      flush(i + 1);
  }
  flush(text.size());
  return out;
}

} // namespace tbvad
