// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tbvad/embedder.hpp"
#include "tbvad/service.hpp"
#include "tbvad/tensor.hpp"
#include "tbvad/textcorpus.hpp"

namespace tbvad {

enum class Aspect { context = 0, action = 1, object = 2, environment = 3 };

inline constexpr std::array<Aspect, 4> kAllAspects = {
    Aspect::context, Aspect::action, Aspect::object, Aspect::environment};

std::string_view to_string(Aspect a);
Aspect parse_aspect(std::string_view s);

/// Active aspects, always kept unique and in canonical order
/// (context, action, object, environment).
using AspectSet = std::vector<Aspect>;
AspectSet make_aspect_set(std::vector<Aspect> aspects);
/// "object,environment" -> {object, environment}. Throws on unknown or empty.
AspectSet parse_aspect_list(std::string_view csv);
std::string join_aspects(const AspectSet &set, std::string_view sep = ",");
inline AspectSet all_aspects() { return {kAllAspects.begin(), kAllAspects.end()}; }

struct SlotSummary {
  Label class_v = Label::normal;
  Aspect aspect = Aspect::context;
  std::string text;
  std::vector<std::string> sentences;

  /// Builds a summary whose sentence list is sentence_split(text).
  static SlotSummary make(Label v, Aspect a, std::string text);
};

struct AspectPrompt {
  Aspect aspect = Aspect::context;
  /// Must contain the "{captions}" placeholder exactly once.
  std::string template_text;
  /// Terms favoured by the offline extractive summarizer.
  std::vector<std::string> keywords;

  void validate() const;
  std::string render(std::string_view captions) const;
};

/// One prompt per aspect, in canonical order.
std::vector<AspectPrompt> default_prompts();
std::vector<AspectPrompt> load_prompts(const std::filesystem::path &path);
std::vector<AspectPrompt> prompts_from_json(const nlohmann::json &j);
nlohmann::json prompts_to_json(const std::vector<AspectPrompt> &prompts);

class Summarizer {
public:
  virtual ~Summarizer() = default;
  /// Returns the raw summary text for one (class, aspect) slot.
  virtual std::string summarize(const CaptionCorpus &part,
                                const AspectPrompt &prompt, Label v) = 0;
};

/// Offline fallback: ranks the distinct caption sentences by the mean
/// keyword-weighted TF-IDF of their terms and keeps the best ten. TF is a
/// term's share of all tokens in the part; IDF treats sentences as
/// documents.
class ExtractiveSummarizer : public Summarizer {
public:
  static constexpr std::size_t kTopSentences = 10;
  static constexpr double kNonKeywordWeight = 0.0;

  std::string summarize(const CaptionCorpus &part, const AspectPrompt &prompt,
                        Label v) override;
};

/// LLM-backed map-reduce summarizer: captions are packed into chunks of at
/// most `chunk_tokens` tokens, each chunk is summarized with the aspect
/// prompt, and chunk summaries are summarized again until one remains.
class LlmSummarizer : public Summarizer {
public:
  explicit LlmSummarizer(Generator &gen, std::size_t chunk_tokens = 3000,
                         int max_new_tokens = 512)
      : gen_(gen), chunk_tokens_(chunk_tokens), max_new_tokens_(max_new_tokens) {}

  std::string summarize(const CaptionCorpus &part, const AspectPrompt &prompt,
                        Label v) override;

private:
  std::string reduce(std::vector<std::string> pieces, const AspectPrompt &prompt);
  Generator &gen_;
  std::size_t chunk_tokens_;
  int max_new_tokens_;
};

/// Packs lines into chunks whose token counts stay within `budget`. A single
/// line longer than the budget becomes its own chunk.
std::vector<std::string> chunk_lines(const std::vector<std::string> &lines,
                                     std::size_t budget);

SlotSummary summarize_aspect(const CaptionCorpus &part,
                             const AspectPrompt &prompt, Label v,
                             Summarizer &backend);

struct KnowledgeBase {
  AspectSet aspects;
  std::map<std::pair<Label, Aspect>, SlotSummary> slots;
  /// Per class, one row per active aspect in canonical order.
  std::map<Label, Matrix> prototypes;
  /// Per slot, one row per sentence.
  std::map<std::pair<Label, Aspect>, Matrix> sentence_embeddings;
  EmbedderConfig embedder;

  const SlotSummary &slot(Label v, Aspect a) const;
  const Matrix &prototype(Label v) const;
  /// Element-wise mean of the two class prototype matrices.
  Matrix mean_prototype() const;
  std::size_t slot_count() const { return aspects.size(); }
  /// Active slot texts for class v joined by single newlines, canonical order.
  std::string knowledge_text(Label v) const;

  nlohmann::json to_json() const;
  std::string dump() const;
  void save(const std::filesystem::path &path) const;
};

/// Parses the knowledge file. Embeddings are not serialized; they are
/// recomputed with `runtime` (whose backend, dim and seed must match the
/// file) so the file stays human-auditable.
KnowledgeBase knowledge_from_json(const nlohmann::json &j,
                                  const EmbedderConfig &runtime);
KnowledgeBase load_knowledge(const std::filesystem::path &path,
                             const EmbedderConfig &runtime);

/// Fills prototypes and sentence embeddings from the slot texts.
void populate_embeddings(KnowledgeBase &kb, const Embedder &embedder);

KnowledgeBase build_knowledge(const CaptionCorpus &normal,
                              const CaptionCorpus &abnormal,
                              const std::vector<AspectPrompt> &prompts,
                              const EmbedderConfig &cfg, const AspectSet &active,
                              Summarizer &backend);

/// Mean token embedding of the concatenated knowledge text of class v,
/// embedded with the knowledge token budget.
Vector pooled_knowledge(const KnowledgeBase &kb, Label v,
                        const Embedder &embedder);

/// P_V = W_V * pooled_knowledge + b_V, with W_V stored as d_latent x d.
Vector encode_knowledge(const KnowledgeBase &kb, Label v, const Matrix &w_v,
                        std::span<const double> b_v, const Embedder &embedder);

} // namespace tbvad
