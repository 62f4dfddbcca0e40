// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbvad/embedder.hpp"
#include "tbvad/hashing.hpp"
#include "tbvad/knowledge.hpp"
#include "tbvad/service.hpp"
#include "tbvad/tensor.hpp"

namespace tbvad {

/// How slot/token scores are normalised. `none` is the literal scaled
/// dot-product; `row_softmax` normalises each slot's row over real tokens.
enum class AttentionNorm { none, row_softmax };

struct AttentionResult {
  Matrix A; // S x T
  Matrix C; // S x d
};

/// A = K H^T / sqrt(d) with masked token columns forced to zero, C = A H.
AttentionResult slot_attention(const Matrix &prototypes, const TokenEmbeddingSeq &h,
                               AttentionNorm norm = AttentionNorm::none);

/// Two-layer scorer shared across slots:
/// z = w2 . tanh([C_s; K_s] W1 + b1) + b2, with W1 of size 2d x hidden.
struct ImportanceNet {
  Matrix w1, b1, w2, b2;

  static ImportanceNet zeros(std::size_t d_model, std::size_t hidden);
  static ImportanceNet init(std::size_t d_model, std::size_t hidden, Rng &rng);

  std::size_t input_dim() const { return w1.rows(); }
  std::size_t hidden_dim() const { return w1.cols(); }
  /// Scores one slot; optionally returns the hidden activations.
  double score(std::span<const double> context, std::span<const double> prototype,
               Vector *hidden = nullptr) const;

  using Visitor =
      std::function<void(const std::string &name, Matrix &tensor, bool decay)>;
  void visit(const Visitor &fn);
};

struct SlotImportance {
  Vector z;
  Vector w;
};

Vector softmax(std::span<const double> z);

using SlotScorer = std::function<double(std::span<const double> context,
                                        std::span<const double> prototype)>;

/// z_s = f([C_s; K_s]); w = softmax(z). Throws on non-finite z.
SlotImportance slot_importance(const Matrix &C, const Matrix &prototypes,
                               const SlotScorer &f);
SlotImportance slot_importance(const Matrix &C, const Matrix &prototypes,
                               const ImportanceNet &f);

struct Evidence {
  Label class_v = Label::normal;
  Aspect aspect = Aspect::context;
  std::string sentence;
  double similarity = 0.0;
  int rank = 0;

  friend bool operator==(const Evidence &, const Evidence &) = default;
};

/// Picks the k aspects with the largest weight (ties in canonical aspect
/// order), and for each the knowledge sentence most cosine-similar to
/// h_bar (ties to the lowest index). Aspects without sentences are skipped
/// and the next aspect is taken instead. Results are ordered by weight.
std::vector<Evidence> retrieve_evidence(std::span<const double> h_bar,
                                        const KnowledgeBase &kb, Label v,
                                        const SlotImportance &importance,
                                        std::size_t k);

/// Slot weights under the given class's prototypes.
SlotImportance class_importance(const TokenEmbeddingSeq &h, const KnowledgeBase &kb,
                                Label v, const ImportanceNet &f,
                                AttentionNorm norm = AttentionNorm::none);

/// Delta_s = w_s(K_predicted) - w_s(K_opposite), per active aspect.
std::map<Aspect, double> counterfactual_margins(const TokenEmbeddingSeq &h,
                                                const KnowledgeBase &kb,
                                                const ImportanceNet &f,
                                                Label predicted,
                                                AttentionNorm norm = AttentionNorm::none);

/// Decision rule shared by the record and the CLI: abnormal iff y >= 0.5.
inline Label label_for_score(double y) {
  return y >= 0.5 ? Label::abnormal : Label::normal;
}

struct ExplanationRecord {
  std::string video_id;
  double score = 0.0;
  Label predicted_label = Label::normal;
  std::map<Aspect, double> slot_weights;
  std::vector<Evidence> evidences;
  std::map<Aspect, double> margins; // empty when no counterfactual was run
  std::string rationale;
  bool fallback = false;
  std::string model_digest;

  /// Throws ValidationError when an invariant is broken.
  void validate() const;
  nlohmann::json to_json() const;
  static ExplanationRecord from_json(const nlohmann::json &j);

  friend bool operator==(const ExplanationRecord &,
                         const ExplanationRecord &) = default;
};

ExplanationRecord build_record(std::string video_id, double y,
                               const std::map<Aspect, double> &weights,
                               std::vector<Evidence> evidences,
                               std::map<Aspect, double> margins,
                               std::string rationale,
                               std::string model_digest = {});

/// Every evidence sentence must be a verbatim member of the knowledge
/// sentence list it cites.
void check_evidence_membership(const ExplanationRecord &r, const KnowledgeBase &kb);

/// Deterministic rendering: label and score, slot weights as
/// "aspect (NN.N%)" in descending order, each evidence quoted, and the
/// largest-|margin| aspect as the counterfactual pivot.
std::string render_template(const ExplanationRecord &r);

/// Prompt sent to a remote generator: fixed instructions plus the record
/// as JSON.
std::string explanation_prompt(const ExplanationRecord &r);

/// With no generator, renders the template. With one, returns its text; on
/// failure falls back to the template and sets r.fallback.
std::string generate_explanation(ExplanationRecord &r, Generator *remote,
                                 int max_new_tokens = 256);

} // namespace tbvad
