// SPDX-License-Identifier: Apache-2.0
#include "tbvad/reasoning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "tbvad/error.hpp"
#include "tbvad/kernels.hpp"
#include "tbvad/log.hpp"

namespace tbvad {

using nlohmann::json;

AttentionResult slot_attention(const Matrix &prototypes,
                               const TokenEmbeddingSeq &h, AttentionNorm norm) {
  if (prototypes.cols() != h.dim())
    throw ValidationError("slot prototype dim " + std::to_string(prototypes.cols()) +
                          " does not match description dim " +
                          std::to_string(h.dim()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(h.dim()));
  AttentionResult r;
  r.A = kernels::matmul_nt(prototypes, h.vectors);
  for (std::size_t s = 0; s < r.A.rows(); ++s) {
    for (std::size_t t = 0; t < r.A.cols(); ++t)
      r.A(s, t) = h.mask[t] ? r.A(s, t) * scale : 0.0;
    if (norm == AttentionNorm::row_softmax) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < r.A.cols(); ++t)
        if (h.mask[t])
          mx = std::max(mx, r.A(s, t));
      double sum = 0.0;
      for (std::size_t t = 0; t < r.A.cols(); ++t) {
        r.A(s, t) = h.mask[t] ? std::exp(r.A(s, t) - mx) : 0.0;
        sum += r.A(s, t);
      }
      for (std::size_t t = 0; t < r.A.cols(); ++t)
        r.A(s, t) /= sum;
    }
  }
  r.C = kernels::matmul(r.A, h.vectors);
  return r;
}

ImportanceNet ImportanceNet::zeros(std::size_t d_model, std::size_t hidden) {
  return {Matrix(2 * d_model, hidden), Matrix(1, hidden), Matrix(hidden, 1),
          Matrix(1, 1)};
}

ImportanceNet ImportanceNet::init(std::size_t d_model, std::size_t hidden,
                                  Rng &rng) {
  auto f = zeros(d_model, hidden);
  const double b1 = 1.0 / std::sqrt(static_cast<double>(2 * d_model));
  for (double &x : f.w1.flat())
    x = rng.uniform(-b1, b1);
  const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (double &x : f.w2.flat())
    x = rng.uniform(-b2, b2);
  return f;
}

double ImportanceNet::score(std::span<const double> context,
                            std::span<const double> prototype,
                            Vector *hidden) const {
  const std::size_t d = context.size();
  if (prototype.size() != d || 2 * d != w1.rows())
    throw ValidationError("importance net input dim mismatch");
  Vector hid(b1.flat().begin(), b1.flat().end());
  for (std::size_t i = 0; i < d; ++i) {
    axpy(context[i], w1.row_span(i), hid);
    axpy(prototype[i], w1.row_span(d + i), hid);
  }
  double z = b2(0, 0);
  for (std::size_t j = 0; j < hid.size(); ++j) {
    hid[j] = std::tanh(hid[j]);
    z += hid[j] * w2(j, 0);
  }
  if (hidden)
    *hidden = std::move(hid);
  return z;
}

void ImportanceNet::visit(const Visitor &fn) {
  fn("importance.w1", w1, true);
  fn("importance.b1", b1, false);
  fn("importance.w2", w2, true);
  fn("importance.b2", b2, false);
}

Vector softmax(std::span<const double> z) {
  if (z.empty())
    return {};
  const double mx = *std::max_element(z.begin(), z.end());
  Vector w(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    w[i] = std::exp(z[i] - mx);
    sum += w[i];
  }
  for (double &x : w)
    x /= sum;
  return w;
}

SlotImportance slot_importance(const Matrix &C, const Matrix &prototypes,
                               const SlotScorer &f) {
  if (C.rows() != prototypes.rows())
    throw ValidationError("context and prototype row counts differ");
  SlotImportance r;
  for (std::size_t s = 0; s < C.rows(); ++s) {
    const double z = f(C.row_span(s), prototypes.row_span(s));
    if (!std::isfinite(z))
      throw Error("non-finite slot importance score for slot " + std::to_string(s));
    r.z.push_back(z);
  }
  r.w = softmax(r.z);
  return r;
}

SlotImportance slot_importance(const Matrix &C, const Matrix &prototypes,
                               const ImportanceNet &f) {
  return slot_importance(C, prototypes,
                         [&f](std::span<const double> c, std::span<const double> k) {
                           return f.score(c, k);
                         });
}

std::vector<Evidence> retrieve_evidence(std::span<const double> h_bar,
                                        const KnowledgeBase &kb, Label v,
                                        const SlotImportance &importance,
                                        std::size_t k) {
  if (k == 0)
    throw ValidationError("top-k must be at least 1");
  if (importance.w.size() != kb.aspects.size())
    throw ValidationError("slot weights do not match the knowledge aspects");
  // kb.aspects is in canonical order, so a stable sort breaks ties there.
  std::vector<std::size_t> order(kb.aspects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return importance.w[a] > importance.w[b];
  });

  std::vector<Evidence> out;
  for (std::size_t idx : order) {
    if (out.size() == k)
      break;
    const Aspect aspect = kb.aspects[idx];
    const auto &slot = kb.slot(v, aspect);
    auto emb_it = kb.sentence_embeddings.find({v, aspect});
    if (slot.sentences.empty() || emb_it == kb.sentence_embeddings.end() ||
        emb_it->second.rows() == 0) {
      log::warn("no knowledge sentences for slot " + std::string(to_string(aspect)) +
                "; skipping");
      continue;
    }
    const Matrix &emb = emb_it->second;
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < emb.rows(); ++i) {
      const double sim = cosine_similarity(h_bar, emb.row_span(i));
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    out.push_back({v, aspect, slot.sentences[best], best_sim,
                   static_cast<int>(out.size() + 1)});
  }
  return out;
}

SlotImportance class_importance(const TokenEmbeddingSeq &h, const KnowledgeBase &kb,
                                Label v, const ImportanceNet &f, AttentionNorm norm) {
  const Matrix &proto = kb.prototype(v);
  const auto att = slot_attention(proto, h, norm);
  return slot_importance(att.C, proto, f);
}

std::map<Aspect, double> counterfactual_margins(const TokenEmbeddingSeq &h,
                                                const KnowledgeBase &kb,
                                                const ImportanceNet &f,
                                                Label predicted,
                                                AttentionNorm norm) {
  const auto w = class_importance(h, kb, predicted, f, norm);
  const auto w_cf = class_importance(h, kb, opposite(predicted), f, norm);
  std::map<Aspect, double> margins;
  for (std::size_t s = 0; s < kb.aspects.size(); ++s)
    margins[kb.aspects[s]] = w.w[s] - w_cf.w[s];
  return margins;
}

void ExplanationRecord::validate() const {
  if (!std::isfinite(score) || score < 0.0 || score > 1.0)
    throw ValidationError("record score must lie in [0, 1]");
  if (predicted_label != label_for_score(score))
    throw ValidationError("record label disagrees with its score");
  if (slot_weights.empty())
    throw ValidationError("record has no slot weights");
  double total = 0.0;
  for (const auto &[a, w] : slot_weights) {
    if (!(w >= 0.0))
      throw ValidationError("slot weight for " + std::string(to_string(a)) +
                            " is negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw ValidationError("slot weights do not sum to 1");
  if (evidences.size() > slot_weights.size())
    throw ValidationError("more evidences than slots");
  for (std::size_t i = 0; i < evidences.size(); ++i) {
    const auto &e = evidences[i];
    if (!slot_weights.count(e.aspect))
      throw ValidationError("evidence cites an inactive aspect");
    if (e.rank != static_cast<int>(i + 1))
      throw ValidationError("evidence ranks must be 1..k in order");
    if (!(e.similarity >= -1.0 - 1e-12 && e.similarity <= 1.0 + 1e-12))
      throw ValidationError("evidence similarity outside [-1, 1]");
  }
  if (!margins.empty()) {
    double sum = 0.0;
    for (const auto &[a, m] : margins) {
      if (!slot_weights.count(a))
        throw ValidationError("margin for an inactive aspect");
      sum += m;
    }
    if (margins.size() != slot_weights.size())
      throw ValidationError("margins must cover every active aspect");
    if (std::abs(sum) > 1e-6)
      throw ValidationError("counterfactual margins do not sum to 0");
  }
}

json ExplanationRecord::to_json() const {
  json weights = json::object();
  for (const auto &[a, w] : slot_weights)
    weights[std::string(to_string(a))] = w;
  json marg = json::object();
  for (const auto &[a, m] : margins)
    marg[std::string(to_string(a))] = m;
  json ev = json::array();
  for (const auto &e : evidences)
    ev.push_back({{"aspect", to_string(e.aspect)},
                  {"class", to_string(e.class_v)},
                  {"sentence", e.sentence},
                  {"similarity", e.similarity},
                  {"rank", e.rank}});
  return {{"video_id", video_id},
          {"score", score},
          {"label", to_string(predicted_label)},
          {"slot_weights", weights},
          {"evidences", ev},
          {"margins", marg},
          {"rationale", rationale},
          {"fallback", fallback},
          {"model_digest", model_digest}};
}

ExplanationRecord ExplanationRecord::from_json(const json &j) {
  try {
    ExplanationRecord r;
    r.video_id = j.at("video_id").get<std::string>();
    r.score = j.at("score").get<double>();
    r.predicted_label = parse_label(j.at("label").get<std::string>());
    for (const auto &[k, w] : j.at("slot_weights").items())
      r.slot_weights[parse_aspect(k)] = w.get<double>();
    for (const auto &e : j.at("evidences"))
      r.evidences.push_back({parse_label(e.at("class").get<std::string>()),
                             parse_aspect(e.at("aspect").get<std::string>()),
                             e.at("sentence").get<std::string>(),
                             e.at("similarity").get<double>(),
                             e.at("rank").get<int>()});
    for (const auto &[k, m] : j.at("margins").items())
      r.margins[parse_aspect(k)] = m.get<double>();
    r.rationale = j.at("rationale").get<std::string>();
    r.fallback = j.at("fallback").get<bool>();
    r.model_digest = j.at("model_digest").get<std::string>();
    r.validate();
    return r;
  } catch (const json::exception &e) {
    throw ValidationError(std::string("explanation record: ") + e.what());
  }
}

ExplanationRecord build_record(std::string video_id, double y,
                               const std::map<Aspect, double> &weights,
                               std::vector<Evidence> evidences,
                               std::map<Aspect, double> margins,
                               std::string rationale, std::string model_digest) {
  ExplanationRecord r;
  r.video_id = std::move(video_id);
  r.score = y;
  r.predicted_label = label_for_score(y);
  r.slot_weights = weights;
  r.evidences = std::move(evidences);
  r.margins = std::move(margins);
  r.rationale = std::move(rationale);
  r.model_digest = std::move(model_digest);
  r.validate();
  return r;
}

void check_evidence_membership(const ExplanationRecord &r, const KnowledgeBase &kb) {
  for (const auto &e : r.evidences) {
    const auto &sents = kb.slot(e.class_v, e.aspect).sentences;
    if (std::find(sents.begin(), sents.end(), e.sentence) == sents.end())
      throw ValidationError("evidence sentence is not in the " +
                            std::string(to_string(e.aspect)) +
                            " knowledge of class " +
                            std::string(to_string(e.class_v)));
  }
}

namespace {
std::string fmt(const char *spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}
} // namespace

std::string render_template(const ExplanationRecord &r) {
  std::string out = "Prediction: " + std::string(to_string(r.predicted_label)) +
                    " (anomaly score " + fmt("%.3f", r.score) + ")\n";

  std::vector<std::pair<Aspect, double>> ranked(r.slot_weights.begin(),
                                                r.slot_weights.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto &a, const auto &b) { return a.second > b.second; });
  out += "Slot importance: ";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (i)
      out += ", ";
    out += std::string(to_string(ranked[i].first)) + " (" +
           fmt("%.1f", 100.0 * ranked[i].second) + "%)";
  }
  out += "\n";

  for (const auto &e : r.evidences)
    out += "Evidence " + std::to_string(e.rank) + " [" +
           std::string(to_string(e.aspect)) + ", " +
           std::string(to_string(e.class_v)) + " knowledge, similarity " +
           fmt("%.3f", e.similarity) + "]: \"" + e.sentence + "\"\n";

  if (!r.evidences.empty() && !r.margins.empty()) {
    auto pivot = r.margins.begin();
    for (auto it = r.margins.begin(); it != r.margins.end(); ++it)
      if (std::abs(it->second) > std::abs(pivot->second))
        pivot = it;
    out += "Counterfactual pivot: " + std::string(to_string(pivot->first)) +
           " (margin " + fmt("%+.3f", pivot->second) + " under the " +
           std::string(to_string(opposite(r.predicted_label))) +
           " knowledge)\n";
  }
  return out;
}

std::string explanation_prompt(const ExplanationRecord &r) {
  json rec = r.to_json();
  rec.erase("rationale");
  rec.erase("fallback");
  return "You explain decisions of a text-based video anomaly detector. Using "
         "only the structured record below, write a concise justification of "
         "the predicted label. Mention the most important slots, quote the "
         "evidence sentences, and say which slot would change most if the "
         "prediction were inverted.\n\nRecord:\n" +
         rec.dump(2) + "\n";
}

std::string generate_explanation(ExplanationRecord &r, Generator *remote,
                                 int max_new_tokens) {
  r.validate();
  r.fallback = false;
  if (!remote)
    return render_template(r);
  try {
    return remote->generate(explanation_prompt(r), max_new_tokens);
  } catch (const Error &e) {
    log::warn(std::string("explanation generator failed, using template: ") +
              e.what());
    r.fallback = true;
    return render_template(r);
  }
}

} // namespace tbvad
