// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "support/gradcheck.hpp"
#include "tbvad/reasoning.hpp"

namespace tbvad::testing {

/// Hand-built record used by the explanation snapshot.
inline ExplanationRecord golden_record() {
  ExplanationRecord r;
  r.video_id = "vid0007";
  r.score = 0.8137;
  r.predicted_label = Label::abnormal;
  r.slot_weights = {{Aspect::context, 0.10},
                    {Aspect::action, 0.62},
                    {Aspect::object, 0.07},
                    {Aspect::environment, 0.21}};
  r.evidences = {
      {Label::abnormal, Aspect::action, "A person is setting a fire.", 0.8123, 1},
      {Label::abnormal, Aspect::environment, "The location is a gas station.", 0.5, 2}};
  r.margins = {{Aspect::context, -0.05},
               {Aspect::action, 0.30},
               {Aspect::object, -0.10},
               {Aspect::environment, -0.15}};
  r.model_digest = "0123abcd";
  return r;
}

/// Knowledge with random prototypes and sentence embeddings; no text model.
inline KnowledgeBase random_kb(Rng &rng, std::size_t d, bool with_empty = false) {
  KnowledgeBase kb;
  kb.aspects = all_aspects();
  kb.embedder.dim = d;
  for (Label v : {Label::normal, Label::abnormal}) {
    kb.prototypes[v] = random_matrix(4, d, rng);
    for (Aspect a : kb.aspects) {
      std::size_t n = 1 + rng.below(5);
      if (with_empty && rng.bernoulli(0.15))
        n = 0;
      SlotSummary s{v, a, "x", {}};
      Matrix e(n, d);
      for (std::size_t i = 0; i < n; ++i) {
        s.sentences.push_back(std::string(to_string(a)) + " sentence " + std::to_string(i));
        for (std::size_t j = 0; j < d; ++j)
          e(i, j) = rng.uniform(-1, 1);
      }
      // duplicated rows make cosine ties
      if (n >= 3 && rng.bernoulli(0.3))
        for (std::size_t j = 0; j < d; ++j)
          e(2, j) = e(0, j);
      kb.slots[{v, a}] = std::move(s);
      kb.sentence_embeddings[{v, a}] = std::move(e);
    }
  }
  return kb;
}

} // namespace tbvad::testing
