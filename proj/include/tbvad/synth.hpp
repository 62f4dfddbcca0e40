// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbvad/knowledge.hpp"
#include "tbvad/textcorpus.hpp"

namespace tbvad {

/// Vocabulary variants. `a` is plain English surveillance vocabulary.
/// `b_shared` swaps every normal pool for generated pseudo-words but keeps
/// the abnormal pools of `a`; `b_disjoint` replaces all pools.
enum class SynthDomain { a, b_shared, b_disjoint };

std::string_view to_string(SynthDomain d);
SynthDomain parse_domain(std::string_view s);

struct AspectPools {
  std::vector<std::string> normal;
  std::vector<std::string> abnormal;
};

struct Vocabulary {
  std::vector<std::string> persons;
  std::vector<std::string> times;
  AspectPools context, action, object, environment;

  const AspectPools &pools(Aspect a) const;
};

Vocabulary vocabulary(SynthDomain domain);

struct SynthConfig {
  std::size_t videos = 200;
  double abnormal_fraction = 0.5;
  std::size_t frames_min = 10;
  std::size_t frames_max = 16;
  AspectSet planted = {Aspect::action, Aspect::object};
  /// Per-frame probability that an abnormal video draws from the abnormal
  /// pools; every abnormal video has at least one planted frame.
  double plant_rate = 0.75;
  /// Per-frame probability that a normal video draws from the abnormal
  /// pools anyway.
  double confusion_rate = 0.0;
  SynthDomain domain = SynthDomain::a;
  std::uint64_t seed = 0;
  std::string id_prefix = "vid";

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json &j);
};

struct SynthVideo {
  std::string video_id;
  Label label;
  std::vector<std::uint64_t> planted_frames;
};

struct SynthResult {
  CaptionCorpus corpus;
  std::vector<SynthVideo> manifest;

  nlohmann::json manifest_json(const SynthConfig &cfg) const;
};

SynthResult generate_synthetic(const SynthConfig &cfg);

} // namespace tbvad
