// SPDX-License-Identifier: Apache-2.0
#include "tbvad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tbvad/error.hpp"
#include "tbvad/hashing.hpp"

namespace tbvad {

using nlohmann::json;

std::string_view to_string(SynthDomain d) {
  switch (d) {
  case SynthDomain::a: return "a";
  case SynthDomain::b_shared: return "b-shared";
  case SynthDomain::b_disjoint: return "b-disjoint";
  }
  return "?";
}

SynthDomain parse_domain(std::string_view s) {
  if (s == "a") return SynthDomain::a;
  if (s == "b-shared") return SynthDomain::b_shared;
  if (s == "b-disjoint") return SynthDomain::b_disjoint;
  throw ValidationError("unknown synthetic domain '" + std::string(s) +
                        "' (expected a, b-shared or b-disjoint)");
}

const AspectPools &Vocabulary::pools(Aspect a) const {
  switch (a) {
  case Aspect::context: return context;
  case Aspect::action: return action;
  case Aspect::object: return object;
  case Aspect::environment: return environment;
  }
  throw Error("bad aspect");
}

namespace {

Vocabulary english() {
  Vocabulary v;
  v.persons = {"man", "woman", "person", "teenager", "worker", "customer",
               "pedestrian", "student", "driver", "shopper"};
  v.times = {"morning", "afternoon", "evening", "night", "daytime", "dawn"};
  v.context.normal = {"quiet", "calm", "busy", "orderly", "relaxed",
                      "peaceful", "routine", "ordinary"};
  v.context.abnormal = {"chaotic", "panicked", "violent", "tense",
                        "alarming", "frantic", "hostile", "dangerous"};
  v.action.normal = {"walking slowly", "talking on a phone", "waiting in line",
                     "sitting on a bench", "browsing the shelves",
                     "paying at the counter", "jogging past", "carrying groceries",
                     "reading a map", "standing still"};
  v.action.abnormal = {"punching another man", "stealing a wallet",
                       "breaking a window", "setting a fire",
                       "kicking a door", "shooting at people",
                       "vandalizing a car", "attacking a guard",
                       "robbing the cashier", "fighting violently"};
  v.object.normal = {"shopping bag", "umbrella", "bicycle", "coffee cup",
                     "backpack", "stroller", "newspaper", "laptop", "suitcase",
                     "water bottle"};
  v.object.abnormal = {"handgun", "knife", "crowbar", "baseball bat",
                       "gasoline can", "rifle", "ski mask", "shattered glass",
                       "burning rag", "brass knuckles"};
  v.environment.normal = {"city street", "grocery store", "parking lot",
                          "subway platform", "office lobby", "shopping mall",
                          "gas station", "residential road", "bus stop",
                          "hotel entrance"};
  v.environment.abnormal = {"smoke filled hallway", "wrecked storefront",
                            "burning building", "blocked alley",
                            "flooded underpass", "looted shop",
                            "collapsed entrance", "barricaded corner"};
  return v;
}

/// Deterministic pseudo-words, distinct from English and from each other.
std::vector<std::string> pseudo_words(std::uint64_t seed, std::size_t n,
                                      std::set<std::string> &used) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  Rng rng(seed);
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    const std::size_t syllables = 2 + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += consonants[rng.below(consonants.size())];
      w += vowels[rng.below(vowels.size())];
    }
    w += consonants[rng.below(consonants.size())];
    if (used.insert(w).second)
      out.push_back(std::move(w));
  }
  return out;
}

constexpr std::size_t kPseudoPool = 48;

} // namespace

Vocabulary vocabulary(SynthDomain domain) {
  Vocabulary v = english();
  if (domain == SynthDomain::a)
    return v;
  std::set<std::string> used;
  std::uint64_t stream = 0x5eed;
  auto fresh = [&](std::size_t n) { return pseudo_words(++stream, n, used); };
  v.persons = fresh(kPseudoPool);
  v.times = fresh(kPseudoPool);
  for (AspectPools *p : {&v.context, &v.action, &v.object, &v.environment}) {
    p->normal = fresh(kPseudoPool);
    if (domain == SynthDomain::b_disjoint)
      p->abnormal = fresh(kPseudoPool);
  }
  return v;
}

void SynthConfig::validate() const {
  if (videos < 2)
    throw ValidationError("synthetic corpus needs at least 2 videos");
  if (!(abnormal_fraction > 0.0 && abnormal_fraction < 1.0))
    throw ValidationError("abnormal_fraction must lie in (0, 1)");
  if (frames_min == 0 || frames_max < frames_min)
    throw ValidationError("need 0 < frames_min <= frames_max");
  if (planted.empty())
    throw ValidationError("at least one planted aspect is required");
  if (!(plant_rate > 0.0 && plant_rate <= 1.0))
    throw ValidationError("plant_rate must lie in (0, 1]");
  if (!(confusion_rate >= 0.0 && confusion_rate < 1.0))
    throw ValidationError("confusion_rate must lie in [0, 1)");
  if (id_prefix.empty())
    throw ValidationError("id_prefix must not be empty");
}

json SynthConfig::to_json() const {
  return {{"videos", videos},
          {"abnormal_fraction", abnormal_fraction},
          {"frames_min", frames_min},
          {"frames_max", frames_max},
          {"planted", join_aspects(planted)},
          {"plant_rate", plant_rate},
          {"confusion_rate", confusion_rate},
          {"domain", std::string(to_string(domain))},
          {"seed", seed},
          {"id_prefix", id_prefix}};
}

SynthConfig SynthConfig::from_json(const json &j) {
  if (!j.is_object())
    throw ValidationError("synthetic config must be a JSON object");
  SynthConfig c;
  for (const auto &[key, val] : j.items()) {
    try {
      if (key == "videos") c.videos = val.get<std::size_t>();
      else if (key == "abnormal_fraction") c.abnormal_fraction = val.get<double>();
      else if (key == "frames_min") c.frames_min = val.get<std::size_t>();
      else if (key == "frames_max") c.frames_max = val.get<std::size_t>();
      else if (key == "planted") c.planted = parse_aspect_list(val.get<std::string>());
      else if (key == "plant_rate") c.plant_rate = val.get<double>();
      else if (key == "confusion_rate") c.confusion_rate = val.get<double>();
      else if (key == "domain") c.domain = parse_domain(val.get<std::string>());
      else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "id_prefix") c.id_prefix = val.get<std::string>();
      else throw ValidationError("unknown synthetic config key '" + key + "'");
    } catch (const json::exception &e) {
      throw ValidationError("synthetic config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

json SynthResult::manifest_json(const SynthConfig &cfg) const {
  json videos = json::array();
  for (const auto &v : manifest)
    videos.push_back({{"video_id", v.video_id},
                      {"label", std::string(to_string(v.label))},
                      {"planted_frames", v.planted_frames}});
  return {{"config", cfg.to_json()}, {"videos", videos}};
}

namespace {

std::string sentence(Aspect a, const Vocabulary &voc, bool abnormal, Rng &rng) {
  const auto &pool = voc.pools(a);
  const auto &words = abnormal ? pool.abnormal : pool.normal;
  const std::string &w = rng.pick(std::span<const std::string>(words));
  switch (a) {
  case Aspect::context:
    return "The scene is " + w + " during the " +
           rng.pick(std::span<const std::string>(voc.times)) + ".";
  case Aspect::action:
    return "A " + rng.pick(std::span<const std::string>(voc.persons)) + " is " +
           w + ".";
  case Aspect::object:
    return "A " + w + " can be seen nearby.";
  case Aspect::environment:
    return "The location is a " + w + ".";
  }
  return {};
}

constexpr std::uint64_t kFrameStride = 16;

} // namespace

SynthResult generate_synthetic(const SynthConfig &cfg) {
  cfg.validate();
  const Vocabulary voc = vocabulary(cfg.domain);
  Rng rng(cfg.seed);

  const auto n_abn = static_cast<std::size_t>(
      std::llround(cfg.abnormal_fraction * static_cast<double>(cfg.videos)));
  const std::size_t n_abnormal = std::clamp<std::size_t>(n_abn, 1, cfg.videos - 1);
  std::vector<Label> labels(cfg.videos, Label::normal);
  std::fill(labels.begin(), labels.begin() + static_cast<long>(n_abnormal),
            Label::abnormal);
  rng.shuffle(labels);

  const std::size_t width = std::max<std::size_t>(4, std::to_string(cfg.videos).size());
  SynthResult out;
  out.corpus.source_tag = "synthetic-" + std::string(to_string(cfg.domain));
  for (std::size_t i = 0; i < cfg.videos; ++i) {
    std::string num = std::to_string(i);
    num.insert(0, width - num.size(), '0');
    VideoRecord video{cfg.id_prefix + num, labels[i], {}};
    SynthVideo info{video.video_id, labels[i], {}};

    const std::size_t n_frames =
        cfg.frames_min + rng.below(cfg.frames_max - cfg.frames_min + 1);
    std::vector<bool> planted(n_frames, false);
    const double rate =
        labels[i] == Label::abnormal ? cfg.plant_rate : cfg.confusion_rate;
    for (std::size_t f = 0; f < n_frames; ++f)
      planted[f] = rng.bernoulli(rate);
    if (labels[i] == Label::abnormal &&
        std::none_of(planted.begin(), planted.end(), [](bool b) { return b; }))
      planted[rng.below(n_frames)] = true;

    for (std::size_t f = 0; f < n_frames; ++f) {
      std::string text;
      for (Aspect a : kAllAspects) {
        const bool abnormal_word = planted[f] && std::find(cfg.planted.begin(), cfg.planted.end(),
                                                 a) != cfg.planted.end();
        if (!text.empty())
          text += ' ';
        text += sentence(a, voc, abnormal_word, rng);
      }
      const std::uint64_t frame_index = f * kFrameStride;
      if (planted[f])
        info.planted_frames.push_back(frame_index);
      video.captions.push_back({video.video_id, frame_index, std::move(text)});
    }
    out.corpus.videos.push_back(std::move(video));
    out.manifest.push_back(std::move(info));
  }
  return out;
}

} // namespace tbvad
