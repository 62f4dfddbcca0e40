// SPDX-License-Identifier: Apache-2.0
#include "tbvad/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "tbvad/error.hpp"
#include "tbvad/kernels.hpp"

namespace tbvad {

using nlohmann::json;

namespace {
constexpr std::string_view kPlaceholder = "{captions}";
}

std::string_view to_string(Aspect a) {
  switch (a) {
  case Aspect::context:
    return "context";
  case Aspect::action:
    return "action";
  case Aspect::object:
    return "object";
  case Aspect::environment:
    return "environment";
  }
  return "?";
}

Aspect parse_aspect(std::string_view s) {
  for (Aspect a : kAllAspects)
    if (to_string(a) == s)
      return a;
  throw ValidationError("unknown aspect '" + std::string(s) + "'");
}

AspectSet make_aspect_set(std::vector<Aspect> aspects) {
  std::sort(aspects.begin(), aspects.end());
  aspects.erase(std::unique(aspects.begin(), aspects.end()), aspects.end());
  return aspects;
}

AspectSet parse_aspect_list(std::string_view csv) {
  std::vector<Aspect> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto end = csv.find_first_of(",+", start);
    if (end == std::string_view::npos)
      end = csv.size();
    const auto item = trim(csv.substr(start, end - start));
    if (!item.empty())
      out.push_back(parse_aspect(item));
    start = end + 1;
  }
  if (out.empty())
    throw ValidationError("aspect list is empty");
  return make_aspect_set(std::move(out));
}

std::string join_aspects(const AspectSet &set, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i)
      out += sep;
    out += to_string(set[i]);
  }
  return out;
}

SlotSummary SlotSummary::make(Label v, Aspect a, std::string text) {
  if (trim(text).empty())
    throw ValidationError("summary for " + std::string(to_string(a)) + "/" +
                          std::string(class_tag(v)) + " is empty");
  SlotSummary s{v, a, std::move(text), {}};
  s.sentences = sentence_split(s.text);
  return s;
}

void AspectPrompt::validate() const {
  const auto first = template_text.find(kPlaceholder);
  if (first == std::string::npos ||
      template_text.find(kPlaceholder, first + 1) != std::string::npos)
    throw ValidationError("prompt for aspect '" + std::string(to_string(aspect)) +
                          "' must contain {captions} exactly once");
}

std::string AspectPrompt::render(std::string_view captions) const {
  validate();
  std::string out = template_text;
  out.replace(out.find(kPlaceholder), kPlaceholder.size(), captions);
  return out;
}

std::vector<AspectPrompt> default_prompts() {
  return {
      {Aspect::context,
       "The following are frame-level captions from surveillance videos. "
       "Summarize the overall context of these scenes: time of day, crowd "
       "level and general situation. Answer in short declarative "
       "sentences.\n\nCaptions:\n{captions}",
       {"scene", "time", "morning", "afternoon", "evening", "night", "dawn",
        "daytime", "crowd", "crowded", "busy", "quiet", "empty", "people",
        "few", "many", "weather", "rain", "sunny", "dark", "lighting"}},
      {Aspect::action,
       "The following are frame-level captions from surveillance videos. "
       "Summarize the actions and behaviours of the people in these scenes. "
       "Answer in short declarative sentences.\n\nCaptions:\n{captions}",
       {"walking", "running", "talking", "waiting", "sitting", "standing",
        "jogging", "paying", "browsing", "carrying", "punching", "fighting",
        "stealing", "shooting", "breaking", "kicking", "setting", "vandalizing",
        "chasing", "attacking", "robbing", "falling", "driving", "pushing"}},
      {Aspect::object,
       "The following are frame-level captions from surveillance videos. "
       "Summarize the notable objects present in these scenes, including any "
       "weapons, vehicles or carried items. Answer in short declarative "
       "sentences.\n\nCaptions:\n{captions}",
       {"seen", "visible", "holding", "nearby", "bag", "phone", "bicycle",
        "cup", "umbrella", "backpack", "stroller", "newspaper", "laptop", "gun",
        "handgun", "rifle", "knife", "crowbar", "bat", "gasoline", "glass",
        "mask", "weapon", "car", "vehicle"}},
      {Aspect::environment,
       "The following are frame-level captions from surveillance videos. "
       "Summarize the physical environment of these scenes: the type of "
       "location, indoor or outdoor setting and surroundings. Answer in short "
       "declarative sentences.\n\nCaptions:\n{captions}",
       {"location", "street", "store", "parking", "lot", "subway", "platform",
        "station", "lobby", "mall", "alley", "road", "indoor", "outdoor",
        "building", "shop", "corner", "highway", "office", "residential"}},
  };
}

json prompts_to_json(const std::vector<AspectPrompt> &prompts) {
  json j = json::object();
  for (const auto &p : prompts)
    j[std::string(to_string(p.aspect))] = {{"template", p.template_text},
                                           {"keywords", p.keywords}};
  return j;
}

std::vector<AspectPrompt> prompts_from_json(const json &j) {
  if (!j.is_object())
    throw ValidationError("prompt file must be a JSON object keyed by aspect");
  std::vector<AspectPrompt> out;
  for (Aspect a : kAllAspects) {
    const auto key = std::string(to_string(a));
    if (!j.contains(key))
      throw ValidationError("prompt file lacks aspect '" + key + "'");
    const auto &e = j.at(key);
    if (!e.is_object() || !e.contains("template") || !e["template"].is_string())
      throw ValidationError("prompt '" + key + "' needs a \"template\" string");
    AspectPrompt p{a, e["template"].get<std::string>(), {}};
    if (e.contains("keywords"))
      p.keywords = e["keywords"].get<std::vector<std::string>>();
    for (const auto &[k, _] : e.items())
      if (k != "template" && k != "keywords")
        throw ValidationError("prompt '" + key + "' has unknown key '" + k + "'");
    p.validate();
    out.push_back(std::move(p));
  }
  for (const auto &[k, _] : j.items())
    parse_aspect(k);
  return out;
}

std::vector<AspectPrompt> load_prompts(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open prompt file " + path.string());
  try {
    return prompts_from_json(json::parse(in));
  } catch (const json::exception &e) {
    throw ValidationError("prompt file " + path.string() + ": " + e.what());
  }
}

namespace {

std::string terminated(std::string_view sentence) {
  std::string s(sentence);
  const char last = s.empty() ? '\0' : s.back();
  if (last != '.' && last != '!' && last != '?')
    s += '.';
  return s;
}

std::vector<std::string> caption_lines(const CaptionCorpus &part) {
  std::vector<std::string> lines;
  for (const auto &v : part.videos)
    for (const auto &c : v.captions)
      lines.push_back(c.text);
  return lines;
}

} // namespace

std::string ExtractiveSummarizer::summarize(const CaptionCorpus &part,
                                            const AspectPrompt &prompt, Label) {
  // Every sentence occurrence is one document for IDF.
  std::vector<std::string> docs;
  for (const auto &line : caption_lines(part))
    for (auto &s : sentence_split(line))
      docs.push_back(std::move(s));
  if (docs.empty())
    throw ValidationError("no sentences to summarize");

  // Term statistics over the whole collection: TF is the term's share of
  // all tokens, IDF uses sentences as documents.
  std::unordered_map<std::string, std::size_t> df, cf;
  std::size_t total_tokens = 0;
  std::vector<std::vector<std::string>> doc_tokens;
  doc_tokens.reserve(docs.size());
  for (const auto &d : docs) {
    auto toks = tokenize(d);
    total_tokens += toks.size();
    for (const auto &t : toks)
      ++cf[t];
    std::set<std::string> uniq(toks.begin(), toks.end());
    for (const auto &t : uniq)
      ++df[t];
    doc_tokens.push_back(std::move(toks));
  }
  const double n_docs = static_cast<double>(docs.size());
  const std::unordered_set<std::string> keywords(prompt.keywords.begin(),
                                                 prompt.keywords.end());
  auto term_weight = [&](const std::string &term) {
    const double w = keywords.count(term) ? 1.0 : kNonKeywordWeight;
    const double tf = static_cast<double>(cf.at(term)) / total_tokens;
    const double idf = std::log(n_docs / static_cast<double>(df.at(term)));
    return w * tf * idf;
  };

  struct Candidate {
    std::size_t first;
    const std::string *text;
    double score;
  };
  std::vector<Candidate> cands;
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!seen.insert(docs[i]).second)
      continue;
    const std::set<std::string> terms(doc_tokens[i].begin(), doc_tokens[i].end());
    if (terms.empty())
      continue;
    double total = 0.0;
    for (const auto &term : terms)
      total += term_weight(term);
    cands.push_back({i, &docs[i], total / static_cast<double>(terms.size())});
  }
  if (cands.empty())
    throw ValidationError("no tokenizable sentences to summarize");
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate &a, const Candidate &b) {
                     return a.score > b.score;
                   });
  const std::size_t keep = std::min(kTopSentences, cands.size());
  std::string out;
  for (std::size_t i = 0; i < keep; ++i) {
    if (i)
      out += ' ';
    out += terminated(*cands[i].text);
  }
  return out;
}

std::vector<std::string> chunk_lines(const std::vector<std::string> &lines,
                                     std::size_t budget) {
  std::vector<std::string> chunks;
  std::string cur;
  std::size_t cur_tokens = 0;
  for (const auto &line : lines) {
    const std::size_t n = tokenize(line).size();
    if (!cur.empty() && cur_tokens + n > budget) {
      chunks.push_back(std::move(cur));
      cur.clear();
      cur_tokens = 0;
    }
    if (!cur.empty())
      cur += '\n';
    cur += line;
    cur_tokens += n;
  }
  if (!cur.empty())
    chunks.push_back(std::move(cur));
  return chunks;
}

std::string LlmSummarizer::reduce(std::vector<std::string> pieces,
                                  const AspectPrompt &prompt) {
  for (bool first = true;; first = false) {
    auto chunks = chunk_lines(pieces, chunk_tokens_);
    // summaries that no longer merge would loop forever
    if (!first && chunks.size() >= pieces.size())
      throw Error("chunk summaries do not shrink; raise the chunk budget");
    std::vector<std::string> next;
    for (const auto &chunk : chunks) {
      auto text = std::string(trim(gen_.generate(prompt.render(chunk), max_new_tokens_)));
      if (text.empty())
        throw Error("generator returned an empty summary");
      next.push_back(std::move(text));
    }
    if (next.size() == 1)
      return next.front();
    pieces = std::move(next);
  }
}

std::string LlmSummarizer::summarize(const CaptionCorpus &part,
                                     const AspectPrompt &prompt, Label) {
  auto lines = caption_lines(part);
  if (lines.empty())
    throw ValidationError("no captions to summarize");
  return reduce(std::move(lines), prompt);
}

SlotSummary summarize_aspect(const CaptionCorpus &part,
                             const AspectPrompt &prompt, Label v,
                             Summarizer &backend) {
  const std::string where = std::string(to_string(prompt.aspect)) + "/" +
                            std::string(to_string(v));
  if (part.videos.empty())
    throw ValidationError("cannot summarize " + where + ": corpus is empty");
  prompt.validate();
  std::string text;
  try {
    text = backend.summarize(part, prompt, v);
  } catch (const RetriableError &e) {
    throw RetriableError("summarizing " + where + ": " + e.what(), e.attempts());
  } catch (const Error &e) {
    throw Error("summarizing " + where + ": " + e.what());
  }
  if (trim(text).empty())
    throw Error("summarizing " + where + ": backend returned an empty summary");
  return SlotSummary::make(v, prompt.aspect, std::string(trim(text)));
}

const SlotSummary &KnowledgeBase::slot(Label v, Aspect a) const {
  auto it = slots.find({v, a});
  if (it == slots.end())
    throw ValidationError("knowledge has no slot " + std::string(to_string(a)) +
                          "/" + std::string(class_tag(v)));
  return it->second;
}

const Matrix &KnowledgeBase::prototype(Label v) const {
  auto it = prototypes.find(v);
  if (it == prototypes.end())
    throw ValidationError("knowledge prototypes not populated for class " +
                          std::string(class_tag(v)));
  return it->second;
}

Matrix KnowledgeBase::mean_prototype() const {
  const Matrix &n = prototype(Label::normal);
  const Matrix &a = prototype(Label::abnormal);
  Matrix m(n.rows(), n.cols());
  for (std::size_t i = 0; i < m.size(); ++i)
    m.flat()[i] = 0.5 * (n.flat()[i] + a.flat()[i]);
  return m;
}

std::string KnowledgeBase::knowledge_text(Label v) const {
  std::string out;
  for (std::size_t i = 0; i < aspects.size(); ++i) {
    if (i)
      out += '\n';
    out += slot(v, aspects[i]).text;
  }
  return out;
}

json KnowledgeBase::to_json() const {
  json classes = json::object();
  for (Label v : {Label::normal, Label::abnormal}) {
    json cls = json::object();
    for (Aspect a : aspects) {
      const auto &s = slot(v, a);
      cls[std::string(to_string(a))] = {{"text", s.text},
                                        {"sentences", s.sentences}};
    }
    classes[std::string(class_tag(v))] = std::move(cls);
  }
  json names = json::array();
  for (Aspect a : aspects)
    names.push_back(to_string(a));
  return {{"aspects", names},
          {"classes", classes},
          {"embedder",
           {{"backend", to_string(embedder.backend)},
            {"dim", embedder.dim},
            {"seed", embedder.seed}}}};
}

std::string KnowledgeBase::dump() const { return to_json().dump(2) + "\n"; }

void KnowledgeBase::save(const std::filesystem::path &path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write knowledge file " + path.string());
  out << dump();
}

void populate_embeddings(KnowledgeBase &kb, const Embedder &embedder) {
  if (embedder.dim() != kb.embedder.dim)
    throw ValidationError("embedder dim does not match knowledge dim");
  kb.prototypes.clear();
  kb.sentence_embeddings.clear();
  for (Label v : {Label::normal, Label::abnormal}) {
    Matrix proto(kb.aspects.size(), kb.embedder.dim);
    for (std::size_t s = 0; s < kb.aspects.size(); ++s) {
      const auto &slot = kb.slot(v, kb.aspects[s]);
      const auto pooled = mean_pool(
          embedder.embed_tokens(slot.text, kb.embedder.knowledge_max_tokens));
      std::copy(pooled.begin(), pooled.end(), proto.row_span(s).begin());
      Matrix sent(slot.sentences.size(), kb.embedder.dim);
      for (std::size_t i = 0; i < slot.sentences.size(); ++i) {
        const auto e =
            mean_pool(embedder.embed_tokens(slot.sentences[i], kb.embedder.max_tokens));
        std::copy(e.begin(), e.end(), sent.row_span(i).begin());
      }
      kb.sentence_embeddings.emplace(std::pair{v, kb.aspects[s]}, std::move(sent));
    }
    kb.prototypes.emplace(v, std::move(proto));
  }
}

KnowledgeBase knowledge_from_json(const json &j, const EmbedderConfig &runtime) {
  try {
    for (const auto &[k, _] : j.items())
      if (k != "aspects" && k != "classes" && k != "embedder")
        throw ValidationError("knowledge file has unknown key '" + k + "'");
    KnowledgeBase kb;
    std::vector<Aspect> aspects;
    for (const auto &a : j.at("aspects"))
      aspects.push_back(parse_aspect(a.get<std::string>()));
    kb.aspects = make_aspect_set(aspects);
    if (kb.aspects.empty() || kb.aspects.size() != aspects.size())
      throw ValidationError("knowledge aspects must be non-empty and unique");

    const auto &emb = j.at("embedder");
    kb.embedder = runtime;
    if (parse_backend(emb.at("backend").get<std::string>()) != runtime.backend ||
        emb.at("dim").get<std::size_t>() != runtime.dim ||
        emb.at("seed").get<std::uint64_t>() != runtime.seed)
      throw ValidationError(
          "knowledge file was built with a different embedder (backend/dim/seed)");

    const auto &classes = j.at("classes");
    for (const auto &[k, _] : classes.items())
      parse_class_tag(k);
    for (Label v : {Label::normal, Label::abnormal}) {
      const auto &cls = classes.at(std::string(class_tag(v)));
      if (cls.size() != kb.aspects.size())
        throw ValidationError("knowledge class '" + std::string(class_tag(v)) +
                              "' slots do not match the aspect list");
      for (Aspect a : kb.aspects) {
        const auto &s = cls.at(std::string(to_string(a)));
        auto slot = SlotSummary::make(v, a, s.at("text").get<std::string>());
        if (s.contains("sentences") &&
            s["sentences"].get<std::vector<std::string>>() != slot.sentences)
          throw ValidationError("knowledge slot " + std::string(to_string(a)) +
                                "/" + std::string(class_tag(v)) +
                                ": sentences do not match its text");
        kb.slots.emplace(std::pair{v, a}, std::move(slot));
      }
    }
    populate_embeddings(kb, *make_embedder(kb.embedder));
    return kb;
  } catch (const json::exception &e) {
    throw ValidationError(std::string("knowledge file: ") + e.what());
  }
}

KnowledgeBase load_knowledge(const std::filesystem::path &path,
                             const EmbedderConfig &runtime) {
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open knowledge file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ValidationError("knowledge file " + path.string() + ": " + e.what());
  }
  return knowledge_from_json(j, runtime);
}

KnowledgeBase build_knowledge(const CaptionCorpus &normal,
                              const CaptionCorpus &abnormal,
                              const std::vector<AspectPrompt> &prompts,
                              const EmbedderConfig &cfg, const AspectSet &active,
                              Summarizer &backend) {
  if (normal.videos.empty() || abnormal.videos.empty())
    throw ValidationError("knowledge needs both normal and abnormal captions");
  if (active.empty())
    throw ValidationError("at least one aspect must be active");
  cfg.validate();

  KnowledgeBase kb;
  kb.aspects = make_aspect_set(active);
  kb.embedder = cfg;

  auto prompt_for = [&](Aspect a) -> const AspectPrompt & {
    for (const auto &p : prompts)
      if (p.aspect == a)
        return p;
    throw ValidationError("no prompt for aspect " + std::string(to_string(a)));
  };

  // One job per (class, aspect); at most 8 exist, all run concurrently.
  std::vector<std::future<SlotSummary>> jobs;
  for (Label v : {Label::normal, Label::abnormal})
    for (Aspect a : kb.aspects) {
      const CaptionCorpus &part = v == Label::normal ? normal : abnormal;
      const AspectPrompt &p = prompt_for(a);
      jobs.push_back(std::async(std::launch::async, [&part, &p, v, &backend] {
        return summarize_aspect(part, p, v, backend);
      }));
    }
  std::vector<SlotSummary> done;
  std::exception_ptr first_error;
  for (auto &j : jobs) {
    try {
      done.push_back(j.get());
    } catch (...) {
      if (!first_error)
        first_error = std::current_exception();
    }
  }
  if (first_error)
    std::rethrow_exception(first_error);
  for (auto &s : done)
    kb.slots.emplace(std::pair{s.class_v, s.aspect}, std::move(s));

  populate_embeddings(kb, *make_embedder(cfg));
  return kb;
}

Vector pooled_knowledge(const KnowledgeBase &kb, Label v,
                        const Embedder &embedder) {
  const auto text = kb.knowledge_text(v);
  if (trim(text).empty())
    throw ValidationError("knowledge text is empty");
  return mean_pool(embedder.embed_tokens(text, kb.embedder.knowledge_max_tokens));
}

Vector encode_knowledge(const KnowledgeBase &kb, Label v, const Matrix &w_v,
                        std::span<const double> b_v, const Embedder &embedder) {
  if (!w_v.all_finite())
    throw ValidationError("W_V holds non-finite values");
  const auto pooled = pooled_knowledge(kb, v, embedder);
  auto out = kernels::matvec(w_v, pooled);
  if (b_v.size() != out.size())
    throw ValidationError("b_V length does not match W_V rows");
  axpy(1.0, b_v, out);
  return out;
}

} // namespace tbvad
