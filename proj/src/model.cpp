// SPDX-License-Identifier: Apache-2.0
#include "tbvad/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tbvad/error.hpp"
#include "tbvad/hashing.hpp"

namespace tbvad {

using nlohmann::json;

namespace {
constexpr std::string_view kMagic = "TBVADMDL";
constexpr std::string_view kDtype = "float64-le";

std::string_view to_string(AttentionNorm n) {
  return n == AttentionNorm::none ? "none" : "row_softmax";
}
AttentionNorm parse_norm(std::string_view s) {
  if (s == "none")
    return AttentionNorm::none;
  if (s == "row_softmax")
    return AttentionNorm::row_softmax;
  throw ValidationError("unknown attention normalisation '" + std::string(s) + "'");
}
} // namespace

void ModelConfig::validate() const {
  encoder.validate();
  if (embed_dim != encoder.d_model)
    throw ValidationError("embedding dim (" + std::to_string(embed_dim) +
                          ") must equal d_model (" +
                          std::to_string(encoder.d_model) + ")");
  if (importance_hidden == 0)
    throw ValidationError("importance_hidden must be positive");
  if (aspects.empty())
    throw ValidationError("model needs at least one active aspect");
  if (frames == 0)
    throw ValidationError("frame count must be positive");
}

json ModelConfig::to_json() const {
  json names = json::array();
  for (Aspect a : aspects)
    names.push_back(tbvad::to_string(a));
  return {{"num_layers", encoder.num_layers},
          {"num_heads", encoder.num_heads},
          {"d_model", encoder.d_model},
          {"ff_dim", encoder.ff_dim},
          {"d_latent", encoder.d_latent},
          {"importance_hidden", importance_hidden},
          {"aspects", names},
          {"frames", frames},
          {"attention", to_string(attention)},
          {"init_seed", init_seed},
          {"train_seed", train_seed},
          {"embedder",
           {{"backend", tbvad::to_string(embed_backend)},
            {"dim", embed_dim},
            {"seed", embed_seed}}}};
}

ModelConfig ModelConfig::from_json(const json &j) {
  ModelConfig c;
  c.encoder.num_layers = j.at("num_layers").get<std::size_t>();
  c.encoder.num_heads = j.at("num_heads").get<std::size_t>();
  c.encoder.d_model = j.at("d_model").get<std::size_t>();
  c.encoder.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.encoder.d_latent = j.at("d_latent").get<std::size_t>();
  c.importance_hidden = j.at("importance_hidden").get<std::size_t>();
  std::vector<Aspect> aspects;
  for (const auto &a : j.at("aspects"))
    aspects.push_back(parse_aspect(a.get<std::string>()));
  c.aspects = make_aspect_set(aspects);
  c.frames = j.at("frames").get<std::size_t>();
  c.attention = parse_norm(j.at("attention").get<std::string>());
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  c.train_seed = j.at("train_seed").get<std::uint64_t>();
  const auto &e = j.at("embedder");
  c.embed_backend = parse_backend(e.at("backend").get<std::string>());
  c.embed_dim = e.at("dim").get<std::size_t>();
  c.embed_seed = e.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

ModelParams ModelParams::zeros(const ModelConfig &cfg) {
  cfg.validate();
  ModelParams m;
  m.config = cfg;
  m.encoder = EncoderParams::zeros(cfg.encoder);
  const std::size_t dl = cfg.encoder.d_latent;
  m.w_v = Matrix(dl, cfg.embed_dim);
  m.b_v = Matrix(1, dl);
  m.fusion_w = Matrix(1, 2 * dl);
  m.fusion_b = Matrix(1, 1);
  m.importance = ImportanceNet::zeros(cfg.encoder.d_model, cfg.importance_hidden);
  m.gate = Matrix(1, 1);
  return m;
}

ModelParams ModelParams::init(const ModelConfig &cfg) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  ModelParams m = zeros(cfg);
  m.encoder = EncoderParams::init(cfg.encoder, rng);
  const double bv = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  for (double &x : m.w_v.flat())
    x = rng.uniform(-bv, bv);
  const double bf = 1.0 / std::sqrt(static_cast<double>(m.fusion_w.cols()));
  for (double &x : m.fusion_w.flat())
    x = rng.uniform(-bf, bf);
  m.importance =
      ImportanceNet::init(cfg.encoder.d_model, cfg.importance_hidden, rng);
  return m;
}

std::vector<TensorRef> ModelParams::tensors() {
  std::vector<TensorRef> out;
  auto add = [&out](const std::string &name, Matrix &t, bool decay) {
    out.push_back({name, &t, decay});
  };
  encoder.visit(add);
  add("knowledge.w_v", w_v, true);
  add("knowledge.b_v", b_v, false);
  add("fusion.w", fusion_w, true);
  add("fusion.b", fusion_b, false);
  importance.visit(add);
  add("importance.gate", gate, false);
  return out;
}

std::vector<std::pair<std::string, const Matrix *>> ModelParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix *>> out;
  for (auto &t : const_cast<ModelParams *>(this)->tensors())
    out.emplace_back(t.name, t.tensor);
  return out;
}

bool ModelParams::all_finite() const {
  for (const auto &[_, t] : tensors())
    if (!t->all_finite())
      return false;
  return true;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto &[_, t] : tensors())
    n += t->size();
  return n;
}

std::string ModelParams::digest() const { return sha256_hex(serialize_model(*this)); }

namespace {

template <class T> void put_le(std::string &out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

class Reader {
public:
  explicit Reader(std::string_view b) : bytes_(b) {}
  template <class T> T get(const char *what) {
    need(sizeof(T), what);
    std::array<char, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(raw.begin(), raw.end());
    pos_ += sizeof(T);
    return std::bit_cast<T>(raw);
  }
  std::string_view take(std::size_t n, const char *what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n, const char *what) {
    if (bytes_.size() - pos_ < n)
      throw CorruptFileError(std::string("model file truncated while reading ") +
                                 what,
                             pos_);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

} // namespace

std::string serialize_model(const ModelParams &m) {
  const auto tensors = m.tensors();
  json listing = json::array();
  for (const auto &[name, t] : tensors)
    listing.push_back({{"name", name}, {"rows", t->rows()}, {"cols", t->cols()}});
  const json header = {{"format_version", kModelFormatVersion},
                       {"dtype", kDtype},
                       {"config", m.config.to_json()},
                       {"tensors", listing}};
  const std::string head = header.dump();

  std::string out(kMagic);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(head.size()));
  out += head;
  for (const auto &[name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint64_t>(out, t->rows());
    put_le<std::uint64_t>(out, t->cols());
    for (double v : t->flat())
      put_le<double>(out, v);
  }
  return out;
}

ModelParams deserialize_model(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size(), "magic") != kMagic)
    throw CorruptFileError("not a model file (bad magic)", 0);
  const auto head_len = r.get<std::uint32_t>("header length");
  const std::size_t head_at = r.pos();
  const auto head_text = r.take(head_len, "header");
  json header;
  try {
    header = json::parse(head_text);
  } catch (const json::parse_error &e) {
    throw CorruptFileError(std::string("model header is not valid JSON: ") + e.what(),
                           head_at);
  }
  if (!header.contains("format_version") || !header["format_version"].is_number_integer())
    throw CorruptFileError("model header lacks format_version", head_at);
  const int version = header["format_version"].get<int>();
  if (version != kModelFormatVersion)
    throw ValidationError("model format version " + std::to_string(version) +
                          " is not supported (expected " +
                          std::to_string(kModelFormatVersion) + ")");
  if (header.value("dtype", "") != kDtype)
    throw ValidationError("unsupported model dtype");

  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(header.at("config"));
  } catch (const json::exception &e) {
    throw CorruptFileError(std::string("model config: ") + e.what(), head_at);
  }
  ModelParams m = ModelParams::zeros(cfg);
  for (auto &t : m.tensors()) {
    const std::size_t at = r.pos();
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    const auto name = r.take(name_len, "tensor name");
    if (name != t.name)
      throw CorruptFileError("expected tensor '" + t.name + "', found '" +
                                 std::string(name) + "'",
                             at);
    const auto rows = r.get<std::uint64_t>("tensor rows");
    const auto cols = r.get<std::uint64_t>("tensor cols");
    if (rows != t.tensor->rows() || cols != t.tensor->cols())
      throw CorruptFileError("tensor '" + t.name + "' has unexpected shape", at);
    for (double &v : t.tensor->flat())
      v = r.get<double>("tensor values");
  }
  if (!r.done())
    throw CorruptFileError("trailing bytes after last tensor", r.pos());
  return m;
}

void save_model(const ModelParams &m, const std::filesystem::path &path) {
  const auto bytes = serialize_model(m);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error("cannot write model file " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw Error("short write to model file " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelParams load_model(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot open model file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

} // namespace tbvad
