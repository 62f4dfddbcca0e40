#include <doctest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "tbvad/encoder.hpp"
#include "tbvad/error.hpp"
#include "tbvad/kernels.hpp"

using namespace tbvad;
using testing::random_matrix;

namespace {

EncoderConfig small_cfg(std::size_t layers) {
  EncoderConfig c;
  c.num_layers = layers;
  c.num_heads = 2;
  c.d_model = 8;
  c.ff_dim = 16;
  c.d_latent = 6;
  return c;
}

// Random everything, including layer-norm gains and biases.
EncoderParams random_params(const EncoderConfig &cfg, std::uint64_t seed) {
  Rng rng(seed);
  auto p = EncoderParams::init(cfg, rng);
  p.visit([&](const std::string &, Matrix &m, bool) {
    for (double &v : m.flat())
      v += rng.uniform(-0.2, 0.2);
  });
  return p;
}

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Matrix &m) {
  Rows r(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      r[i][j] = m(i, j);
  return r;
}

// out[t][j] = sum_i in[t][i] * w(i, j) + b(0, j)
Rows affine(const Rows &in, const Matrix &w, const Matrix &b) {
  Rows out(in.size(), std::vector<double>(w.cols()));
  for (std::size_t t = 0; t < in.size(); ++t)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (std::size_t i = 0; i < w.rows(); ++i)
        s += in[t][i] * w(i, j);
      out[t][j] = s;
    }
  return out;
}

Rows norm_rows(const Rows &in, const Matrix &g, const Matrix &b) {
  Rows out = in;
  for (std::size_t t = 0; t < in.size(); ++t) {
    const double n = static_cast<double>(in[t].size());
    double mu = 0;
    for (double v : in[t])
      mu += v / n;
    double var = 0;
    for (double v : in[t])
      var += (v - mu) * (v - mu) / n;
    for (std::size_t j = 0; j < in[t].size(); ++j)
      out[t][j] = g(0, j) * (in[t][j] - mu) / std::sqrt(var + 1e-5) + b(0, j);
  }
  return out;
}

double gelu_tanh(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * std::pow(x, 3))));
}

// One pre-LN layer, one head at a time, no shared helpers with the library.
Rows reference_layer(const Rows &z, const EncoderLayer &L, std::size_t heads) {
  const std::size_t T = z.size(), d = z[0].size(), dh = d / heads;
  const Rows a = norm_rows(z, L.ln1_gain, L.ln1_bias);
  const Rows q = affine(a, L.wq, L.bq), k = affine(a, L.wk, L.bk), v = affine(a, L.wv, L.bv);
  Rows concat(T, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> e(T);
      double total = 0;
      for (std::size_t j = 0; j < T; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dh; ++c)
          s += q[i][h * dh + c] * k[j][h * dh + c];
        e[j] = std::exp(s / std::sqrt(static_cast<double>(dh)));
        total += e[j];
      }
      for (std::size_t j = 0; j < T; ++j)
        for (std::size_t c = 0; c < dh; ++c)
          concat[i][h * dh + c] += e[j] / total * v[j][h * dh + c];
    }
  Rows r1 = affine(concat, L.wo, L.bo);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j)
      r1[t][j] += z[t][j];
  Rows hid = affine(norm_rows(r1, L.ln2_gain, L.ln2_bias), L.w1, L.b1);
  for (auto &row : hid)
    for (double &x : row)
      x = gelu_tanh(x);
  Rows out = affine(hid, L.w2, L.b2);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j)
      out[t][j] += r1[t][j];
  return out;
}

} // namespace

TEST_CASE("empty stack is the identity") {
  auto cfg = small_cfg(0);
  Rng rng(1);
  const auto p = EncoderParams::init(cfg, rng);
  const TokenEmbeddingSeq x(random_matrix(5, 8, rng));
  const auto h = encode_descriptions(x, p);
  CHECK(h.vectors == x.vectors);
  CHECK(h.mask == x.mask);
}

TEST_CASE("single token") {
  auto cfg = small_cfg(2);
  const auto p = random_params(cfg, 2);
  Rng rng(3);
  const auto h = encode_descriptions(TokenEmbeddingSeq(random_matrix(1, 8, rng)), p);
  CHECK(h.length() == 1);
  CHECK(h.vectors.all_finite());
}

TEST_CASE("shape is preserved for any depth") {
  Rng rng(4);
  const TokenEmbeddingSeq x(random_matrix(7, 8, rng));
  for (std::size_t l = 0; l <= 3; ++l) {
    const auto h = encode_descriptions(x, random_params(small_cfg(l), 10 + l));
    CHECK(h.length() == 7);
    CHECK(h.dim() == 8);
  }
}

TEST_CASE("one layer matches a per-head reference") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = small_cfg(1);
    const auto p = random_params(cfg, 100 + seed);
    Rng rng(seed);
    const TokenEmbeddingSeq x(random_matrix(4, 8, rng));
    const auto h = encode_descriptions(x, p);

    Rows z = to_rows(x.vectors);
    const Matrix pe = positional_encoding(4, 8);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < 8; ++j) {
        const double angle = static_cast<double>(t) /
                             std::pow(10000.0, static_cast<double>(j - j % 2) / 8.0);
        CHECK(pe(t, j) == doctest::Approx(j % 2 ? std::cos(angle) : std::sin(angle)));
        z[t][j] = std::sqrt(8.0) * z[t][j] + (j % 2 ? std::cos(angle) : std::sin(angle));
      }
    const Rows want = reference_layer(z, p.layers[0], 2);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < 8; ++j)
        CHECK(std::abs(h.vectors(t, j) - want[t][j]) <= 1e-8);
  }
}

TEST_CASE("padding rows do not affect real rows") {
  auto cfg = small_cfg(2);
  const auto p = random_params(cfg, 7);
  Rng rng(8);
  Matrix m = random_matrix(5, 8, rng);
  const auto padded = encode_descriptions(TokenEmbeddingSeq(m, {1, 1, 1, 0, 0}), p);
  Matrix other = m;
  for (std::size_t j = 0; j < 8; ++j)
    other(4, j) = 42.0;
  const auto changed = encode_descriptions(TokenEmbeddingSeq(other, {1, 1, 1, 0, 0}), p);
  CHECK(padded.vectors == changed.vectors);
  for (std::size_t j = 0; j < 8; ++j)
    CHECK(padded.vectors(3, j) == 0.0);
  CHECK_THROWS_AS(encode_descriptions(TokenEmbeddingSeq(m, {0, 0, 0, 0, 0}), p),
                  ValidationError);
  CHECK_THROWS_AS(encode_descriptions(TokenEmbeddingSeq(random_matrix(3, 5, rng)), p),
                  ValidationError);
}

TEST_CASE("deterministic and position sensitive") {
  auto cfg = small_cfg(2);
  const auto p = random_params(cfg, 9);
  Rng rng(10);
  const Matrix m = random_matrix(4, 8, rng);
  const auto a = encode_descriptions(TokenEmbeddingSeq(m), p);
  CHECK(encode_descriptions(TokenEmbeddingSeq(m), p).vectors == a.vectors);

  Matrix swapped = m;
  for (std::size_t j = 0; j < 8; ++j)
    std::swap(swapped(0, j), swapped(2, j));
  const auto b = encode_descriptions(TokenEmbeddingSeq(swapped), p);
  double diff = 0;
  for (std::size_t j = 0; j < 8; ++j)
    diff += std::abs(b.vectors(2, j) - a.vectors(0, j));
  CHECK(diff > 1e-6);
}

TEST_CASE("layer norm rows are centred") {
  Rng rng(11);
  const Matrix x = random_matrix(6, 8, rng, 5.0);
  Matrix xhat;
  Vector rstd;
  detail::layer_norm(x, Matrix(1, 8, 1.0), Matrix(1, 8, 0.0), xhat, rstd);
  for (std::size_t t = 0; t < 6; ++t) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j)
      mean += xhat(t, j) / 8.0;
    for (std::size_t j = 0; j < 8; ++j)
      var += (xhat(t, j) - mean) * (xhat(t, j) - mean) / 8.0;
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("project_description") {
  auto cfg = small_cfg(0);
  cfg.d_model = 2;
  cfg.num_heads = 1;
  cfg.d_latent = 2;
  auto p = EncoderParams::zeros(cfg);
  p.w_d = Matrix::identity(2);
  CHECK(project_description(TokenEmbeddingSeq(Matrix{{0.5, -3}}), p) == Vector{0.5, -3});
  p.b_d = Matrix{{1, 1}};
  CHECK(project_description(TokenEmbeddingSeq(Matrix{{2, 0}, {0, 2}}), p) == Vector{2, 2});
  CHECK_THROWS_AS(project_description(TokenEmbeddingSeq(Matrix{{2, 0}}, {false}), p),
                  ValidationError);

  const auto q = random_params(small_cfg(1), 12);
  Rng rng(13);
  const TokenEmbeddingSeq h(random_matrix(5, 8, rng));
  const auto got = project_description(h, q);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = q.b_d(0, i);
    for (std::size_t j = 0; j < 8; ++j) {
      double mean = 0;
      for (std::size_t t = 0; t < 5; ++t)
        mean += h.vectors(t, j) / 5.0;
      s += q.w_d(i, j) * mean;
    }
    CHECK(std::abs(got[i] - s) <= 1e-10);
  }
}

TEST_CASE("encoder gradients match central differences") {
  for (std::size_t layers : {1, 2}) {
    auto cfg = small_cfg(layers);
    auto p = random_params(cfg, 20 + layers);
    Rng rng(30 + layers);
    const TokenEmbeddingSeq x(random_matrix(4, 8, rng), {1, 1, 1, layers == 1});
    const Vector c = [&] {
      Vector v(6);
      for (double &e : v)
        e = rng.uniform(-1, 1);
      return v;
    }();
    auto loss = [&](const EncoderParams &q) {
      return dot(c, project_description(encode_descriptions(x, q), q));
    };

    EncoderCache cache;
    const auto h = encode_descriptions(x, p, &cache);
    const Vector dpool = reference::matvec_t(p.w_d, c);
    Matrix dh(4, 8);
    for (std::size_t t = 0; t < 4; ++t)
      if (h.mask[t])
        axpy(1.0 / static_cast<double>(h.active()), dpool, dh.row_span(t));
    auto grads = EncoderParams::zeros(cfg);
    encode_descriptions_backward(cache, p, dh, grads);
    // the projection is outside the layer stack
    const Vector pooled = mean_pool(h);
    for (std::size_t i = 0; i < 6; ++i) {
      axpy(c[i], pooled, grads.w_d.row_span(i));
      grads.b_d(0, i) = c[i];
    }

    std::vector<Matrix *> analytic;
    grads.visit([&](const std::string &, Matrix &m, bool) { analytic.push_back(&m); });
    std::size_t k = 0;
    p.visit([&](const std::string &name, Matrix &m, bool) {
      double diff2 = 0, a2 = 0, n2 = 0;
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double saved = m.flat()[i];
        m.flat()[i] = saved + 1e-5;
        const double up = loss(p);
        m.flat()[i] = saved - 1e-5;
        const double down = loss(p);
        m.flat()[i] = saved;
        const double num = (up - down) / 2e-5;
        const double an = analytic[k]->flat()[i];
        diff2 += (num - an) * (num - an);
        a2 += an * an;
        n2 += num * num;
      }
      const double rel = std::sqrt(diff2) /
                         std::max({std::sqrt(a2), std::sqrt(n2), testing::kZeroGradientFloor});
      INFO(layers << " layers, " << name);
      CHECK(rel <= 1e-4);
      ++k;
    });
  }
}
