// SPDX-License-Identifier: Apache-2.0
#include "tbvad/encoder.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "tbvad/error.hpp"
#include "tbvad/kernels.hpp"

namespace tbvad {

void EncoderConfig::validate() const {
  if (num_heads == 0 || d_model == 0 || ff_dim == 0 || d_latent == 0)
    throw ValidationError("encoder sizes must be positive");
  if (d_model % num_heads != 0)
    throw ValidationError("d_model (" + std::to_string(d_model) +
                          ") must be divisible by num_heads (" +
                          std::to_string(num_heads) + ")");
}

EncoderParams EncoderParams::zeros(const EncoderConfig &cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, f = cfg.ff_dim;
  EncoderParams p;
  p.config = cfg;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    EncoderLayer L;
    L.ln1_gain = Matrix(1, d);
    L.ln1_bias = Matrix(1, d);
    L.wq = Matrix(d, d);
    L.bq = Matrix(1, d);
    L.wk = Matrix(d, d);
    L.bk = Matrix(1, d);
    L.wv = Matrix(d, d);
    L.bv = Matrix(1, d);
    L.wo = Matrix(d, d);
    L.bo = Matrix(1, d);
    L.ln2_gain = Matrix(1, d);
    L.ln2_bias = Matrix(1, d);
    L.w1 = Matrix(d, f);
    L.b1 = Matrix(1, f);
    L.w2 = Matrix(f, d);
    L.b2 = Matrix(1, d);
    p.layers.push_back(std::move(L));
  }
  p.w_d = Matrix(cfg.d_latent, d);
  p.b_d = Matrix(1, cfg.d_latent);
  return p;
}

namespace {
void uniform_fill(Matrix &m, std::size_t fan_in, Rng &rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double &x : m.flat())
    x = rng.uniform(-bound, bound);
}
} // namespace

EncoderParams EncoderParams::init(const EncoderConfig &cfg, Rng &rng) {
  EncoderParams p = zeros(cfg);
  const std::size_t d = cfg.d_model, f = cfg.ff_dim;
  for (auto &L : p.layers) {
    L.ln1_gain.fill(1.0);
    L.ln2_gain.fill(1.0);
    uniform_fill(L.wq, d, rng);
    uniform_fill(L.wk, d, rng);
    uniform_fill(L.wv, d, rng);
    uniform_fill(L.wo, d, rng);
    uniform_fill(L.w1, d, rng);
    uniform_fill(L.w2, f, rng);
  }
  uniform_fill(p.w_d, d, rng);
  return p;
}

void EncoderParams::visit(const Visitor &fn) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto &L = layers[l];
    const std::string pre = "encoder.layer" + std::to_string(l) + ".";
    fn(pre + "ln1_gain", L.ln1_gain, false);
    fn(pre + "ln1_bias", L.ln1_bias, false);
    fn(pre + "wq", L.wq, true);
    fn(pre + "bq", L.bq, false);
    fn(pre + "wk", L.wk, true);
    fn(pre + "bk", L.bk, false);
    fn(pre + "wv", L.wv, true);
    fn(pre + "bv", L.bv, false);
    fn(pre + "wo", L.wo, true);
    fn(pre + "bo", L.bo, false);
    fn(pre + "ln2_gain", L.ln2_gain, false);
    fn(pre + "ln2_bias", L.ln2_bias, false);
    fn(pre + "w1", L.w1, true);
    fn(pre + "b1", L.b1, false);
    fn(pre + "w2", L.w2, true);
    fn(pre + "b2", L.b2, false);
  }
  fn("encoder.w_d", w_d, true);
  fn("encoder.b_d", b_d, false);
}

Matrix positional_encoding(std::size_t length, std::size_t dim) {
  Matrix pe(length, dim);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t i = 0; i < dim; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(t) / std::pow(10000.0, expo);
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

namespace detail {

double gelu(double x) {
  constexpr double c = 0.7978845608028654; // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) +
         0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

Matrix layer_norm(const Matrix &x, const Matrix &gain, const Matrix &bias,
                  Matrix &xhat, Vector &rstd) {
  const std::size_t T = x.rows(), d = x.cols();
  Matrix y(T, d);
  xhat = Matrix(T, d);
  rstd.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      mu += x(t, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      var += (x(t, j) - mu) * (x(t, j) - mu);
    var /= static_cast<double>(d);
    rstd[t] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(t, j) = (x(t, j) - mu) * rstd[t];
      y(t, j) = gain(0, j) * xhat(t, j) + bias(0, j);
    }
  }
  return y;
}

} // namespace detail

namespace {

void add_row_bias(Matrix &m, const Matrix &bias) {
  for (std::size_t t = 0; t < m.rows(); ++t)
    axpy(1.0, bias.flat(), m.row_span(t));
}

void add_colsum(const Matrix &m, Matrix &into) {
  for (std::size_t t = 0; t < m.rows(); ++t)
    axpy(1.0, m.row_span(t), into.flat());
}

void add_into(Matrix &dst, const Matrix &src) { axpy(1.0, src.flat(), dst.flat()); }

void zero_masked(Matrix &m, const std::vector<bool> &mask) {
  for (std::size_t t = 0; t < m.rows(); ++t)
    if (!mask[t])
      for (double &x : m.row_span(t))
        x = 0.0;
}

Matrix layer_norm_backward(const Matrix &dy, const Matrix &xhat,
                           const Vector &rstd, const Matrix &gain,
                           Matrix &dgain, Matrix &dbias) {
  const std::size_t T = dy.rows(), d = dy.cols();
  Matrix dx(T, d);
  Vector dxhat(d);
  for (std::size_t t = 0; t < T; ++t) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgain(0, j) += dy(t, j) * xhat(t, j);
      dbias(0, j) += dy(t, j);
      dxhat[j] = dy(t, j) * gain(0, j);
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat(t, j);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      dx(t, j) = rstd[t] * (dxhat[j] - mean_dxhat - xhat(t, j) * mean_dxhat_xhat);
  }
  return dx;
}

Matrix head_slice(const Matrix &m, std::size_t h, std::size_t dh) {
  Matrix out(m.rows(), dh);
  for (std::size_t t = 0; t < m.rows(); ++t)
    for (std::size_t j = 0; j < dh; ++j)
      out(t, j) = m(t, h * dh + j);
  return out;
}

Matrix layer_forward(const Matrix &z, const EncoderLayer &L,
                     const EncoderConfig &cfg, const std::vector<bool> &mask,
                     EncoderCache::Layer &c) {
  const std::size_t T = z.rows(), d = cfg.d_model, H = cfg.num_heads,
                    dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.input = z;
  c.ln1_out = detail::layer_norm(z, L.ln1_gain, L.ln1_bias, c.ln1_xhat, c.ln1_rstd);
  c.q = kernels::matmul(c.ln1_out, L.wq);
  add_row_bias(c.q, L.bq);
  c.k = kernels::matmul(c.ln1_out, L.wk);
  add_row_bias(c.k, L.bk);
  c.v = kernels::matmul(c.ln1_out, L.wv);
  add_row_bias(c.v, L.bv);

  c.attn_concat = Matrix(T, d);
  c.probs.assign(H, Matrix());
  for (std::size_t h = 0; h < H; ++h) {
    const Matrix qh = head_slice(c.q, h, dh), kh = head_slice(c.k, h, dh),
                 vh = head_slice(c.v, h, dh);
    Matrix s = kernels::matmul_nt(qh, kh);
    for (std::size_t i = 0; i < T; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < T; ++j) {
        s(i, j) = mask[j] ? s(i, j) * scale
                          : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, s(i, j));
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        s(i, j) = mask[j] ? std::exp(s(i, j) - mx) : 0.0;
        sum += s(i, j);
      }
      for (std::size_t j = 0; j < T; ++j)
        s(i, j) /= sum;
    }
    const Matrix oh = kernels::matmul(s, vh);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < dh; ++j)
        c.attn_concat(t, h * dh + j) = oh(t, j);
    c.probs[h] = std::move(s);
  }
  Matrix attn = kernels::matmul(c.attn_concat, L.wo);
  add_row_bias(attn, L.bo);
  c.resid1 = z;
  add_into(c.resid1, attn);

  c.ln2_out = detail::layer_norm(c.resid1, L.ln2_gain, L.ln2_bias, c.ln2_xhat,
                                 c.ln2_rstd);
  c.ff_pre = kernels::matmul(c.ln2_out, L.w1);
  add_row_bias(c.ff_pre, L.b1);
  c.ff_act = c.ff_pre;
  for (double &x : c.ff_act.flat())
    x = detail::gelu(x);
  Matrix ff = kernels::matmul(c.ff_act, L.w2);
  add_row_bias(ff, L.b2);

  Matrix out = c.resid1;
  add_into(out, ff);
  zero_masked(out, mask);
  return out;
}

// Returns dL/d(layer input).
Matrix layer_backward(const Matrix &dout_in, const EncoderLayer &L,
                      const EncoderConfig &cfg, const std::vector<bool> &mask,
                      const EncoderCache::Layer &c, EncoderLayer &g) {
  const std::size_t T = dout_in.rows(), d = cfg.d_model, H = cfg.num_heads,
                    dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dout = dout_in;
  zero_masked(dout, mask);

  // feed-forward block
  add_into(g.w2, kernels::matmul_tn(c.ff_act, dout));
  add_colsum(dout, g.b2);
  Matrix dact = kernels::matmul_nt(dout, L.w2);
  for (std::size_t i = 0; i < dact.size(); ++i)
    dact.flat()[i] *= detail::gelu_grad(c.ff_pre.flat()[i]);
  add_into(g.w1, kernels::matmul_tn(c.ln2_out, dact));
  add_colsum(dact, g.b1);
  const Matrix dln2 = kernels::matmul_nt(dact, L.w1);
  Matrix dresid1 = dout;
  add_into(dresid1, layer_norm_backward(dln2, c.ln2_xhat, c.ln2_rstd,
                                        L.ln2_gain, g.ln2_gain, g.ln2_bias));

  // attention block
  add_into(g.wo, kernels::matmul_tn(c.attn_concat, dresid1));
  add_colsum(dresid1, g.bo);
  const Matrix dconcat = kernels::matmul_nt(dresid1, L.wo);
  Matrix dq(T, d), dk(T, d), dv(T, d);
  for (std::size_t h = 0; h < H; ++h) {
    const Matrix &p = c.probs[h];
    const Matrix qh = head_slice(c.q, h, dh), kh = head_slice(c.k, h, dh),
                 vh = head_slice(c.v, h, dh), doh = head_slice(dconcat, h, dh);
    Matrix dp = kernels::matmul_nt(doh, vh);
    const Matrix dvh = kernels::matmul_tn(p, doh);
    for (std::size_t i = 0; i < T; ++i) {
      double rs = 0.0;
      for (std::size_t j = 0; j < T; ++j)
        rs += dp(i, j) * p(i, j);
      for (std::size_t j = 0; j < T; ++j)
        dp(i, j) = p(i, j) * (dp(i, j) - rs) * scale;
    }
    const Matrix dqh = kernels::matmul(dp, kh);
    const Matrix dkh = kernels::matmul_tn(dp, qh);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < dh; ++j) {
        dq(t, h * dh + j) = dqh(t, j);
        dk(t, h * dh + j) = dkh(t, j);
        dv(t, h * dh + j) = dvh(t, j);
      }
  }
  add_into(g.wq, kernels::matmul_tn(c.ln1_out, dq));
  add_colsum(dq, g.bq);
  add_into(g.wk, kernels::matmul_tn(c.ln1_out, dk));
  add_colsum(dk, g.bk);
  add_into(g.wv, kernels::matmul_tn(c.ln1_out, dv));
  add_colsum(dv, g.bv);
  Matrix dln1 = kernels::matmul_nt(dq, L.wq);
  add_into(dln1, kernels::matmul_nt(dk, L.wk));
  add_into(dln1, kernels::matmul_nt(dv, L.wv));

  Matrix din = dresid1;
  add_into(din, layer_norm_backward(dln1, c.ln1_xhat, c.ln1_rstd, L.ln1_gain,
                                    g.ln1_gain, g.ln1_bias));
  return din;
}

} // namespace

TokenEmbeddingSeq encode_descriptions(const TokenEmbeddingSeq &x,
                                      const EncoderParams &params,
                                      EncoderCache *cache) {
  const auto &cfg = params.config;
  if (x.dim() != cfg.d_model)
    throw ValidationError("encoder input dim " + std::to_string(x.dim()) +
                          " does not match d_model " +
                          std::to_string(cfg.d_model));
  if (x.length() == 0)
    throw ValidationError("encoder input has no rows");
  if (x.active() == 0)
    throw ValidationError("encoder input is fully masked");

  if (cache) {
    cache->layers.assign(params.layers.size(), {});
    cache->mask = x.mask;
  }
  if (params.layers.empty())
    return x;

  Matrix z = x.vectors;
  const double emb_scale = std::sqrt(static_cast<double>(cfg.d_model));
  const Matrix pe = positional_encoding(x.length(), cfg.d_model);
  for (std::size_t i = 0; i < z.size(); ++i)
    z.flat()[i] = emb_scale * z.flat()[i] + pe.flat()[i];
  zero_masked(z, x.mask);

  EncoderCache::Layer scratch;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto &c = cache ? cache->layers[l] : scratch;
    z = layer_forward(z, params.layers[l], cfg, x.mask, c);
    if (!z.all_finite())
      throw Error("non-finite value in encoder layer " + std::to_string(l + 1));
  }
  return TokenEmbeddingSeq(std::move(z), x.mask);
}

void encode_descriptions_backward(const EncoderCache &cache,
                                  const EncoderParams &params,
                                  const Matrix &grad_out, EncoderParams &grads) {
  Matrix d = grad_out;
  for (std::size_t l = params.layers.size(); l-- > 0;)
    d = layer_backward(d, params.layers[l], params.config, cache.mask,
                       cache.layers[l], grads.layers[l]);
}

Vector project_description(const TokenEmbeddingSeq &h,
                           const EncoderParams &params) {
  if (h.dim() != params.w_d.cols())
    throw ValidationError("description dim does not match W_d");
  const Vector pooled = mean_pool(h);
  Vector out = kernels::matvec(params.w_d, pooled);
  axpy(1.0, params.b_d.flat(), out);
  return out;
}

} // namespace tbvad
