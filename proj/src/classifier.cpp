// SPDX-License-Identifier: Apache-2.0
#include "tbvad/classifier.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "tbvad/error.hpp"
#include "tbvad/kernels.hpp"
#include "tbvad/log.hpp"

namespace tbvad {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || learning_rate > 1.0)
    throw ValidationError("learning_rate must lie in [0, 1]");
  if (epochs < 1)
    throw ValidationError("epochs must be at least 1");
  if (batch_size < 1)
    throw ValidationError("batch_size must be at least 1");
  if (!(l2_weight >= 0.0))
    throw ValidationError("l2_weight must be nonnegative");
  if (!(max_grad_norm >= 0.0))
    throw ValidationError("max_grad_norm must be nonnegative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ValidationError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0))
    throw ValidationError("adam_eps must be positive");
}

std::string_view to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd")
    return Optimizer::sgd;
  if (s == "adam")
    return Optimizer::adam;
  throw ValidationError("unknown optimizer '" + std::string(s) + "'");
}

double sigmoid(double x) {
  if (x >= 0.0)
    return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double fusion_logit(std::span<const double> p_d, std::span<const double> p_v,
                    const ModelParams &model) {
  const std::size_t dl = model.config.encoder.d_latent;
  if (p_d.size() != dl || p_v.size() != dl)
    throw ValidationError("fusion inputs must both have length d_latent (" +
                          std::to_string(dl) + ")");
  const auto w = model.fusion_w.flat();
  return dot(w.subspan(0, dl), p_d) + dot(w.subspan(dl, dl), p_v) +
         model.fusion_b(0, 0);
}

} // namespace

double fuse_classify(std::span<const double> p_d, std::span<const double> p_v,
                     const ModelParams &model) {
  return sigmoid(fusion_logit(p_d, p_v, model));
}

KnowledgeContext make_knowledge_context(const KnowledgeBase &kb,
                                        const Embedder &embedder) {
  KnowledgeContext k;
  k.mean_prototype = kb.mean_prototype();
  const auto pn = pooled_knowledge(kb, Label::normal, embedder);
  const auto pa = pooled_knowledge(kb, Label::abnormal, embedder);
  k.pooled_mean.resize(pn.size());
  for (std::size_t i = 0; i < pn.size(); ++i)
    k.pooled_mean[i] = 0.5 * (pn[i] + pa[i]);
  return k;
}

TokenEmbeddingSeq embed_video(const VideoRecord &video, const Embedder &embedder,
                              std::size_t frames, std::size_t max_tokens) {
  const auto sampled = sample_evenly(video, frames);
  Matrix x(sampled.size(), embedder.dim());
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    const auto pooled = mean_pool(embedder.embed_tokens(sampled[i].text, max_tokens));
    std::copy(pooled.begin(), pooled.end(), x.row_span(i).begin());
  }
  return TokenEmbeddingSeq(std::move(x));
}

ForwardOutput forward_backward(const ModelParams &model, const Sample &sample,
                               const KnowledgeContext &kctx, bool use_residual,
                               ModelParams *grads, double grad_scale) {
  const auto &cfg = model.config;
  const std::size_t d = cfg.encoder.d_model;
  ForwardOutput out;

  EncoderCache cache;
  out.h = encode_descriptions(sample.x, model.encoder, grads ? &cache : nullptr);
  const auto &H = out.h;
  const std::size_t T = H.length();
  const double n_active = static_cast<double>(H.active());
  out.h_bar = mean_pool(H);

  // importance-weighted residual
  Vector u = out.h_bar;
  AttentionResult att;
  SlotImportance imp;
  std::vector<Vector> hidden;
  Vector r(d, 0.0);
  const Matrix &K = kctx.mean_prototype;
  const double gate = model.gate(0, 0);
  if (use_residual) {
    if (K.rows() != cfg.aspects.size())
      throw ValidationError("knowledge slot count does not match the model");
    att = slot_attention(K, H, cfg.attention);
    hidden.resize(K.rows());
    for (std::size_t s = 0; s < K.rows(); ++s) {
      const double z = model.importance.score(att.C.row_span(s), K.row_span(s),
                                              &hidden[s]);
      if (!std::isfinite(z))
        throw Error("non-finite slot importance score");
      imp.z.push_back(z);
    }
    imp.w = softmax(imp.z);
    for (std::size_t s = 0; s < K.rows(); ++s)
      axpy(imp.w[s], att.C.row_span(s), r);
    axpy(gate, r, u);
  }

  out.p_d = kernels::matvec(model.encoder.w_d, u);
  axpy(1.0, model.encoder.b_d.flat(), out.p_d);
  out.p_v = kernels::matvec(model.w_v, kctx.pooled_mean);
  axpy(1.0, model.b_v.flat(), out.p_v);
  out.logit = fusion_logit(out.p_d, out.p_v, model);
  out.y = sigmoid(out.logit);
  out.loss = softplus(out.logit) - sample.label * out.logit;
  if (!grads)
    return out;

  // backward
  const std::size_t dl = cfg.encoder.d_latent;
  const double dlogit = grad_scale * (out.y - sample.label);
  auto fw = model.fusion_w.flat();
  auto gfw = grads->fusion_w.flat();
  Vector dp_d(dl), dp_v(dl);
  for (std::size_t i = 0; i < dl; ++i) {
    gfw[i] += dlogit * out.p_d[i];
    gfw[dl + i] += dlogit * out.p_v[i];
    dp_d[i] = dlogit * fw[i];
    dp_v[i] = dlogit * fw[dl + i];
  }
  grads->fusion_b(0, 0) += dlogit;

  for (std::size_t i = 0; i < dl; ++i) {
    axpy(dp_v[i], kctx.pooled_mean, grads->w_v.row_span(i));
    grads->b_v(0, i) += dp_v[i];
    axpy(dp_d[i], u, grads->encoder.w_d.row_span(i));
    grads->encoder.b_d(0, i) += dp_d[i];
  }
  const Vector du = kernels::matvec_t(model.encoder.w_d, dp_d);

  Matrix dH(T, d);
  for (std::size_t t = 0; t < T; ++t)
    if (H.mask[t])
      axpy(1.0 / n_active, du, dH.row_span(t));

  if (use_residual) {
    const std::size_t S = K.rows();
    const auto &f = model.importance;
    auto &gf = grads->importance;
    grads->gate(0, 0) += dot(du, r);
    Vector dr = du;
    for (double &x : dr)
      x *= gate;
    Matrix dC(S, d);
    Vector dw(S);
    for (std::size_t s = 0; s < S; ++s) {
      dw[s] = dot(dr, att.C.row_span(s));
      axpy(imp.w[s], dr, dC.row_span(s));
    }
    const double wdw = dot(imp.w, dw);
    for (std::size_t s = 0; s < S; ++s) {
      const double dz = imp.w[s] * (dw[s] - wdw);
      const auto &hid = hidden[s];
      Vector dpre(hid.size());
      for (std::size_t j = 0; j < hid.size(); ++j) {
        gf.w2(j, 0) += dz * hid[j];
        dpre[j] = dz * f.w2(j, 0) * (1.0 - hid[j] * hid[j]);
      }
      gf.b2(0, 0) += dz;
      axpy(1.0, dpre, gf.b1.flat());
      const auto cs = att.C.row_span(s);
      const auto ks = K.row_span(s);
      for (std::size_t i = 0; i < d; ++i) {
        axpy(cs[i], dpre, gf.w1.row_span(i));
        axpy(ks[i], dpre, gf.w1.row_span(d + i));
        dC(s, i) += dot(f.w1.row_span(i), dpre);
      }
    }
    // C = A H
    Matrix dA = kernels::matmul_nt(dC, H.vectors);
    const Matrix dH_c = kernels::matmul_tn(att.A, dC);
    axpy(1.0, dH_c.flat(), dH.flat());
    if (cfg.attention == AttentionNorm::row_softmax) {
      for (std::size_t s = 0; s < S; ++s) {
        double rs = 0.0;
        for (std::size_t t = 0; t < T; ++t)
          rs += dA(s, t) * att.A(s, t);
        for (std::size_t t = 0; t < T; ++t)
          dA(s, t) = att.A(s, t) * (dA(s, t) - rs);
      }
    }
    // A = K H^T / sqrt(d) on real tokens
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t t = 0; t < T; ++t) {
      if (!H.mask[t])
        continue;
      for (std::size_t s = 0; s < S; ++s)
        axpy(scale * dA(s, t), K.row_span(s), dH.row_span(t));
    }
  }

  if (!model.encoder.layers.empty())
    encode_descriptions_backward(cache, model.encoder, dH, grads->encoder);
  return out;
}

double objective(const ModelParams &model, std::span<const Sample> batch,
                 const KnowledgeContext &kctx, const TrainConfig &cfg,
                 ModelParams *grads) {
  if (batch.empty())
    throw ValidationError("objective over an empty batch");
  const bool residual = !cfg.freeze_importance_net;
  const double inv = 1.0 / static_cast<double>(batch.size());
  const long n = static_cast<long>(batch.size());

  std::vector<double> losses(batch.size());
  std::vector<ModelParams> per(grads ? batch.size() : 0);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      ModelParams *g = nullptr;
      if (grads) {
        per[i] = ModelParams::zeros(model.config);
        g = &per[i];
      }
      losses[i] = forward_backward(model, batch[i], kctx, residual, g, inv).loss;
    } catch (...) {
#pragma omp critical
      if (!failure)
        failure = std::current_exception();
    }
  }
  if (failure)
    std::rethrow_exception(failure);

  double loss = 0.0;
  for (double l : losses)
    loss += l;
  loss *= inv;

  double penalty = 0.0;
  for (const auto &t : const_cast<ModelParams &>(model).tensors())
    if (t.decay)
      penalty += dot(t.tensor->flat(), t.tensor->flat());
  loss += 0.5 * cfg.l2_weight * penalty;

  if (grads) {
    auto gt = grads->tensors();
    for (auto &p : per) {
      auto pt = p.tensors();
      for (std::size_t k = 0; k < gt.size(); ++k)
        axpy(1.0, pt[k].tensor->flat(), gt[k].tensor->flat());
    }
    auto mt = const_cast<ModelParams &>(model).tensors();
    for (std::size_t k = 0; k < gt.size(); ++k)
      if (mt[k].decay)
        axpy(cfg.l2_weight, mt[k].tensor->flat(), gt[k].tensor->flat());
  }
  return loss;
}

Prediction predict_video(const VideoRecord &video, const KnowledgeContext &kctx,
                         const ModelParams &model, const Embedder &embedder,
                         std::size_t max_tokens) {
  Sample s{embed_video(video, embedder, model.config.frames, max_tokens), 0.0};
  auto out = forward_backward(model, s, kctx, true);
  return {out.y, std::move(out.p_d), std::move(out.h)};
}

Prediction predict_video(const VideoRecord &video, const KnowledgeBase &kb,
                         const ModelParams &model, const Embedder &embedder) {
  if (kb.aspects != model.config.aspects)
    throw ValidationError("knowledge aspects (" + join_aspects(kb.aspects) +
                          ") differ from the model's (" +
                          join_aspects(model.config.aspects) + ")");
  if (kb.embedder.dim != model.config.embed_dim)
    throw ValidationError("knowledge embedding dim differs from the model's");
  return predict_video(video, make_knowledge_context(kb, embedder), model,
                       embedder, kb.embedder.max_tokens);
}

namespace {

bool trainable(const std::string &name, const TrainConfig &cfg) {
  if (cfg.head_only)
    return name.rfind("fusion.", 0) == 0;
  if (cfg.freeze_importance_net)
    return name.rfind("importance.", 0) != 0;
  return true;
}

} // namespace

ModelParams train_samples(ModelParams model, std::span<const Sample> samples,
                          const KnowledgeContext &kctx, const TrainConfig &cfg,
                          TrainReport *report) {
  cfg.validate();
  if (samples.empty())
    throw ValidationError("no training samples");
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  ModelParams grads = ModelParams::zeros(model.config);
  ModelParams moment1, moment2;
  std::uint64_t adam_t = 0;
  if (cfg.optimizer == Optimizer::adam) {
    moment1 = ModelParams::zeros(model.config);
    moment2 = ModelParams::zeros(model.config);
  }
  std::vector<Sample> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i)
        batch.push_back(samples[order[i]]);
      for (auto &t : grads.tensors())
        t.tensor->fill(0.0);
      const double loss = objective(model, batch, kctx, cfg, &grads);
      if (!std::isfinite(loss))
        throw Error("non-finite training loss at epoch " + std::to_string(epoch));
      auto mt = model.tensors();
      auto gt = grads.tensors();
      double clip = 1.0;
      if (cfg.max_grad_norm > 0.0) {
        double sq = 0.0;
        for (std::size_t k = 0; k < gt.size(); ++k)
          if (trainable(mt[k].name, cfg))
            sq += dot(gt[k].tensor->flat(), gt[k].tensor->flat());
        const double norm = std::sqrt(sq);
        if (norm > cfg.max_grad_norm)
          clip = cfg.max_grad_norm / norm;
      }
      if (cfg.optimizer == Optimizer::sgd) {
        for (std::size_t k = 0; k < mt.size(); ++k)
          if (trainable(mt[k].name, cfg))
            axpy(-cfg.learning_rate * clip, gt[k].tensor->flat(), mt[k].tensor->flat());
      } else {
        ++adam_t;
        const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam_t));
        const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam_t));
        auto m1 = moment1.tensors();
        auto m2 = moment2.tensors();
        for (std::size_t k = 0; k < mt.size(); ++k) {
          if (!trainable(mt[k].name, cfg))
            continue;
          auto p = mt[k].tensor->flat();
          auto g = gt[k].tensor->flat();
          auto a = m1[k].tensor->flat();
          auto b = m2[k].tensor->flat();
          for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = clip * g[i];
            a[i] = cfg.adam_beta1 * a[i] + (1.0 - cfg.adam_beta1) * gi;
            b[i] = cfg.adam_beta2 * b[i] + (1.0 - cfg.adam_beta2) * gi * gi;
            p[i] -= cfg.learning_rate * (a[i] / c1) / (std::sqrt(b[i] / c2) + cfg.adam_eps);
          }
        }
      }
    }
    if (!model.all_finite())
      throw Error("non-finite parameters after epoch " + std::to_string(epoch));
    if (report) {
      const double full = objective(model, samples, kctx, cfg);
      if (!std::isfinite(full))
        throw Error("non-finite training loss at epoch " + std::to_string(epoch));
      report->epoch_loss.push_back(full);
      log::write(log::Level::debug, "epoch " + std::to_string(epoch) +
                                        " loss " + std::to_string(full));
    }
  }
  return model;
}

ModelParams train(const CaptionCorpus &corpus, const KnowledgeBase &kb,
                  const ModelConfig &model_cfg, const TrainConfig &cfg,
                  const Embedder &embedder, TrainReport *report) {
  cfg.validate();
  model_cfg.validate();
  std::size_t n_pos = 0;
  for (const auto &v : corpus.videos)
    n_pos += v.label == Label::abnormal;
  if (n_pos == 0 || n_pos == corpus.videos.size())
    throw ValidationError("training corpus must contain both normal and abnormal videos");
  if (kb.aspects != model_cfg.aspects)
    throw ValidationError("knowledge aspects differ from the model configuration");
  if (kb.embedder.dim != model_cfg.embed_dim)
    throw ValidationError("knowledge embedding dim differs from the model's");

  std::vector<Sample> samples;
  samples.reserve(corpus.videos.size());
  for (const auto &v : corpus.videos)
    samples.push_back({embed_video(v, embedder, model_cfg.frames, kb.embedder.max_tokens),
                       v.label == Label::abnormal ? 1.0 : 0.0});
  const auto kctx = make_knowledge_context(kb, embedder);
  return train_samples(ModelParams::init(model_cfg), samples, kctx, cfg, report);
}

} // namespace tbvad
