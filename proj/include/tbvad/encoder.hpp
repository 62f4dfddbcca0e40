// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tbvad/embedder.hpp"
#include "tbvad/hashing.hpp"
#include "tbvad/tensor.hpp"

namespace tbvad {

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t d_model = 64;
  std::size_t ff_dim = 256;
  std::size_t d_latent = 128;

  void validate() const;
};

/// Pre-layer-norm transformer encoder layer. Weight matrices are stored
/// input-major (in x out) so a layer computes X * W.
struct EncoderLayer {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1, w2, b2;
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<EncoderLayer> layers;
  /// Description projection, d_latent x d_model.
  Matrix w_d;
  Matrix b_d;

  /// Zero-valued tensors of the right shapes.
  static EncoderParams zeros(const EncoderConfig &cfg);
  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0; layer-norm
  /// gains 1.
  static EncoderParams init(const EncoderConfig &cfg, Rng &rng);

  using Visitor =
      std::function<void(const std::string &name, Matrix &tensor, bool decay)>;
  void visit(const Visitor &fn);
};

/// Intermediate values of one forward pass, kept for backpropagation.
struct EncoderCache {
  struct Layer {
    Matrix input;
    Matrix ln1_xhat, ln1_out;
    Vector ln1_rstd;
    Matrix q, k, v;
    std::vector<Matrix> probs; // one T x T matrix per head
    Matrix attn_concat;
    Matrix resid1;
    Matrix ln2_xhat, ln2_out;
    Vector ln2_rstd;
    Matrix ff_pre, ff_act;
  };
  std::vector<Layer> layers;
  std::vector<bool> mask;
};

/// Sinusoidal positional encoding, T x d.
Matrix positional_encoding(std::size_t length, std::size_t dim);

/// Runs the layer stack: Z0 = X, Z_l = Layer_l(Z_{l-1}), H = Z_L. Layer 1
/// first scales the input by sqrt(d_model) and adds positional encodings,
/// so an empty stack is the identity. Masked keys are excluded from
/// attention and masked rows are zeroed in every layer output.
TokenEmbeddingSeq encode_descriptions(const TokenEmbeddingSeq &x,
                                      const EncoderParams &params,
                                      EncoderCache *cache = nullptr);

/// Accumulates parameter gradients into `grads` given dL/dH.
void encode_descriptions_backward(const EncoderCache &cache,
                                  const EncoderParams &params,
                                  const Matrix &grad_out, EncoderParams &grads);

/// P_d = W_d * mean(unmasked rows of H) + b_d.
Vector project_description(const TokenEmbeddingSeq &h, const EncoderParams &params);

namespace detail {
double gelu(double x);
double gelu_grad(double x);
/// Row-wise layer norm; fills xhat and rstd.
Matrix layer_norm(const Matrix &x, const Matrix &gain, const Matrix &bias,
                  Matrix &xhat, Vector &rstd);
inline constexpr double kLayerNormEps = 1e-5;
} // namespace detail

} // namespace tbvad
