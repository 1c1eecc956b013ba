#pragma once

#include <span>
#include <vector>

#include "nst/tensor.hpp"

namespace nst {

struct EncoderConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 256;
  int max_len = 256;
  double dropout = 0.1;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Pre-norm transformer encoder: learned token + position embeddings, per-layer
/// self-attention and feed-forward blocks with residuals, final layer norm.
template <typename T>
struct EncoderParams {
  struct Layer {
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> w1, b1, w2, b2;
  };

  EncoderConfig cfg;
  int vocab_size = 0;
  bool trainable = true;

  Tensor<T> tok_emb;  // vocab × d
  Tensor<T> pos_emb;  // max_len × d
  std::vector<Layer> layers;
  Tensor<T> lnf_g, lnf_b;

  void init(const EncoderConfig& config, int vocab, rng::Engine& eng);
  void collect(const std::string& prefix, ParamGroup group, std::vector<ParamRef<T>>& out);
  void zero_grad();
};

/// Activations cached by a forward pass; everything backward needs, plus the
/// per-layer per-head attention probabilities for visualization.
template <typename T>
struct EncoderTrace {
  struct LayerTrace {
    std::vector<T> input;              // L×d, block input
    std::vector<T> ln1_out, ln1_mean, ln1_invstd;
    std::vector<T> q, k, v;            // L×d
    std::vector<T> probs;              // heads×L×L, row-stochastic per (head, i)
    std::vector<T> att_concat;         // L×d
    std::vector<uint8_t> att_mask;
    std::vector<T> h_attn;             // L×d, input + attention output
    std::vector<T> ln2_out, ln2_mean, ln2_invstd;
    std::vector<T> ffn_pre, ffn_act;   // L×d_ff
    std::vector<uint8_t> ffn_mask;
  };

  int len = 0;
  std::vector<uint8_t> emb_mask;
  std::vector<LayerTrace> layers;
  std::vector<T> pre_final;  // L×d
  std::vector<T> lnf_mean, lnf_invstd;
  std::vector<T> h;          // L×d, the output H_t; row 0 is the [CLS] representation

  const T* cls() const { return h.data(); }
};

/// Runs the encoder over a token-id sequence. dropout_rng == nullptr (or
/// cfg.dropout == 0) gives the deterministic evaluation-mode pass.
template <typename T>
void encoder_forward(const EncoderParams<T>& params, std::span<const int> ids,
                     EncoderTrace<T>& trace, rng::Engine* dropout_rng = nullptr);

/// Accumulates parameter gradients for dL/dH into params.*.g.
template <typename T>
void encoder_backward(EncoderParams<T>& params, std::span<const int> ids,
                      const EncoderTrace<T>& trace, const std::vector<T>& d_h);

}  // namespace nst
