#include "nst/encoder.hpp"

#include <algorithm>

namespace nst {

void EncoderConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || max_len < 1)
    fail("encoder config: all counts must be >= 1");
  if (d_model % n_heads != 0) fail("encoder config: d_model must be divisible by n_heads");
  if (dropout < 0.0 || dropout >= 1.0) fail("encoder config: dropout must be in [0,1)");
}

namespace {

template <typename T>
void init_normal(Tensor<T>& t, int r, int c, rng::Engine& eng, double stddev = 0.05) {
  t.init(r, c);
  for (auto& w : t.w) w = static_cast<T>(eng.normal() * stddev);
}

template <typename T>
void init_const(Tensor<T>& t, int r, int c, T value) {
  t.init(r, c);
  std::fill(t.w.begin(), t.w.end(), value);
}

// Inverted dropout; a zero mask byte means the unit was dropped.
template <typename T>
void apply_dropout(std::vector<T>& x, std::vector<uint8_t>& mask, double p, rng::Engine* rng) {
  if (rng == nullptr || p <= 0.0) {
    mask.clear();
    return;
  }
  mask.resize(x.size());
  T scale = static_cast<T>(1.0 / (1.0 - p));
  for (size_t i = 0; i < x.size(); ++i) {
    bool keep = rng->uniform() >= p;
    mask[i] = keep ? 1 : 0;
    x[i] = keep ? x[i] * scale : T(0);
  }
}

template <typename T>
std::vector<T> dropout_backward(const std::vector<T>& dy, const std::vector<uint8_t>& mask,
                                double p) {
  std::vector<T> dx = dy;
  if (mask.empty()) return dx;
  T scale = static_cast<T>(1.0 / (1.0 - p));
  for (size_t i = 0; i < dx.size(); ++i) dx[i] = mask[i] ? dx[i] * scale : T(0);
  return dx;
}

}  // namespace

template <typename T>
void EncoderParams<T>::init(const EncoderConfig& config, int vocab, rng::Engine& eng) {
  config.validate();
  if (vocab < 1) fail("encoder: vocabulary must be non-empty");
  cfg = config;
  vocab_size = vocab;
  int d = cfg.d_model;
  init_normal(tok_emb, vocab, d, eng);
  init_normal(pos_emb, cfg.max_len, d, eng);
  layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& l : layers) {
    init_const(l.ln1_g, 1, d, T(1));
    init_const(l.ln1_b, 1, d, T(0));
    init_normal(l.wq, d, d, eng);
    init_const(l.bq, 1, d, T(0));
    init_normal(l.wk, d, d, eng);
    init_const(l.bk, 1, d, T(0));
    init_normal(l.wv, d, d, eng);
    init_const(l.bv, 1, d, T(0));
    init_normal(l.wo, d, d, eng);
    init_const(l.bo, 1, d, T(0));
    init_const(l.ln2_g, 1, d, T(1));
    init_const(l.ln2_b, 1, d, T(0));
    init_normal(l.w1, d, cfg.d_ff, eng);
    init_const(l.b1, 1, cfg.d_ff, T(0));
    init_normal(l.w2, cfg.d_ff, d, eng);
    init_const(l.b2, 1, d, T(0));
  }
  init_const(lnf_g, 1, d, T(1));
  init_const(lnf_b, 1, d, T(0));
}

template <typename T>
void EncoderParams<T>::collect(const std::string& prefix, ParamGroup group,
                               std::vector<ParamRef<T>>& out) {
  auto add = [&](const std::string& name, Tensor<T>& t, bool decay) {
    out.push_back({prefix + "." + name, &t, decay, group});
  };
  add("tok_emb", tok_emb, true);
  add("pos_emb", pos_emb, true);
  for (size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    std::string p = "layer" + std::to_string(i);
    add(p + ".ln1_g", l.ln1_g, false);
    add(p + ".ln1_b", l.ln1_b, false);
    add(p + ".wq", l.wq, true);
    add(p + ".bq", l.bq, false);
    add(p + ".wk", l.wk, true);
    add(p + ".bk", l.bk, false);
    add(p + ".wv", l.wv, true);
    add(p + ".bv", l.bv, false);
    add(p + ".wo", l.wo, true);
    add(p + ".bo", l.bo, false);
    add(p + ".ln2_g", l.ln2_g, false);
    add(p + ".ln2_b", l.ln2_b, false);
    add(p + ".w1", l.w1, true);
    add(p + ".b1", l.b1, false);
    add(p + ".w2", l.w2, true);
    add(p + ".b2", l.b2, false);
  }
  add("lnf_g", lnf_g, false);
  add("lnf_b", lnf_b, false);
}

template <typename T>
void EncoderParams<T>::zero_grad() {
  std::vector<ParamRef<T>> refs;
  collect("e", ParamGroup::Encoder, refs);
  for (auto& r : refs) r.tensor->zero_grad();
}

template <typename T>
void encoder_forward(const EncoderParams<T>& params, std::span<const int> ids,
                     EncoderTrace<T>& trace, rng::Engine* dropout_rng) {
  const EncoderConfig& cfg = params.cfg;
  int len = static_cast<int>(ids.size());
  if (len < 1) fail("encoder: empty input");
  if (len > cfg.max_len)
    fail("encoder: input length " + std::to_string(len) + " exceeds max_len " +
         std::to_string(cfg.max_len));
  for (int id : ids)
    if (id < 0 || id >= params.vocab_size)
      fail("encoder: token id " + std::to_string(id) + " outside vocabulary");

  int d = cfg.d_model, heads = cfg.n_heads, dh = d / heads, dff = cfg.d_ff;
  T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  size_t ld = static_cast<size_t>(len) * d;

  trace.len = len;
  trace.layers.assign(static_cast<size_t>(cfg.n_layers), {});

  std::vector<T> x(ld);
  for (int i = 0; i < len; ++i) {
    const T* te = params.tok_emb.row(ids[static_cast<size_t>(i)]);
    const T* pe = params.pos_emb.row(i);
    T* xi = x.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) xi[j] = te[j] + pe[j];
  }
  apply_dropout(x, trace.emb_mask, cfg.dropout, dropout_rng);

  for (int li = 0; li < cfg.n_layers; ++li) {
    auto& lt = trace.layers[static_cast<size_t>(li)];
    const auto& lp = params.layers[static_cast<size_t>(li)];
    lt.input = x;

    lt.ln1_out.assign(ld, T(0));
    lt.ln1_mean.assign(static_cast<size_t>(len), T(0));
    lt.ln1_invstd.assign(static_cast<size_t>(len), T(0));
    layernorm_forward(lt.input.data(), lp.ln1_g.w.data(), lp.ln1_b.w.data(), lt.ln1_out.data(),
                      lt.ln1_mean.data(), lt.ln1_invstd.data(), len, d);

    lt.q.assign(ld, T(0));
    lt.k.assign(ld, T(0));
    lt.v.assign(ld, T(0));
    matmul_acc(lt.ln1_out.data(), lp.wq.w.data(), lt.q.data(), len, d, d);
    add_bias(lt.q.data(), lp.bq.w.data(), len, d);
    matmul_acc(lt.ln1_out.data(), lp.wk.w.data(), lt.k.data(), len, d, d);
    add_bias(lt.k.data(), lp.bk.w.data(), len, d);
    matmul_acc(lt.ln1_out.data(), lp.wv.w.data(), lt.v.data(), len, d, d);
    add_bias(lt.v.data(), lp.bv.w.data(), len, d);

    lt.probs.assign(static_cast<size_t>(heads) * len * len, T(0));
    lt.att_concat.assign(ld, T(0));
    for (int h = 0; h < heads; ++h) {
      size_t off = static_cast<size_t>(h) * dh;
      T* hp = lt.probs.data() + static_cast<size_t>(h) * len * len;
      for (int i = 0; i < len; ++i) {
        const T* qi = lt.q.data() + static_cast<size_t>(i) * d + off;
        T* pi = hp + static_cast<size_t>(i) * len;
        for (int j = 0; j < len; ++j)
          pi[j] = dot(qi, lt.k.data() + static_cast<size_t>(j) * d + off, dh) * inv_sqrt_dh;
        softmax_row(pi, len);
        T* oi = lt.att_concat.data() + static_cast<size_t>(i) * d + off;
        for (int j = 0; j < len; ++j) {
          const T* vj = lt.v.data() + static_cast<size_t>(j) * d + off;
          T p = pi[j];
          for (int c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }

    std::vector<T> att_proj(ld, T(0));
    matmul_acc(lt.att_concat.data(), lp.wo.w.data(), att_proj.data(), len, d, d);
    add_bias(att_proj.data(), lp.bo.w.data(), len, d);
    apply_dropout(att_proj, lt.att_mask, cfg.dropout, dropout_rng);

    lt.h_attn.resize(ld);
    for (size_t i = 0; i < ld; ++i) lt.h_attn[i] = x[i] + att_proj[i];

    lt.ln2_out.assign(ld, T(0));
    lt.ln2_mean.assign(static_cast<size_t>(len), T(0));
    lt.ln2_invstd.assign(static_cast<size_t>(len), T(0));
    layernorm_forward(lt.h_attn.data(), lp.ln2_g.w.data(), lp.ln2_b.w.data(), lt.ln2_out.data(),
                      lt.ln2_mean.data(), lt.ln2_invstd.data(), len, d);

    size_t lf = static_cast<size_t>(len) * dff;
    lt.ffn_pre.assign(lf, T(0));
    matmul_acc(lt.ln2_out.data(), lp.w1.w.data(), lt.ffn_pre.data(), len, d, dff);
    add_bias(lt.ffn_pre.data(), lp.b1.w.data(), len, dff);
    lt.ffn_act.resize(lf);
    for (size_t i = 0; i < lf; ++i) lt.ffn_act[i] = gelu(lt.ffn_pre[i]);

    std::vector<T> ffn_out(ld, T(0));
    matmul_acc(lt.ffn_act.data(), lp.w2.w.data(), ffn_out.data(), len, dff, d);
    add_bias(ffn_out.data(), lp.b2.w.data(), len, d);
    apply_dropout(ffn_out, lt.ffn_mask, cfg.dropout, dropout_rng);

    for (size_t i = 0; i < ld; ++i) x[i] = lt.h_attn[i] + ffn_out[i];
  }

  trace.pre_final = x;
  trace.h.assign(ld, T(0));
  trace.lnf_mean.assign(static_cast<size_t>(len), T(0));
  trace.lnf_invstd.assign(static_cast<size_t>(len), T(0));
  layernorm_forward(trace.pre_final.data(), params.lnf_g.w.data(), params.lnf_b.w.data(),
                    trace.h.data(), trace.lnf_mean.data(), trace.lnf_invstd.data(), len, d);
}

template <typename T>
void encoder_backward(EncoderParams<T>& params, std::span<const int> ids,
                      const EncoderTrace<T>& trace, const std::vector<T>& d_h) {
  const EncoderConfig& cfg = params.cfg;
  int len = trace.len, d = cfg.d_model, heads = cfg.n_heads, dh = d / heads, dff = cfg.d_ff;
  T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  size_t ld = static_cast<size_t>(len) * d;
  if (d_h.size() != ld) fail("encoder backward: gradient shape mismatch");

  std::vector<T> dx(ld, T(0));
  layernorm_backward(d_h.data(), trace.pre_final.data(), trace.lnf_mean.data(),
                     trace.lnf_invstd.data(), params.lnf_g.w.data(), params.lnf_g.g.data(),
                     params.lnf_b.g.data(), dx.data(), len, d);

  for (int li = cfg.n_layers - 1; li >= 0; --li) {
    const auto& lt = trace.layers[static_cast<size_t>(li)];
    auto& lp = params.layers[static_cast<size_t>(li)];

    // x_out = h_attn + dropout(ffn_out)
    std::vector<T> d_ffn_out = dropout_backward(dx, lt.ffn_mask, cfg.dropout);
    std::vector<T> d_h_attn = dx;  // residual branch

    size_t lf = static_cast<size_t>(len) * dff;
    std::vector<T> d_ffn_act(lf, T(0));
    matmul_nt_acc(d_ffn_out.data(), lp.w2.w.data(), d_ffn_act.data(), len, d, dff);
    matmul_tn_acc(lt.ffn_act.data(), d_ffn_out.data(), lp.w2.g.data(), len, dff, d);
    colsum_acc(d_ffn_out.data(), lp.b2.g.data(), len, d);

    std::vector<T> d_ffn_pre(lf);
    for (size_t i = 0; i < lf; ++i) d_ffn_pre[i] = d_ffn_act[i] * gelu_grad(lt.ffn_pre[i]);

    std::vector<T> d_ln2_out(ld, T(0));
    matmul_nt_acc(d_ffn_pre.data(), lp.w1.w.data(), d_ln2_out.data(), len, dff, d);
    matmul_tn_acc(lt.ln2_out.data(), d_ffn_pre.data(), lp.w1.g.data(), len, d, dff);
    colsum_acc(d_ffn_pre.data(), lp.b1.g.data(), len, dff);

    layernorm_backward(d_ln2_out.data(), lt.h_attn.data(), lt.ln2_mean.data(),
                       lt.ln2_invstd.data(), lp.ln2_g.w.data(), lp.ln2_g.g.data(),
                       lp.ln2_b.g.data(), d_h_attn.data(), len, d);

    // h_attn = input + dropout(att_proj)
    std::vector<T> d_att_proj = dropout_backward(d_h_attn, lt.att_mask, cfg.dropout);
    std::vector<T> d_input = d_h_attn;  // residual branch

    std::vector<T> d_att_concat(ld, T(0));
    matmul_nt_acc(d_att_proj.data(), lp.wo.w.data(), d_att_concat.data(), len, d, d);
    matmul_tn_acc(lt.att_concat.data(), d_att_proj.data(), lp.wo.g.data(), len, d, d);
    colsum_acc(d_att_proj.data(), lp.bo.g.data(), len, d);

    std::vector<T> dq(ld, T(0)), dk(ld, T(0)), dv(ld, T(0));
    std::vector<T> dp(static_cast<size_t>(len)), ds(static_cast<size_t>(len));
    for (int h = 0; h < heads; ++h) {
      size_t off = static_cast<size_t>(h) * dh;
      const T* hp = lt.probs.data() + static_cast<size_t>(h) * len * len;
      for (int i = 0; i < len; ++i) {
        const T* doi = d_att_concat.data() + static_cast<size_t>(i) * d + off;
        const T* pi = hp + static_cast<size_t>(i) * len;
        T dsum = T(0);
        for (int j = 0; j < len; ++j) {
          const T* vj = lt.v.data() + static_cast<size_t>(j) * d + off;
          dp[static_cast<size_t>(j)] = dot(doi, vj, dh);
          T* dvj = dv.data() + static_cast<size_t>(j) * d + off;
          T p = pi[j];
          for (int c = 0; c < dh; ++c) dvj[c] += p * doi[c];
          dsum += dp[static_cast<size_t>(j)] * p;
        }
        T* dqi = dq.data() + static_cast<size_t>(i) * d + off;
        const T* qi = lt.q.data() + static_cast<size_t>(i) * d + off;
        for (int j = 0; j < len; ++j) {
          ds[static_cast<size_t>(j)] = pi[j] * (dp[static_cast<size_t>(j)] - dsum) * inv_sqrt_dh;
          const T* kj = lt.k.data() + static_cast<size_t>(j) * d + off;
          T* dkj = dk.data() + static_cast<size_t>(j) * d + off;
          T s = ds[static_cast<size_t>(j)];
          for (int c = 0; c < dh; ++c) {
            dqi[c] += s * kj[c];
            dkj[c] += s * qi[c];
          }
        }
      }
    }

    std::vector<T> d_ln1_out(ld, T(0));
    matmul_nt_acc(dq.data(), lp.wq.w.data(), d_ln1_out.data(), len, d, d);
    matmul_tn_acc(lt.ln1_out.data(), dq.data(), lp.wq.g.data(), len, d, d);
    colsum_acc(dq.data(), lp.bq.g.data(), len, d);
    matmul_nt_acc(dk.data(), lp.wk.w.data(), d_ln1_out.data(), len, d, d);
    matmul_tn_acc(lt.ln1_out.data(), dk.data(), lp.wk.g.data(), len, d, d);
    colsum_acc(dk.data(), lp.bk.g.data(), len, d);
    matmul_nt_acc(dv.data(), lp.wv.w.data(), d_ln1_out.data(), len, d, d);
    matmul_tn_acc(lt.ln1_out.data(), dv.data(), lp.wv.g.data(), len, d, d);
    colsum_acc(dv.data(), lp.bv.g.data(), len, d);

    layernorm_backward(d_ln1_out.data(), lt.input.data(), lt.ln1_mean.data(),
                       lt.ln1_invstd.data(), lp.ln1_g.w.data(), lp.ln1_g.g.data(),
                       lp.ln1_b.g.data(), d_input.data(), len, d);

    dx = std::move(d_input);
  }

  std::vector<T> d_emb = dropout_backward(dx, trace.emb_mask, cfg.dropout);
  for (int i = 0; i < len; ++i) {
    const T* de = d_emb.data() + static_cast<size_t>(i) * d;
    T* gt = params.tok_emb.g.data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d;
    T* gp = params.pos_emb.g.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      gt[j] += de[j];
      gp[j] += de[j];
    }
  }
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template void encoder_forward<float>(const EncoderParams<float>&, std::span<const int>,
                                     EncoderTrace<float>&, rng::Engine*);
template void encoder_forward<double>(const EncoderParams<double>&, std::span<const int>,
                                      EncoderTrace<double>&, rng::Engine*);
template void encoder_backward<float>(EncoderParams<float>&, std::span<const int>,
                                      const EncoderTrace<float>&, const std::vector<float>&);
template void encoder_backward<double>(EncoderParams<double>&, std::span<const int>,
                                       const EncoderTrace<double>&, const std::vector<double>&);

}  // namespace nst
