#include "nst/model.hpp"

#include <algorithm>
#include <cmath>

namespace nst {

void ModelConfig::validate() const {
  encoder.validate();
  if (temperature <= 0.0) fail("model config: temperature must be > 0");
}

template <typename T>
void SlotAttnParams<T>::init(int d, rng::Engine& eng) {
  auto normal = [&](Tensor<T>& t, int r, int c) {
    t.init(r, c);
    for (auto& w : t.w) w = static_cast<T>(eng.normal() * 0.05);
  };
  auto constant = [&](Tensor<T>& t, int r, int c, T v) {
    t.init(r, c);
    std::fill(t.w.begin(), t.w.end(), v);
  };
  normal(wq, d, d);
  constant(bq, 1, d, T(0));
  normal(wk, d, d);
  constant(bk, 1, d, T(0));
  normal(wv, d, d);
  constant(bv, 1, d, T(0));
  normal(wo, d, d);
  constant(bo, 1, d, T(0));
  constant(ln_g, 1, d, T(1));
  constant(ln_b, 1, d, T(0));
}

template <typename T>
void SlotAttnParams<T>::collect(const std::string& prefix, ParamGroup group,
                                std::vector<ParamRef<T>>& out) {
  auto add = [&](const std::string& name, Tensor<T>& t, bool decay) {
    out.push_back({prefix + "." + name, &t, decay, group});
  };
  add("wq", wq, true);
  add("bq", bq, false);
  add("wk", wk, true);
  add("bk", bk, false);
  add("wv", wv, true);
  add("bv", bv, false);
  add("wo", wo, true);
  add("bo", bo, false);
  add("ln_g", ln_g, false);
  add("ln_b", ln_b, false);
}

template <typename T>
std::vector<T> SlotAttnTrace<T>::mean_weights() const {
  if (len == 0 || probs.empty()) return {};
  int heads = static_cast<int>(probs.size()) / len;
  std::vector<T> out(static_cast<size_t>(len), T(0));
  for (int h = 0; h < heads; ++h)
    for (int j = 0; j < len; ++j)
      out[static_cast<size_t>(j)] += probs[static_cast<size_t>(h) * len + j];
  for (auto& w : out) w /= static_cast<T>(heads);
  return out;
}

template <typename T>
void slot_attn_forward(const SlotAttnParams<T>& params, int n_heads, std::span<const T> h_slot,
                       const std::vector<T>& h_tokens, int len, int d, SlotAttnTrace<T>& trace) {
  if (static_cast<int>(h_slot.size()) != d || h_tokens.size() != static_cast<size_t>(len) * d)
    fail("slot attention: shape mismatch");
  if (d % n_heads != 0) fail("slot attention: d not divisible by heads");
  int dh = d / n_heads;
  T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  size_t ld = static_cast<size_t>(len) * d;

  trace.len = len;
  trace.q.assign(static_cast<size_t>(d), T(0));
  matmul_acc(h_slot.data(), params.wq.w.data(), trace.q.data(), 1, d, d);
  add_bias(trace.q.data(), params.bq.w.data(), 1, d);
  trace.k.assign(ld, T(0));
  matmul_acc(h_tokens.data(), params.wk.w.data(), trace.k.data(), len, d, d);
  add_bias(trace.k.data(), params.bk.w.data(), len, d);
  trace.v.assign(ld, T(0));
  matmul_acc(h_tokens.data(), params.wv.w.data(), trace.v.data(), len, d, d);
  add_bias(trace.v.data(), params.bv.w.data(), len, d);

  trace.probs.assign(static_cast<size_t>(n_heads) * len, T(0));
  trace.concat.assign(static_cast<size_t>(d), T(0));
  for (int h = 0; h < n_heads; ++h) {
    size_t off = static_cast<size_t>(h) * dh;
    T* p = trace.probs.data() + static_cast<size_t>(h) * len;
    for (int j = 0; j < len; ++j)
      p[j] = dot(trace.q.data() + off, trace.k.data() + static_cast<size_t>(j) * d + off, dh) *
             inv_sqrt_dh;
    softmax_row(p, len);
    T* oc = trace.concat.data() + off;
    for (int j = 0; j < len; ++j) {
      const T* vj = trace.v.data() + static_cast<size_t>(j) * d + off;
      for (int c = 0; c < dh; ++c) oc[c] += p[j] * vj[c];
    }
  }

  trace.o.assign(static_cast<size_t>(d), T(0));
  matmul_acc(trace.concat.data(), params.wo.w.data(), trace.o.data(), 1, d, d);
  add_bias(trace.o.data(), params.bo.w.data(), 1, d);

  trace.r.assign(static_cast<size_t>(d), T(0));
  layernorm_forward(trace.o.data(), params.ln_g.w.data(), params.ln_b.w.data(), trace.r.data(),
                    &trace.ln_mean, &trace.ln_invstd, 1, d);
}

template <typename T>
void slot_attn_backward(SlotAttnParams<T>& params, int n_heads, std::span<const T> h_slot,
                        const std::vector<T>& h_tokens, const SlotAttnTrace<T>& trace,
                        std::span<const T> d_r, std::vector<T>& d_tokens, T* d_slot) {
  int len = trace.len;
  int d = static_cast<int>(h_slot.size());
  int dh = d / n_heads;
  T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<T> d_o(static_cast<size_t>(d), T(0));
  layernorm_backward(d_r.data(), trace.o.data(), &trace.ln_mean, &trace.ln_invstd,
                     params.ln_g.w.data(), params.ln_g.g.data(), params.ln_b.g.data(), d_o.data(),
                     1, d);

  std::vector<T> d_concat(static_cast<size_t>(d), T(0));
  matmul_nt_acc(d_o.data(), params.wo.w.data(), d_concat.data(), 1, d, d);
  matmul_tn_acc(trace.concat.data(), d_o.data(), params.wo.g.data(), 1, d, d);
  colsum_acc(d_o.data(), params.bo.g.data(), 1, d);

  std::vector<T> d_q(static_cast<size_t>(d), T(0));
  std::vector<T> d_k(static_cast<size_t>(len) * d, T(0));
  std::vector<T> d_v(static_cast<size_t>(len) * d, T(0));
  std::vector<T> dp(static_cast<size_t>(len));
  for (int h = 0; h < n_heads; ++h) {
    size_t off = static_cast<size_t>(h) * dh;
    const T* p = trace.probs.data() + static_cast<size_t>(h) * len;
    const T* doc = d_concat.data() + off;
    T dsum = T(0);
    for (int j = 0; j < len; ++j) {
      const T* vj = trace.v.data() + static_cast<size_t>(j) * d + off;
      dp[static_cast<size_t>(j)] = dot(doc, vj, dh);
      T* dvj = d_v.data() + static_cast<size_t>(j) * d + off;
      for (int c = 0; c < dh; ++c) dvj[c] += p[j] * doc[c];
      dsum += dp[static_cast<size_t>(j)] * p[j];
    }
    T* dqh = d_q.data() + off;
    const T* qh = trace.q.data() + off;
    for (int j = 0; j < len; ++j) {
      T ds = p[j] * (dp[static_cast<size_t>(j)] - dsum) * inv_sqrt_dh;
      const T* kj = trace.k.data() + static_cast<size_t>(j) * d + off;
      T* dkj = d_k.data() + static_cast<size_t>(j) * d + off;
      for (int c = 0; c < dh; ++c) {
        dqh[c] += ds * kj[c];
        dkj[c] += ds * qh[c];
      }
    }
  }

  matmul_tn_acc(h_slot.data(), d_q.data(), params.wq.g.data(), 1, d, d);
  colsum_acc(d_q.data(), params.bq.g.data(), 1, d);
  if (d_slot != nullptr) matmul_nt_acc(d_q.data(), params.wq.w.data(), d_slot, 1, d, d);

  matmul_nt_acc(d_k.data(), params.wk.w.data(), d_tokens.data(), len, d, d);
  matmul_tn_acc(h_tokens.data(), d_k.data(), params.wk.g.data(), len, d, d);
  colsum_acc(d_k.data(), params.bk.g.data(), len, d);
  matmul_nt_acc(d_v.data(), params.wv.w.data(), d_tokens.data(), len, d, d);
  matmul_tn_acc(h_tokens.data(), d_v.data(), params.wv.g.data(), len, d, d);
  colsum_acc(d_v.data(), params.bv.g.data(), len, d);
}

template <typename T>
std::vector<T> l2_distances(std::span<const T> r, const std::vector<std::vector<T>>& value_reps) {
  if (value_reps.empty()) fail("slot-value matching: need at least one candidate value");
  std::vector<T> out(value_reps.size());
  for (size_t k = 0; k < value_reps.size(); ++k) {
    if (value_reps[k].size() != r.size()) fail("slot-value matching: dimension mismatch");
    T s = T(0);
    for (size_t j = 0; j < r.size(); ++j) {
      T diff = r[j] - value_reps[k][j];
      s += diff * diff;
    }
    out[k] = std::sqrt(s);
  }
  return out;
}

namespace {

// Stable softmax over logits l_k = -dist_k; optionally the NLL of gold.
template <typename T>
std::vector<T> neg_distance_softmax(const std::vector<T>& dists, int gold, T* nll) {
  size_t n = dists.size();
  T mx = -dists[0];
  for (size_t k = 1; k < n; ++k) mx = std::max(mx, -dists[k]);
  std::vector<T> probs(n);
  T sum = T(0);
  for (size_t k = 0; k < n; ++k) {
    probs[k] = std::exp(-dists[k] - mx);
    sum += probs[k];
  }
  for (auto& p : probs) p /= sum;
  if (nll != nullptr) {
    T lse = mx + std::log(sum);
    *nll = lse - (-dists[static_cast<size_t>(gold)]);
  }
  return probs;
}

}  // namespace

template <typename T>
std::vector<T> slot_value_distribution(std::span<const T> r,
                                       const std::vector<std::vector<T>>& value_reps) {
  std::vector<T> dists = l2_distances(r, value_reps);
  return neg_distance_softmax(dists, 0, static_cast<T*>(nullptr));
}

template <typename T>
T contrastive_loss(const std::vector<std::vector<T>>& cls_reps, T tau,
                   std::vector<std::vector<T>>* grad) {
  if (tau <= T(0)) fail("contrastive: temperature must be > 0");
  size_t m = cls_reps.size();
  if (m < 2 || m % 2 != 0) fail("contrastive: expected 2N representations, originals then noised");
  size_t dim = cls_reps[0].size();
  size_t half = m / 2;

  std::vector<T> norms(m);
  for (size_t i = 0; i < m; ++i) {
    if (cls_reps[i].size() != dim) fail("contrastive: dimension mismatch");
    norms[i] = l2_norm(cls_reps[i].data(), static_cast<int>(dim));
    if (norms[i] == T(0)) fail("contrastive: zero representation has undefined cosine similarity");
  }

  std::vector<T> sim(m * m, T(0));
  for (size_t a = 0; a < m; ++a)
    for (size_t b = a + 1; b < m; ++b) {
      T s = dot(cls_reps[a].data(), cls_reps[b].data(), static_cast<int>(dim)) /
            (norms[a] * norms[b]);
      sim[a * m + b] = s;
      sim[b * m + a] = s;
    }

  if (grad != nullptr) grad->assign(m, std::vector<T>(dim, T(0)));

  T loss = T(0);
  std::vector<T> w(m);
  for (size_t a = 0; a < m; ++a) {
    size_t pos = (a + half) % m;
    T mx = -std::numeric_limits<T>::infinity();
    for (size_t k = 0; k < m; ++k)
      if (k != a) mx = std::max(mx, sim[a * m + k] / tau);
    T sum = T(0);
    for (size_t k = 0; k < m; ++k) {
      if (k == a) continue;
      w[k] = std::exp(sim[a * m + k] / tau - mx);
      sum += w[k];
    }
    T lse = mx + std::log(sum);
    loss += lse - sim[a * m + pos] / tau;

    if (grad != nullptr) {
      for (size_t k = 0; k < m; ++k) {
        if (k == a) continue;
        // d loss_a / d sim(a,k), already including the mean over 2N anchors
        T gs = (w[k] / sum - (k == pos ? T(1) : T(0))) / (tau * static_cast<T>(m));
        if (gs == T(0)) continue;
        const T* za = cls_reps[a].data();
        const T* zk = cls_reps[k].data();
        T* ga = (*grad)[a].data();
        T* gk = (*grad)[k].data();
        T inv = T(1) / (norms[a] * norms[k]);
        T s = sim[a * m + k];
        T ca = s / (norms[a] * norms[a]);
        T ck = s / (norms[k] * norms[k]);
        for (size_t j = 0; j < dim; ++j) {
          ga[j] += gs * (zk[j] * inv - ca * za[j]);
          gk[j] += gs * (za[j] * inv - ck * zk[j]);
        }
      }
    }
  }
  return loss / static_cast<T>(m);
}

double total_loss(double l_ori, double l_nos, double l_c, bool use_noised, bool use_contrastive) {
  double dst = use_noised ? (l_ori + l_nos) / 2.0 : l_ori;
  return dst + (use_contrastive ? l_c : 0.0);
}

template <typename T>
Model<T>::Model(const ModelConfig& config, Ontology ontology, Vocabulary vocab, uint64_t init_seed)
    : config_(config), ontology_(std::move(ontology)), vocab_(std::move(vocab)) {
  config_.validate();
  rng::Engine ctx_eng(rng::derive(init_seed, "context-init"));
  context_.init(config_.encoder, static_cast<int>(vocab_.size()), ctx_eng);
  label_ = context_;  // frozen deep copy of the initial weights
  label_.trainable = false;
  rng::Engine head_eng(rng::derive(init_seed, "head-init"));
  head_.init(config_.encoder.d_model, head_eng);
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::trainable_params() {
  std::vector<ParamRef<T>> out;
  context_.collect("context", ParamGroup::Encoder, out);
  head_.collect("head", ParamGroup::Head, out);
  return out;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : trainable_params()) p.tensor->zero_grad();
}

template <typename T>
EncoderTrace<T> Model<T>::encode(const ContextInput& ctx) const {
  EncoderTrace<T> trace;
  encoder_forward(context_, std::span<const int>(ctx.ids), trace, nullptr);
  return trace;
}

namespace {

std::vector<int> label_token_ids(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.push_back(vocab.cls_id());
  for (const auto& tok : tokenize(text)) ids.push_back(vocab.id(tok));
  ids.push_back(vocab.sep_id());
  return ids;
}

}  // namespace

/// Per-objective-call label bookkeeping for the shared label-encoder mode:
/// every label is encoded once with the current context encoder and gradients
/// are pushed back through those passes.
template <typename T>
struct Model<T>::SharedLabelSession {
  struct Pass {
    std::vector<int> ids;
    EncoderTrace<T> trace;
    std::vector<T> cls;
    std::vector<T> d_cls;
    bool has_grad = false;
  };

  const Model<T>& model;
  std::map<std::string, Pass> passes;

  explicit SharedLabelSession(const Model<T>& m) : model(m) {}

  const std::vector<T>& rep(const std::string& text) {
    auto it = passes.find(text);
    if (it != passes.end()) return it->second.cls;
    Pass pass;
    pass.ids = label_token_ids(text, model.vocab_);
    encoder_forward(model.context_, std::span<const int>(pass.ids), pass.trace, nullptr);
    int d = model.config_.encoder.d_model;
    pass.cls.assign(pass.trace.h.begin(), pass.trace.h.begin() + d);
    pass.d_cls.assign(static_cast<size_t>(d), T(0));
    return passes.emplace(text, std::move(pass)).first->second.cls;
  }

  void add_grad(const std::string& text, const T* dvec, T scale) {
    auto& pass = passes.at(text);
    for (size_t j = 0; j < pass.d_cls.size(); ++j) pass.d_cls[j] += scale * dvec[j];
    pass.has_grad = true;
  }

  void backprop(Model<T>& m) {
    for (auto& [text, pass] : passes) {
      if (!pass.has_grad) continue;
      std::vector<T> d_h(pass.trace.h.size(), T(0));
      std::copy(pass.d_cls.begin(), pass.d_cls.end(), d_h.begin());
      encoder_backward(m.context_, std::span<const int>(pass.ids), pass.trace, d_h);
    }
  }
};

template <typename T>
std::vector<T> Model<T>::label_rep_internal(const std::string& text,
                                            SharedLabelSession* session) const {
  if (session != nullptr) return session->rep(text);
  int d = config_.encoder.d_model;
  if (config_.label_mode == LabelMode::Shared) {
    EncoderTrace<T> trace;
    std::vector<int> ids = label_token_ids(text, vocab_);
    encoder_forward(context_, std::span<const int>(ids), trace, nullptr);
    return std::vector<T>(trace.h.begin(), trace.h.begin() + d);
  }
  auto it = label_cache_.find(text);
  if (it != label_cache_.end()) {
    ++cache_hits_;
    return it->second;
  }
  ++cache_misses_;
  EncoderTrace<T> trace;
  std::vector<int> ids = label_token_ids(text, vocab_);
  encoder_forward(label_, std::span<const int>(ids), trace, nullptr);
  std::vector<T> cls(trace.h.begin(), trace.h.begin() + d);
  label_cache_[text] = cls;
  return cls;
}

template <typename T>
std::vector<T> Model<T>::label_rep(const std::string& text) const {
  return label_rep_internal(text, nullptr);
}

template <typename T>
const std::vector<T>& Model<T>::slot_rep_cached(int slot_index) const {
  if (slot_rep_cache_.empty()) slot_rep_cache_.resize(ontology_.slot_count());
  auto& entry = slot_rep_cache_[static_cast<size_t>(slot_index)];
  if (entry.empty()) entry = label_rep_internal(ontology_.slots()[static_cast<size_t>(slot_index)], nullptr);
  return entry;
}

template <typename T>
const std::vector<std::vector<T>>& Model<T>::value_reps_cached(int slot_index) const {
  if (value_rep_cache_.empty()) value_rep_cache_.resize(ontology_.slot_count());
  auto& entry = value_rep_cache_[static_cast<size_t>(slot_index)];
  if (entry.empty()) {
    const auto& slot = ontology_.slots()[static_cast<size_t>(slot_index)];
    for (const auto& value : ontology_.candidates(slot))
      entry.push_back(label_rep_internal(value, nullptr));
  }
  return entry;
}

template <typename T>
std::vector<T> Model<T>::slot_feature(int slot_index, const EncoderTrace<T>& enc,
                                      SlotAttnTrace<T>* trace_out) const {
  std::vector<T> h_slot =
      config_.label_mode == LabelMode::Shared
          ? label_rep_internal(ontology_.slots()[static_cast<size_t>(slot_index)], nullptr)
          : slot_rep_cached(slot_index);
  SlotAttnTrace<T> local;
  SlotAttnTrace<T>& trace = trace_out != nullptr ? *trace_out : local;
  slot_attn_forward(head_, config_.encoder.n_heads, std::span<const T>(h_slot), enc.h, enc.len,
                    config_.encoder.d_model, trace);
  return trace.r;
}

template <typename T>
std::vector<T> Model<T>::slot_distribution(int slot_index, const EncoderTrace<T>& enc) const {
  std::vector<T> r = slot_feature(slot_index, enc);
  if (config_.label_mode == LabelMode::Shared) {
    const auto& slot = ontology_.slots()[static_cast<size_t>(slot_index)];
    std::vector<std::vector<T>> reps;
    for (const auto& value : ontology_.candidates(slot))
      reps.push_back(label_rep_internal(value, nullptr));
    return slot_value_distribution(std::span<const T>(r), reps);
  }
  return slot_value_distribution(std::span<const T>(r), value_reps_cached(slot_index));
}

template <typename T>
DialogueState Model<T>::predict_state(const ContextInput& ctx) const {
  return predict_from(encode(ctx));
}

template <typename T>
DialogueState Model<T>::predict_from(const EncoderTrace<T>& enc) const {
  DialogueState out;
  for (size_t j = 0; j < ontology_.slot_count(); ++j) {
    const auto& slot = ontology_.slots()[j];
    std::vector<T> r = slot_feature(static_cast<int>(j), enc);
    std::vector<T> dists;
    if (config_.label_mode == LabelMode::Shared) {
      std::vector<std::vector<T>> reps;
      for (const auto& value : ontology_.candidates(slot))
        reps.push_back(label_rep_internal(value, nullptr));
      dists = l2_distances(std::span<const T>(r), reps);
    } else {
      dists = l2_distances(std::span<const T>(r), value_reps_cached(static_cast<int>(j)));
    }
    size_t best = 0;  // smallest distance; ties keep the lowest value index
    for (size_t k = 1; k < dists.size(); ++k)
      if (dists[k] < dists[best]) best = k;
    out.assignments[slot] = ontology_.candidates(slot)[best];
  }
  return out;
}

template <typename T>
double Model<T>::dst_loss(const ContextInput& ctx, const DialogueState& gold) const {
  EncoderTrace<T> enc = encode(ctx);
  double loss = 0.0;
  for (size_t j = 0; j < ontology_.slot_count(); ++j) {
    const auto& slot = ontology_.slots()[j];
    int gold_index = ontology_.value_index(slot, gold.value_of(slot));
    if (gold_index < 0) fail("dst loss: gold value for slot '" + slot + "' not in ontology");
    std::vector<T> r = slot_feature(static_cast<int>(j), enc);
    std::vector<T> dists;
    if (config_.label_mode == LabelMode::Shared) {
      std::vector<std::vector<T>> reps;
      for (const auto& value : ontology_.candidates(slot))
        reps.push_back(label_rep_internal(value, nullptr));
      dists = l2_distances(std::span<const T>(r), reps);
    } else {
      dists = l2_distances(std::span<const T>(r), value_reps_cached(static_cast<int>(j)));
    }
    T nll = T(0);
    neg_distance_softmax(dists, gold_index, &nll);
    loss += static_cast<double>(nll);
  }
  return loss;
}

template <typename T>
LossBreakdown Model<T>::objective(std::span<const ObjectiveInstance> batch,
                                  const ObjectiveFlags& flags, bool with_grad, bool train_mode) {
  if (batch.empty()) fail("objective: empty batch");
  if (!flags.use_original && !flags.use_noised && !flags.use_contrastive)
    fail("objective: no loss component enabled");
  bool need_noised = flags.use_noised || flags.use_contrastive;
  bool need_original = flags.use_original || flags.use_contrastive;
  size_t n = batch.size();
  int d = config_.encoder.d_model;
  int heads = config_.encoder.n_heads;
  size_t n_slots = ontology_.slot_count();
  bool shared = config_.label_mode == LabelMode::Shared;
  bool dropout_on = train_mode && config_.encoder.dropout > 0.0;

  SharedLabelSession session(*this);
  SharedLabelSession* sess = shared ? &session : nullptr;

  // Label representations, one fetch per slot/value.
  std::vector<std::vector<T>> slot_reps(n_slots);
  std::vector<std::vector<std::vector<T>>> value_reps(n_slots);
  for (size_t j = 0; j < n_slots; ++j) {
    const auto& slot = ontology_.slots()[j];
    if (shared) {
      slot_reps[j] = label_rep_internal(slot, sess);
      for (const auto& value : ontology_.candidates(slot))
        value_reps[j].push_back(label_rep_internal(value, sess));
    } else {
      slot_reps[j] = slot_rep_cached(static_cast<int>(j));
      value_reps[j] = value_reps_cached(static_cast<int>(j));
    }
  }

  struct SlotData {
    SlotAttnTrace<T> sat;
    std::vector<T> probs;
    int gold = 0;
  };
  struct Pass {
    const ContextInput* ctx = nullptr;
    EncoderTrace<T> trace;
    std::vector<T> d_h;
    std::vector<SlotData> slots;
    double loss = 0.0;
  };

  size_t n_passes = need_noised ? 2 * n : n;
  std::vector<Pass> passes(n_passes);

  for (size_t i = 0; i < n; ++i) {
    passes[i].ctx = &batch[i].original;
    if (!need_original) continue;
    rng::Engine drop(rng::derive(batch[i].dropout_seed, "drop"));
    encoder_forward(context_, std::span<const int>(passes[i].ctx->ids), passes[i].trace,
                    dropout_on ? &drop : nullptr);
  }
  if (need_noised) {
    for (size_t i = 0; i < n; ++i) {
      if (!batch[i].noised.has_value())
        fail("objective: mode requires a noised context for every instance");
      Pass& p = passes[n + i];
      p.ctx = &*batch[i].noised;
      // Same dropout stream as the original pass, so p = 0 noise gives L_nos = L_ori exactly.
      rng::Engine drop(rng::derive(batch[i].dropout_seed, "drop"));
      encoder_forward(context_, std::span<const int>(p.ctx->ids), p.trace,
                      dropout_on ? &drop : nullptr);
    }
  }

  auto dst_forward = [&](Pass& pass, const DialogueState& gold) {
    pass.slots.resize(n_slots);
    for (size_t j = 0; j < n_slots; ++j) {
      const auto& slot = ontology_.slots()[j];
      SlotData& sd = pass.slots[j];
      sd.gold = ontology_.value_index(slot, gold.value_of(slot));
      if (sd.gold < 0) fail("objective: gold value for slot '" + slot + "' not in ontology");
      slot_attn_forward(head_, heads, std::span<const T>(slot_reps[j]), pass.trace.h,
                        pass.trace.len, d, sd.sat);
      std::vector<T> dists = l2_distances(std::span<const T>(sd.sat.r), value_reps[j]);
      T nll = T(0);
      sd.probs = neg_distance_softmax(dists, sd.gold, &nll);
      pass.loss += static_cast<double>(nll);
    }
  };

  double l_ori = 0.0, l_nos = 0.0;
  if (flags.use_original) {
    for (size_t i = 0; i < n; ++i) {
      dst_forward(passes[i], batch[i].gold);
      l_ori += passes[i].loss;
    }
    l_ori /= static_cast<double>(n);
  }
  if (flags.use_noised) {
    for (size_t i = 0; i < n; ++i) {
      dst_forward(passes[n + i], batch[i].gold);
      l_nos += passes[n + i].loss;
    }
    l_nos /= static_cast<double>(n);
  }

  double l_c = 0.0;
  std::vector<std::vector<T>> cls_grads;
  if (flags.use_contrastive) {
    std::vector<std::vector<T>> cls(2 * n);
    for (size_t i = 0; i < 2 * n; ++i)
      cls[i].assign(passes[i].trace.h.begin(), passes[i].trace.h.begin() + d);
    l_c = static_cast<double>(contrastive_loss(cls, static_cast<T>(config_.temperature),
                                               with_grad ? &cls_grads : nullptr));
  }

  LossBreakdown out;
  out.ori = l_ori;
  out.nos = l_nos;
  out.contrastive = l_c;
  if (flags.use_original) {
    out.total = total_loss(l_ori, l_nos, l_c, flags.use_noised, flags.use_contrastive);
  } else {
    // component isolation (gradient checks): the noised term alone
    out.total = (flags.use_noised ? l_nos : 0.0) + (flags.use_contrastive ? l_c : 0.0);
  }

  if (!with_grad) return out;

  double c_ori = flags.use_original ? (flags.use_noised ? 0.5 : 1.0) / static_cast<double>(n) : 0.0;
  double c_nos = flags.use_noised ? (flags.use_original ? 0.5 : 1.0) / static_cast<double>(n) : 0.0;

  auto dst_backward = [&](Pass& pass, double coeff) {
    for (size_t j = 0; j < n_slots; ++j) {
      SlotData& sd = pass.slots[j];
      size_t n_values = sd.probs.size();
      std::vector<T> d_r(static_cast<size_t>(d), T(0));
      for (size_t k = 0; k < n_values; ++k) {
        // d(coeff * nll)/d logit_k with logit = -distance
        T dlogit = static_cast<T>(coeff) *
                   (sd.probs[k] - (static_cast<int>(k) == sd.gold ? T(1) : T(0)));
        if (dlogit == T(0)) continue;
        T ddist = -dlogit;
        const std::vector<T>& hv = value_reps[j][k];
        T dist = T(0);
        for (int c = 0; c < d; ++c) {
          T diff = sd.sat.r[static_cast<size_t>(c)] - hv[static_cast<size_t>(c)];
          dist += diff * diff;
        }
        dist = std::max(std::sqrt(dist), static_cast<T>(1e-12));
        T scale = ddist / dist;
        for (int c = 0; c < d; ++c) {
          T diff = sd.sat.r[static_cast<size_t>(c)] - hv[static_cast<size_t>(c)];
          d_r[static_cast<size_t>(c)] += scale * diff;
        }
        if (shared) {
          std::vector<T> d_hv(static_cast<size_t>(d));
          for (int c = 0; c < d; ++c)
            d_hv[static_cast<size_t>(c)] =
                -scale * (sd.sat.r[static_cast<size_t>(c)] - hv[static_cast<size_t>(c)]);
          const auto& slot = ontology_.slots()[j];
          session.add_grad(ontology_.candidates(slot)[k], d_hv.data(), T(1));
        }
      }
      std::vector<T> d_slot(shared ? static_cast<size_t>(d) : 0, T(0));
      slot_attn_backward(head_, heads, std::span<const T>(slot_reps[j]), pass.trace.h, sd.sat,
                         std::span<const T>(d_r), pass.d_h, shared ? d_slot.data() : nullptr);
      if (shared) session.add_grad(ontology_.slots()[j], d_slot.data(), T(1));
    }
  };

  for (size_t i = 0; i < n_passes; ++i)
    passes[i].d_h.assign(passes[i].trace.h.size(), T(0));

  if (flags.use_original)
    for (size_t i = 0; i < n; ++i) dst_backward(passes[i], c_ori);
  if (flags.use_noised)
    for (size_t i = 0; i < n; ++i) dst_backward(passes[n + i], c_nos);
  if (flags.use_contrastive) {
    for (size_t i = 0; i < 2 * n; ++i)
      for (int c = 0; c < d; ++c)
        passes[i].d_h[static_cast<size_t>(c)] += cls_grads[i][static_cast<size_t>(c)];
  }

  for (size_t i = 0; i < n_passes; ++i) {
    bool any = false;
    for (T v : passes[i].d_h)
      if (v != T(0)) {
        any = true;
        break;
      }
    if (any)
      encoder_backward(context_, std::span<const int>(passes[i].ctx->ids), passes[i].trace,
                       passes[i].d_h);
  }

  if (shared) session.backprop(*this);
  return out;
}

template struct SlotAttnParams<float>;
template struct SlotAttnParams<double>;
template struct SlotAttnTrace<float>;
template struct SlotAttnTrace<double>;
template void slot_attn_forward<float>(const SlotAttnParams<float>&, int, std::span<const float>,
                                       const std::vector<float>&, int, int, SlotAttnTrace<float>&);
template void slot_attn_forward<double>(const SlotAttnParams<double>&, int, std::span<const double>,
                                        const std::vector<double>&, int, int,
                                        SlotAttnTrace<double>&);
template void slot_attn_backward<float>(SlotAttnParams<float>&, int, std::span<const float>,
                                        const std::vector<float>&, const SlotAttnTrace<float>&,
                                        std::span<const float>, std::vector<float>&, float*);
template void slot_attn_backward<double>(SlotAttnParams<double>&, int, std::span<const double>,
                                         const std::vector<double>&, const SlotAttnTrace<double>&,
                                         std::span<const double>, std::vector<double>&, double*);
template std::vector<float> l2_distances<float>(std::span<const float>,
                                                const std::vector<std::vector<float>>&);
template std::vector<double> l2_distances<double>(std::span<const double>,
                                                  const std::vector<std::vector<double>>&);
template std::vector<float> slot_value_distribution<float>(std::span<const float>,
                                                           const std::vector<std::vector<float>>&);
template std::vector<double> slot_value_distribution<double>(
    std::span<const double>, const std::vector<std::vector<double>>&);
template float contrastive_loss<float>(const std::vector<std::vector<float>>&, float,
                                       std::vector<std::vector<float>>*);
template double contrastive_loss<double>(const std::vector<std::vector<double>>&, double,
                                         std::vector<std::vector<double>>*);
template class Model<float>;
template class Model<double>;

}  // namespace nst
