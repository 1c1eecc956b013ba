#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nst/encoder.hpp"
#include "nst/ontology.hpp"
#include "nst/text.hpp"

namespace nst {

enum class LabelMode { FrozenCopy, Shared };

struct ModelConfig {
  EncoderConfig encoder;
  double temperature = 0.1;
  LabelMode label_mode = LabelMode::FrozenCopy;

  void validate() const;
};

/// Multi-head attention with a single query (the slot representation) over the
/// token representations, followed by layer norm. No residual.
template <typename T>
struct SlotAttnParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo, ln_g, ln_b;

  void init(int d, rng::Engine& eng);
  void collect(const std::string& prefix, ParamGroup group, std::vector<ParamRef<T>>& out);
};

template <typename T>
struct SlotAttnTrace {
  int len = 0;
  std::vector<T> q;       // 1×d
  std::vector<T> k, v;    // L×d
  std::vector<T> probs;   // heads×L, each head row sums to 1
  std::vector<T> concat;  // 1×d
  std::vector<T> o;       // 1×d, pre-layer-norm
  std::vector<T> r;       // 1×d, the slot-context feature
  T ln_mean = T(0), ln_invstd = T(0);

  /// Head-averaged attention weights over tokens (length L, sums to 1).
  std::vector<T> mean_weights() const;
};

template <typename T>
void slot_attn_forward(const SlotAttnParams<T>& params, int n_heads, std::span<const T> h_slot,
                       const std::vector<T>& h_tokens, int len, int d, SlotAttnTrace<T>& trace);

/// Accumulates parameter grads; adds dL/dH into d_tokens and (when non-null)
/// dL/dh_slot into d_slot.
template <typename T>
void slot_attn_backward(SlotAttnParams<T>& params, int n_heads, std::span<const T> h_slot,
                        const std::vector<T>& h_tokens, const SlotAttnTrace<T>& trace,
                        std::span<const T> d_r, std::vector<T>& d_tokens, T* d_slot);

/// softmax over negated L2 distances between r and each candidate
/// representation, max-stabilized.
template <typename T>
std::vector<T> l2_distances(std::span<const T> r, const std::vector<std::vector<T>>& value_reps);

template <typename T>
std::vector<T> slot_value_distribution(std::span<const T> r,
                                       const std::vector<std::vector<T>>& value_reps);

/// Temperature-scaled contrastive loss over 2N ordered [CLS] representations
/// (originals 1..N then their noised variants). Positive of anchor n is its
/// paired variant; the denominator runs over the other 2N-1 representations;
/// the result is the mean over all 2N anchors. Cosine similarity; a zero
/// vector is an error.
template <typename T>
T contrastive_loss(const std::vector<std::vector<T>>& cls_reps, T tau,
                   std::vector<std::vector<T>>* grad = nullptr);

/// L_tot = (L_ori + L_nos)/2 + L_c, with ablation switches that drop the
/// noised term (leaving L_ori alone) and/or the contrastive term.
double total_loss(double l_ori, double l_nos, double l_c, bool use_noised, bool use_contrastive);

struct ObjectiveFlags {
  bool use_original = true;
  bool use_noised = false;
  bool use_contrastive = false;
};

struct ObjectiveInstance {
  ContextInput original;
  std::optional<ContextInput> noised;
  DialogueState gold;
  uint64_t dropout_seed = 0;
};

struct LossBreakdown {
  double ori = 0.0;
  double nos = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

/// The tracker: trainable context encoder, frozen label encoder (or shared,
/// per config), slot-context attention head, and the matching losses.
template <typename T>
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, Ontology ontology, Vocabulary vocab, uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  const Ontology& ontology() const { return ontology_; }
  const Vocabulary& vocab() const { return vocab_; }

  EncoderParams<T>& context_encoder() { return context_; }
  const EncoderParams<T>& context_encoder() const { return context_; }
  EncoderParams<T>& label_encoder() { return label_; }
  const EncoderParams<T>& label_encoder() const { return label_; }
  SlotAttnParams<T>& head() { return head_; }

  std::vector<ParamRef<T>> trainable_params();
  void zero_grad();

  /// Evaluation-mode encoder pass over a context input.
  EncoderTrace<T> encode(const ContextInput& ctx) const;

  /// [CLS]-row representation of "[CLS] text [SEP]" under the label encoder.
  /// Cached per text in frozen mode.
  std::vector<T> label_rep(const std::string& text) const;
  size_t label_cache_hits() const { return cache_hits_; }
  size_t label_cache_misses() const { return cache_misses_; }

  /// Slot-context feature r for one slot given an encoded context.
  std::vector<T> slot_feature(int slot_index, const EncoderTrace<T>& enc,
                              SlotAttnTrace<T>* trace_out = nullptr) const;

  std::vector<T> slot_distribution(int slot_index, const EncoderTrace<T>& enc) const;

  DialogueState predict_state(const ContextInput& ctx) const;
  DialogueState predict_from(const EncoderTrace<T>& enc) const;

  /// Per-turn tracking loss: sum over slots of -log P(gold value).
  double dst_loss(const ContextInput& ctx, const DialogueState& gold) const;

  /// Batch objective with optional gradient accumulation. train_mode enables
  /// dropout (streams derived from each instance's dropout_seed; the original
  /// and noised passes of one instance share a stream).
  LossBreakdown objective(std::span<const ObjectiveInstance> batch, const ObjectiveFlags& flags,
                          bool with_grad, bool train_mode);

 private:
  struct SharedLabelSession;

  std::vector<T> label_rep_internal(const std::string& text, SharedLabelSession* session) const;
  const std::vector<T>& slot_rep_cached(int slot_index) const;
  const std::vector<std::vector<T>>& value_reps_cached(int slot_index) const;

  ModelConfig config_;
  Ontology ontology_;
  Vocabulary vocab_;
  EncoderParams<T> context_;
  EncoderParams<T> label_;
  SlotAttnParams<T> head_;

  mutable std::map<std::string, std::vector<T>> label_cache_;
  mutable std::vector<std::vector<T>> slot_rep_cache_;
  mutable std::vector<std::vector<std::vector<T>>> value_rep_cache_;
  mutable size_t cache_hits_ = 0;
  mutable size_t cache_misses_ = 0;
};

}  // namespace nst
