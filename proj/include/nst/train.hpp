#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nst/corpus.hpp"
#include "nst/model.hpp"

namespace nst {

enum class TrainMode { Baseline, BaselineNoState, MonetSt, MonetCm, Monet };

TrainMode train_mode_from_string(const std::string& s);
std::string to_string(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::Monet;
  int batch_size = 8;
  int epochs = 20;
  double lr_encoder = 4e-5;
  double lr_heads = 1e-4;
  double weight_decay = 0.01;
  double noise_threshold = 0.3;  // p
  double temperature = 0.1;      // tau
  uint64_t seed = 1;
  std::string checkpoint_dir;
  bool allow_none_noise = false;
  LabelMode label_mode = LabelMode::FrozenCopy;
  EncoderConfig encoder;

  void validate() const;
  ObjectiveFlags objective_flags() const;
  bool uses_noise() const;
  bool include_state() const;  // false only for baseline_no_state
  ModelConfig model_config() const;
};

TrainConfig train_config_from_json_text(const std::string& text, const std::string& origin);
std::string train_config_to_json_text(const TrainConfig& config);

/// One teacher-forcing instance per turn of every dialogue; turn 1 uses the
/// all-"none" previous state, turn t>1 the gold state of turn t-1.
struct TrainingInstance {
  std::string dialogue_id;
  int turn_index = 0;  // 1-based
  TurnContextFields fields;
  DialogueState gold;
};

std::vector<TrainingInstance> make_training_instances(const std::vector<Dialogue>& corpus,
                                                      const Ontology& ontology);

/// Decoupled-weight-decay Adam. Biases and layer-norm parameters are excluded
/// from decay; the learning rate is per parameter group (encoder vs heads).
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(double lr_encoder, double lr_heads, double weight_decay);

  void step(std::vector<ParamRef<T>>& params);

  int64_t step_count() const { return t_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void restore(int64_t step, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v);

 private:
  double lr_encoder_ = 4e-5, lr_heads_ = 1e-4, weight_decay_ = 0.01;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct EpochStats {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_ori = 0.0;
  double loss_nos = 0.0;
  double loss_contrastive = 0.0;
  double val_joint = 0.0;
};

struct TrainResult {
  Model<float> best_model;
  int best_epoch = 0;
  double best_val = 0.0;
  AdamW<float> best_optimizer;  // optimizer state as of the best epoch
  Model<float> final_model;
  AdamW<float> final_optimizer;
  std::vector<EpochStats> history;
};

struct Checkpoint {
  TrainConfig config;
  Model<float> model;
  int epoch = 0;
  double best_val = 0.0;
  bool has_optimizer = false;
  AdamW<float> optimizer;
};

/// Trains on the given split. With resume != nullptr, continues from the
/// checkpointed epoch with the stored parameters and optimizer state; the
/// derived RNG streams make the continued trajectory identical to an
/// uninterrupted run.
TrainResult train(const TrainConfig& config, const std::vector<Dialogue>& train_set,
                  const std::vector<Dialogue>& val_set, const Ontology& ontology,
                  const Checkpoint* resume = nullptr);

void save_checkpoint(const Model<float>& model, const AdamW<float>* optimizer,
                     const TrainConfig& config, int epoch, double best_val,
                     const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

std::string training_report_to_json_text(const TrainConfig& config, const TrainResult& result);

}  // namespace nst
