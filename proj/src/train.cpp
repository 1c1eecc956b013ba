#include "nst/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <set>

#include "json.hpp"
#include "nst/infer.hpp"
#include "nst/metrics.hpp"
#include "nst/noise.hpp"

namespace nst {

using nlohmann::json;

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "baseline") return TrainMode::Baseline;
  if (s == "baseline_no_state") return TrainMode::BaselineNoState;
  if (s == "monet_st") return TrainMode::MonetSt;
  if (s == "monet_cm") return TrainMode::MonetCm;
  if (s == "monet") return TrainMode::Monet;
  fail("unknown training mode '" + s +
       "' (expected baseline, baseline_no_state, monet_st, monet_cm or monet)");
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Baseline: return "baseline";
    case TrainMode::BaselineNoState: return "baseline_no_state";
    case TrainMode::MonetSt: return "monet_st";
    case TrainMode::MonetCm: return "monet_cm";
    case TrainMode::Monet: return "monet";
  }
  fail("invalid training mode");
}

void TrainConfig::validate() const {
  if (batch_size < 1) fail("train config: batch_size must be >= 1");
  if (epochs < 1) fail("train config: epochs must be >= 1");
  if (lr_encoder <= 0.0 || lr_heads <= 0.0) fail("train config: learning rates must be > 0");
  if (weight_decay < 0.0) fail("train config: weight_decay must be >= 0");
  if (noise_threshold < 0.0 || noise_threshold > 1.0)
    fail("train config: noise_threshold must be in [0,1]");
  if (temperature <= 0.0) fail("train config: temperature must be > 0");
  encoder.validate();
}

ObjectiveFlags TrainConfig::objective_flags() const {
  switch (mode) {
    case TrainMode::Baseline:
    case TrainMode::BaselineNoState: return {true, false, false};
    case TrainMode::MonetSt: return {true, true, false};
    case TrainMode::MonetCm: return {true, false, true};
    case TrainMode::Monet: return {true, true, true};
  }
  fail("invalid training mode");
}

bool TrainConfig::uses_noise() const {
  return mode == TrainMode::MonetSt || mode == TrainMode::MonetCm || mode == TrainMode::Monet;
}

bool TrainConfig::include_state() const { return mode != TrainMode::BaselineNoState; }

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.encoder = encoder;
  mc.temperature = temperature;
  mc.label_mode = label_mode;
  return mc;
}

TrainConfig train_config_from_json_text(const std::string& text, const std::string& origin) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail("train config: cannot parse JSON from " + origin);

  TrainConfig c;
  static const std::set<std::string> known = {
      "mode",        "batch_size",   "epochs",          "lr_encoder",
      "lr_heads",    "weight_decay", "noise_threshold", "temperature",
      "seed",        "checkpoint_dir", "allow_none_noise", "label_encoder",
      "encoder"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) fail("train config: unknown key '" + key + "' in " + origin);

  if (j.contains("mode")) c.mode = train_mode_from_string(j["mode"].get<std::string>());
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr_encoder = j.value("lr_encoder", c.lr_encoder);
  c.lr_heads = j.value("lr_heads", c.lr_heads);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.noise_threshold = j.value("noise_threshold", c.noise_threshold);
  c.temperature = j.value("temperature", c.temperature);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
  c.allow_none_noise = j.value("allow_none_noise", c.allow_none_noise);
  if (j.contains("label_encoder")) {
    std::string m = j["label_encoder"].get<std::string>();
    if (m == "frozen_copy")
      c.label_mode = LabelMode::FrozenCopy;
    else if (m == "shared")
      c.label_mode = LabelMode::Shared;
    else
      fail("train config: label_encoder must be 'frozen_copy' or 'shared'");
  }
  if (j.contains("encoder")) {
    const json& e = j["encoder"];
    static const std::set<std::string> known_enc = {"n_layers", "n_heads", "d_model",
                                                    "d_ff",     "max_len", "dropout"};
    for (const auto& [key, _] : e.items())
      if (!known_enc.count(key)) fail("train config: unknown encoder key '" + key + "' in " + origin);
    c.encoder.n_layers = e.value("n_layers", c.encoder.n_layers);
    c.encoder.n_heads = e.value("n_heads", c.encoder.n_heads);
    c.encoder.d_model = e.value("d_model", c.encoder.d_model);
    c.encoder.d_ff = e.value("d_ff", c.encoder.d_ff);
    c.encoder.max_len = e.value("max_len", c.encoder.max_len);
    c.encoder.dropout = e.value("dropout", c.encoder.dropout);
  }
  c.validate();
  return c;
}

std::string train_config_to_json_text(const TrainConfig& c) {
  json j;
  j["mode"] = to_string(c.mode);
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lr_encoder"] = c.lr_encoder;
  j["lr_heads"] = c.lr_heads;
  j["weight_decay"] = c.weight_decay;
  j["noise_threshold"] = c.noise_threshold;
  j["temperature"] = c.temperature;
  j["seed"] = c.seed;
  j["checkpoint_dir"] = c.checkpoint_dir;
  j["allow_none_noise"] = c.allow_none_noise;
  j["label_encoder"] = c.label_mode == LabelMode::Shared ? "shared" : "frozen_copy";
  j["encoder"] = {{"n_layers", c.encoder.n_layers}, {"n_heads", c.encoder.n_heads},
                  {"d_model", c.encoder.d_model},   {"d_ff", c.encoder.d_ff},
                  {"max_len", c.encoder.max_len},   {"dropout", c.encoder.dropout}};
  return j.dump(2) + "\n";
}

std::vector<TrainingInstance> make_training_instances(const std::vector<Dialogue>& corpus,
                                                      const Ontology& ontology) {
  std::vector<TrainingInstance> out;
  for (const auto& dialogue : corpus) {
    TurnContextFields fields;
    for (size_t t = 0; t < dialogue.turns.size(); ++t) {
      const Turn& turn = dialogue.turns[t];
      TrainingInstance inst;
      inst.dialogue_id = dialogue.id;
      inst.turn_index = static_cast<int>(t) + 1;
      inst.fields = fields;
      inst.fields.prev_state =
          t == 0 ? all_none_state(ontology) : dialogue.turns[t - 1].gold_state;
      inst.fields.system = turn.system;
      inst.fields.user = turn.user;
      inst.gold = turn.gold_state;
      out.push_back(std::move(inst));
      fields.history.emplace_back(turn.system, turn.user);
    }
  }
  return out;
}

template <typename T>
AdamW<T>::AdamW(double lr_encoder, double lr_heads, double weight_decay)
    : lr_encoder_(lr_encoder), lr_heads_(lr_heads), weight_decay_(weight_decay) {}

template <typename T>
void AdamW<T>::step(std::vector<ParamRef<T>>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].tensor->size(), T(0));
      v_[i].assign(params[i].tensor->size(), T(0));
    }
  }
  if (m_.size() != params.size()) fail("optimizer: parameter list changed between steps");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& tensor = *params[i].tensor;
    if (m_[i].size() != tensor.size()) fail("optimizer: parameter shape changed between steps");
    double lr = params[i].group == ParamGroup::Head ? lr_heads_ : lr_encoder_;
    double wd = params[i].decay ? weight_decay_ : 0.0;
    for (size_t k = 0; k < tensor.size(); ++k) {
      double g = static_cast<double>(tensor.g[k]);
      double m = beta1_ * static_cast<double>(m_[i][k]) + (1.0 - beta1_) * g;
      double v = beta2_ * static_cast<double>(v_[i][k]) + (1.0 - beta2_) * g * g;
      m_[i][k] = static_cast<T>(m);
      v_[i][k] = static_cast<T>(v);
      double update = (m / bc1) / (std::sqrt(v / bc2) + eps_) + wd * static_cast<double>(tensor.w[k]);
      tensor.w[k] = static_cast<T>(static_cast<double>(tensor.w[k]) - lr * update);
    }
  }
}

template <typename T>
void AdamW<T>::restore(int64_t step, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v) {
  t_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class AdamW<float>;
template class AdamW<double>;

namespace {

double validation_joint_accuracy(const Model<float>& model, const std::vector<Dialogue>& val_set,
                                 bool include_state) {
  if (val_set.empty()) return 0.0;
  RolloutOptions options;
  options.include_state = include_state;
  RolloutResult rollout = rollout_corpus(model, val_set, options);
  if (rollout.records.empty()) return 0.0;
  return joint_goal_accuracy(rollout.records);
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<Dialogue>& train_set,
                  const std::vector<Dialogue>& val_set, const Ontology& ontology,
                  const Checkpoint* resume) {
  config.validate();
  if (train_set.empty()) fail("train: empty training corpus");

  Model<float> model;
  AdamW<float> optimizer(config.lr_encoder, config.lr_heads, config.weight_decay);
  int start_epoch = 1;
  double best_val = -1.0;
  int best_epoch = 0;

  if (resume != nullptr) {
    model = resume->model;
    if (!resume->has_optimizer) fail("train: resume checkpoint lacks optimizer state");
    optimizer = resume->optimizer;
    start_epoch = resume->epoch + 1;
    best_val = resume->best_val;
    best_epoch = resume->epoch;
  } else {
    Vocabulary vocab = build_vocab(train_set, ontology);
    model = Model<float>(config.model_config(), ontology, vocab, config.seed);
  }

  std::vector<TrainingInstance> instances = make_training_instances(train_set, ontology);
  NoiseConfig noise_cfg{config.noise_threshold, config.allow_none_noise};
  ObjectiveFlags flags = config.objective_flags();
  bool with_noise = config.uses_noise();
  bool include_state = config.include_state();
  int max_len = config.encoder.max_len;

  TrainResult result;
  result.best_model = model;
  result.best_epoch = best_epoch;
  result.best_val = best_val;
  result.best_optimizer = optimizer;

  std::vector<ParamRef<float>> params = model.trainable_params();

  for (int epoch = start_epoch; epoch <= config.epochs; ++epoch) {
    std::vector<size_t> order(instances.size());
    std::iota(order.begin(), order.end(), size_t{0});
    rng::Engine shuffle_eng(rng::derive(config.seed, "shuffle", static_cast<uint64_t>(epoch)));
    shuffle_eng.shuffle(order);

    double sum_total = 0.0, sum_ori = 0.0, sum_nos = 0.0, sum_c = 0.0;
    size_t seen = 0;

    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(config.batch_size)) {
      size_t end = std::min(order.size(), begin + static_cast<size_t>(config.batch_size));
      std::vector<ObjectiveInstance> batch;
      batch.reserve(end - begin);
      for (size_t pos = begin; pos < end; ++pos) {
        size_t idx = order[pos];
        const TrainingInstance& inst = instances[idx];
        ObjectiveInstance obj;
        obj.original = build_context_input(inst.fields, model.vocab(), max_len, include_state);
        if (with_noise) {
          rng::Engine noise_eng(
              rng::derive(config.seed, "noise", static_cast<uint64_t>(epoch), idx));
          NoisedState noised = noise_state(inst.fields.prev_state, model.ontology(), noise_cfg,
                                           noise_eng);
          TurnContextFields noised_fields = inst.fields;
          noised_fields.prev_state = noised.state;
          obj.noised = build_context_input(noised_fields, model.vocab(), max_len, include_state);
        }
        obj.gold = inst.gold;
        obj.dropout_seed = rng::derive(config.seed, "dropout", static_cast<uint64_t>(epoch), idx);
        batch.push_back(std::move(obj));
      }

      model.zero_grad();
      LossBreakdown loss = model.objective(batch, flags, /*with_grad=*/true, /*train_mode=*/true);
      if (!std::isfinite(loss.total))
        fail("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      optimizer.step(params);

      double w = static_cast<double>(end - begin);
      sum_total += loss.total * w;
      sum_ori += loss.ori * w;
      sum_nos += loss.nos * w;
      sum_c += loss.contrastive * w;
      seen += end - begin;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss_total = sum_total / static_cast<double>(seen);
    stats.loss_ori = sum_ori / static_cast<double>(seen);
    stats.loss_nos = sum_nos / static_cast<double>(seen);
    stats.loss_contrastive = sum_c / static_cast<double>(seen);
    stats.val_joint = validation_joint_accuracy(model, val_set, include_state);
    result.history.push_back(stats);

    bool improved = val_set.empty() || stats.val_joint > best_val || best_epoch == 0;
    if (improved) {
      best_val = stats.val_joint;
      best_epoch = epoch;
      result.best_model = model;
      result.best_optimizer = optimizer;
    }
  }

  result.best_epoch = best_epoch;
  result.best_val = best_val;
  result.final_model = std::move(model);
  result.final_optimizer = std::move(optimizer);
  return result;
}

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kParamsName = "params.bin";
constexpr const char* kOptimizerName = "optimizer.bin";

void append_f32_le(std::string& out, float value) {
  uint32_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float read_f32_le(const std::string& data, size_t offset) {
  uint32_t bits = static_cast<uint8_t>(data[offset]) |
                  (static_cast<uint32_t>(static_cast<uint8_t>(data[offset + 1])) << 8) |
                  (static_cast<uint32_t>(static_cast<uint8_t>(data[offset + 2])) << 16) |
                  (static_cast<uint32_t>(static_cast<uint8_t>(data[offset + 3])) << 24);
  float value;
  std::memcpy(&value, &bits, sizeof(value));
  return value;
}

std::vector<ParamRef<float>> all_params(Model<float>& model) {
  std::vector<ParamRef<float>> out;
  model.context_encoder().collect("context", ParamGroup::Encoder, out);
  model.label_encoder().collect("label", ParamGroup::Encoder, out);
  model.head().collect("head", ParamGroup::Head, out);
  return out;
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace

void save_checkpoint(const Model<float>& model, const AdamW<float>* optimizer,
                     const TrainConfig& config, int epoch, double best_val,
                     const std::string& dir) {
  std::filesystem::create_directories(dir);
  Model<float>& m = const_cast<Model<float>&>(model);  // collect() needs mutable tensors
  std::vector<ParamRef<float>> params = all_params(m);

  json manifest;
  manifest["format"] = "nst-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float32";
  manifest["train_config"] = json::parse(train_config_to_json_text(config));
  manifest["epoch"] = epoch;
  manifest["best_val_joint"] = best_val;
  manifest["vocab_hash"] = hex64(vocab_hash(model.vocab()));
  manifest["rng"] = {{"seed", config.seed}, {"next_epoch", epoch + 1}};

  json param_list = json::array();
  std::string blob;
  for (const auto& p : params) {
    param_list.push_back({{"name", p.name}, {"rows", p.tensor->rows}, {"cols", p.tensor->cols}});
    for (float w : p.tensor->w) append_f32_le(blob, w);
  }
  manifest["params"] = std::move(param_list);

  json opt;
  opt["present"] = optimizer != nullptr;
  if (optimizer != nullptr) opt["step"] = optimizer->step_count();
  manifest["optimizer"] = std::move(opt);

  write_file(dir + "/" + kManifestName, manifest.dump(2) + "\n");
  write_file(dir + "/" + kParamsName, blob);
  write_file(dir + "/vocab.json", vocab_to_json_text(model.vocab()));
  write_file(dir + "/ontology.json", ontology_to_json_text(model.ontology()));

  if (optimizer != nullptr) {
    // Optimizer moments cover the trainable parameters only, in collect order.
    std::string opt_blob;
    const auto& ms = optimizer->first_moments();
    const auto& vs = optimizer->second_moments();
    std::vector<ParamRef<float>> trainable = m.trainable_params();
    if (!ms.empty() && ms.size() != trainable.size())
      fail("checkpoint: optimizer state does not match the trainable parameter list");
    for (size_t i = 0; i < ms.size(); ++i) {
      for (float w : ms[i]) append_f32_le(opt_blob, w);
      for (float w : vs[i]) append_f32_le(opt_blob, w);
    }
    write_file(dir + "/" + kOptimizerName, opt_blob);
  }
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::string manifest_text = read_file(dir + "/" + kManifestName);
  json manifest = json::parse(manifest_text, nullptr, false);
  if (manifest.is_discarded()) fail("checkpoint: cannot parse manifest in " + dir);
  if (manifest.value("format", std::string()) != "nst-checkpoint")
    fail("checkpoint: unrecognized format in " + dir);
  if (manifest.value("version", 0) != 1) fail("checkpoint: unsupported version in " + dir);
  if (manifest.value("dtype", std::string()) != "float32")
    fail("checkpoint: unsupported dtype in " + dir);

  Checkpoint out;
  out.config = train_config_from_json_text(manifest["train_config"].dump(), dir + "/manifest.json");
  out.epoch = manifest.value("epoch", 0);
  out.best_val = manifest.value("best_val_joint", 0.0);

  Vocabulary vocab = vocab_from_json_text(read_file(dir + "/vocab.json"), dir + "/vocab.json");
  if (manifest.contains("vocab_hash") &&
      manifest["vocab_hash"].get<std::string>() != hex64(vocab_hash(vocab)))
    fail("checkpoint: vocabulary hash mismatch in " + dir);
  Ontology ontology = load_ontology(dir + "/ontology.json");

  out.model = Model<float>(out.config.model_config(), ontology, vocab, /*init_seed=*/0);
  std::vector<ParamRef<float>> params = all_params(out.model);

  if (!manifest.contains("params") || !manifest["params"].is_array() ||
      manifest["params"].size() != params.size())
    fail("checkpoint: parameter list mismatch in " + dir);
  size_t expected_bytes = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    const json& jp = manifest["params"][i];
    if (jp.value("name", std::string()) != params[i].name ||
        jp.value("rows", -1) != params[i].tensor->rows ||
        jp.value("cols", -1) != params[i].tensor->cols)
      fail("checkpoint: shape mismatch for parameter '" + params[i].name + "' in " + dir);
    expected_bytes += params[i].tensor->size() * 4;
  }

  std::string blob = read_file(dir + "/" + kParamsName);
  if (blob.size() != expected_bytes)
    fail("checkpoint: params.bin has " + std::to_string(blob.size()) + " bytes, expected " +
         std::to_string(expected_bytes));
  size_t offset = 0;
  for (auto& p : params) {
    for (auto& w : p.tensor->w) {
      w = read_f32_le(blob, offset);
      offset += 4;
    }
  }

  out.has_optimizer = manifest.contains("optimizer") && manifest["optimizer"].value("present", false);
  if (out.has_optimizer) {
    std::vector<ParamRef<float>> trainable = out.model.trainable_params();
    std::string opt_blob = read_file(dir + "/" + kOptimizerName);
    size_t need = 0;
    for (const auto& p : trainable) need += p.tensor->size() * 8;
    if (opt_blob.size() != need)
      fail("checkpoint: optimizer.bin has " + std::to_string(opt_blob.size()) +
           " bytes, expected " + std::to_string(need));
    std::vector<std::vector<float>> ms(trainable.size()), vs(trainable.size());
    size_t pos = 0;
    for (size_t i = 0; i < trainable.size(); ++i) {
      ms[i].resize(trainable[i].tensor->size());
      vs[i].resize(trainable[i].tensor->size());
      for (auto& w : ms[i]) {
        w = read_f32_le(opt_blob, pos);
        pos += 4;
      }
      for (auto& w : vs[i]) {
        w = read_f32_le(opt_blob, pos);
        pos += 4;
      }
    }
    out.optimizer = AdamW<float>(out.config.lr_encoder, out.config.lr_heads,
                                 out.config.weight_decay);
    out.optimizer.restore(manifest["optimizer"].value("step", int64_t{0}), std::move(ms),
                          std::move(vs));
  }
  return out;
}

std::string training_report_to_json_text(const TrainConfig& config, const TrainResult& result) {
  json epochs = json::array();
  for (const auto& s : result.history) {
    epochs.push_back({{"epoch", s.epoch},
                      {"loss_total", s.loss_total},
                      {"loss_ori", s.loss_ori},
                      {"loss_nos", s.loss_nos},
                      {"loss_contrastive", s.loss_contrastive},
                      {"val_joint", s.val_joint}});
  }
  json j;
  j["config"] = json::parse(train_config_to_json_text(config));
  j["epochs"] = std::move(epochs);
  j["best_epoch"] = result.best_epoch;
  j["best_val_joint"] = result.best_val;
  return j.dump(2) + "\n";
}

}  // namespace nst
