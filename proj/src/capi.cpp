#include "nst.h"

#include <array>
#include <cstdlib>
#include <cstring>
#include <set>
#include <string>

#include "json.hpp"
#include "nst/common.hpp"
#include "nst/corpus.hpp"
#include "nst/infer.hpp"
#include "nst/metrics.hpp"
#include "nst/model.hpp"
#include "nst/train.hpp"

using nlohmann::json;

struct nst_model {
  nst::Checkpoint checkpoint;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

int set_error(int code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const nst::Error& e) {
    return set_error(NST_ERROR_RUNTIME, e.what());
  } catch (const std::exception& e) {
    return set_error(NST_ERROR_RUNTIME, e.what());
  } catch (...) {
    return set_error(NST_ERROR_RUNTIME, "unknown error");
  }
}

nst::SyntheticConfig synthetic_config_from_json(const std::string& text,
                                                std::array<double, 3>& fractions) {
  json j = text.empty() ? json::object() : json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) nst::fail("synthetic config: cannot parse JSON");
  static const std::set<std::string> known = {"n_dialogues", "n_slots", "values_per_slot",
                                              "min_turns",   "max_turns", "p_new_slot",
                                              "p_change",    "seed",      "fractions"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) nst::fail("synthetic config: unknown key '" + key + "'");
  nst::SyntheticConfig c;
  c.n_dialogues = j.value("n_dialogues", c.n_dialogues);
  c.n_slots = j.value("n_slots", c.n_slots);
  c.values_per_slot = j.value("values_per_slot", c.values_per_slot);
  c.min_turns = j.value("min_turns", c.min_turns);
  c.max_turns = j.value("max_turns", c.max_turns);
  c.p_new_slot = j.value("p_new_slot", c.p_new_slot);
  c.p_change = j.value("p_change", c.p_change);
  c.seed = j.value("seed", c.seed);
  if (j.contains("fractions")) {
    if (!j["fractions"].is_array() || j["fractions"].size() != 3)
      nst::fail("synthetic config: fractions must be [train, valid, test]");
    for (size_t i = 0; i < 3; ++i) fractions[i] = j["fractions"][i].get<double>();
  }
  c.validate();
  return c;
}

struct LoadedCorpusDir {
  nst::Ontology ontology;
  std::vector<nst::Dialogue> train;
  std::vector<nst::Dialogue> valid;
};

LoadedCorpusDir load_corpus_dir(const std::string& dir) {
  LoadedCorpusDir out;
  out.ontology = nst::load_ontology(dir + "/ontology.json");
  out.train = nst::load_corpus(dir + "/train.json", out.ontology);
  if (nst::file_exists(dir + "/valid.json"))
    out.valid = nst::load_corpus(dir + "/valid.json", out.ontology);
  return out;
}

}  // namespace

extern "C" {

const char* nst_version(void) { return "0.1.0"; }

const char* nst_last_error(void) { return g_last_error.c_str(); }

void nst_free(char* ptr) { std::free(ptr); }

int nst_generate_corpus(const char* config_json, const char* out_dir) {
  if (out_dir == nullptr) return set_error(NST_ERROR_INVALID_ARGUMENT, "out_dir is null");
  return guarded([&]() -> int {
    std::array<double, 3> fractions = {0.75, 0.125, 0.125};
    nst::SyntheticConfig config = synthetic_config_from_json(
        config_json == nullptr ? "{}" : config_json, fractions);
    nst::SyntheticCorpus corpus = nst::generate_synthetic_corpus(config);
    nst::SplitResult split = nst::split_corpus(corpus.dialogues, fractions, config.seed);
    std::string dir(out_dir);
    nst::write_file(dir + "/ontology.json", nst::ontology_to_json_text(corpus.ontology));
    nst::write_file(dir + "/train.json", nst::corpus_to_json_text(split.train));
    nst::write_file(dir + "/valid.json", nst::corpus_to_json_text(split.validation));
    nst::write_file(dir + "/test.json", nst::corpus_to_json_text(split.test));
    nst::write_file(dir + "/events.json", nst::events_to_json_text(corpus.events));
    return NST_OK;
  });
}

int nst_train(const char* config_json, const char* corpus_dir, const char* checkpoint_dir) {
  if (config_json == nullptr || corpus_dir == nullptr || checkpoint_dir == nullptr)
    return set_error(NST_ERROR_INVALID_ARGUMENT, "config_json, corpus_dir and checkpoint_dir are required");
  return guarded([&]() -> int {
    nst::TrainConfig config = nst::train_config_from_json_text(config_json, "train config");
    LoadedCorpusDir data = load_corpus_dir(corpus_dir);
    nst::TrainResult result = nst::train(config, data.train, data.valid, data.ontology);
    nst::save_checkpoint(result.best_model, &result.best_optimizer, config, result.best_epoch,
                         result.best_val, checkpoint_dir);
    nst::write_file(std::string(checkpoint_dir) + "/training_report.json",
                    nst::training_report_to_json_text(config, result));
    return NST_OK;
  });
}

int nst_sweep_noise_threshold(const char* config_json, const char* corpus_dir,
                              const double* thresholds, size_t n_thresholds, char** csv_out) {
  if (config_json == nullptr || corpus_dir == nullptr || thresholds == nullptr ||
      n_thresholds == 0 || csv_out == nullptr)
    return set_error(NST_ERROR_INVALID_ARGUMENT, "sweep requires config, corpus dir and thresholds");
  return guarded([&]() -> int {
    nst::TrainConfig base = nst::train_config_from_json_text(config_json, "train config");
    LoadedCorpusDir data = load_corpus_dir(corpus_dir);
    std::string csv = "noise_threshold,val_joint_accuracy\n";
    for (size_t i = 0; i < n_thresholds; ++i) {
      nst::TrainConfig config = base;
      config.noise_threshold = thresholds[i];
      nst::TrainResult result = nst::train(config, data.train, data.valid, data.ontology);
      csv += json(thresholds[i]).dump() + "," + json(result.best_val).dump() + "\n";
    }
    *csv_out = dup_string(csv);
    return *csv_out != nullptr ? NST_OK : set_error(NST_ERROR_RUNTIME, "out of memory");
  });
}

int nst_evaluate(const char* predictions_jsonl, const char* ontology_json,
                 const char* events_json, char** report_json_out) {
  if (predictions_jsonl == nullptr || ontology_json == nullptr || report_json_out == nullptr)
    return set_error(NST_ERROR_INVALID_ARGUMENT, "predictions and ontology paths are required");
  return guarded([&]() -> int {
    nst::Ontology ontology = nst::load_ontology(ontology_json);
    std::vector<nst::PredictionRecord> records =
        nst::read_predictions_jsonl(predictions_jsonl, ontology);
    nst::MetricsReport metrics = nst::compute_metrics(records);
    nst::MomentumReport momentum = nst::momentum_analysis(records);
    std::map<std::string, double> extra;
    if (events_json != nullptr) {
      nst::EventLog events =
          nst::events_from_json_text(nst::read_file(events_json), events_json);
      auto keys = nst::change_turn_keys(events);
      bool any_match = false;
      for (const auto& rec : records)
        if (keys.count({rec.dialogue_id, rec.turn_index})) any_match = true;
      if (any_match) extra["change_turn_joint"] = nst::joint_goal_accuracy_on(records, keys);
    }
    *report_json_out = dup_string(nst::metrics_report_to_json_text(metrics, momentum, extra));
    return *report_json_out != nullptr ? NST_OK : set_error(NST_ERROR_RUNTIME, "out of memory");
  });
}

int nst_momentum_report(const char* predictions_jsonl, const char* ontology_json,
                        char** report_json_out) {
  if (predictions_jsonl == nullptr || ontology_json == nullptr || report_json_out == nullptr)
    return set_error(NST_ERROR_INVALID_ARGUMENT, "predictions and ontology paths are required");
  return guarded([&]() -> int {
    nst::Ontology ontology = nst::load_ontology(ontology_json);
    std::vector<nst::PredictionRecord> records =
        nst::read_predictions_jsonl(predictions_jsonl, ontology);
    nst::MomentumReport momentum = nst::momentum_analysis(records);
    json j;
    j["wrong_pairs_total"] = momentum.wrong_pairs_total;
    j["wrong_pairs_carried"] = momentum.wrong_pairs_carried;
    j["momentum_proportion"] = momentum.momentum_proportion;
    j["gold_carryover_ratio"] = momentum.gold_carryover_ratio;
    *report_json_out = dup_string(j.dump(2) + "\n");
    return *report_json_out != nullptr ? NST_OK : set_error(NST_ERROR_RUNTIME, "out of memory");
  });
}

int nst_model_open(const char* checkpoint_dir, nst_model** out_model) {
  if (checkpoint_dir == nullptr || out_model == nullptr)
    return set_error(NST_ERROR_INVALID_ARGUMENT, "checkpoint_dir and out_model are required");
  return guarded([&]() -> int {
    auto* handle = new nst_model{nst::load_checkpoint(checkpoint_dir)};
    *out_model = handle;
    return NST_OK;
  });
}

void nst_model_close(nst_model* model) { delete model; }

int nst_model_predict(nst_model* model, const char* corpus_json, int oracle_prev_state,
                      const char* out_jsonl) {
  if (model == nullptr || corpus_json == nullptr || out_jsonl == nullptr)
    return set_error(NST_ERROR_INVALID_ARGUMENT, "model, corpus path and output path are required");
  return guarded([&]() -> int {
    std::vector<nst::Dialogue> corpus =
        nst::load_corpus(corpus_json, model->checkpoint.model.ontology());
    nst::RolloutOptions options;
    options.oracle_prev_state = oracle_prev_state != 0;
    options.include_state = model->checkpoint.config.include_state();
    nst::RolloutResult result = nst::rollout_corpus(model->checkpoint.model, corpus, options);
    nst::write_predictions_jsonl(out_jsonl, result.records);
    if (!result.issues.empty()) {
      const auto& issue = result.issues.front();
      return set_error(NST_ERROR_RUNTIME,
                       std::to_string(result.issues.size()) + " dialogue(s) failed, first: '" +
                           issue.dialogue_id + "' turn " + std::to_string(issue.turn_index) +
                           ": " + issue.message);
    }
    return NST_OK;
  });
}

int nst_model_probe_noise(nst_model* model, const char* corpus_json, const double* ratios,
                          size_t n_ratios, uint64_t seed, char** csv_out) {
  if (model == nullptr || corpus_json == nullptr || ratios == nullptr || n_ratios == 0 ||
      csv_out == nullptr)
    return set_error(NST_ERROR_INVALID_ARGUMENT, "model, corpus path and ratios are required");
  return guarded([&]() -> int {
    std::vector<nst::Dialogue> corpus =
        nst::load_corpus(corpus_json, model->checkpoint.model.ontology());
    std::vector<nst::NoiseProbePoint> points =
        nst::noise_probe(model->checkpoint.model, corpus, std::span<const double>(ratios, n_ratios),
                         seed, model->checkpoint.config.allow_none_noise);
    *csv_out = dup_string(nst::probe_points_to_csv(points));
    return *csv_out != nullptr ? NST_OK : set_error(NST_ERROR_RUNTIME, "out of memory");
  });
}

int nst_model_attention(nst_model* model, const char* corpus_json, const char* dialogue_id,
                        int turn_index, const char* slot, int oracle_prev_state, char** json_out) {
  if (model == nullptr || corpus_json == nullptr || dialogue_id == nullptr || slot == nullptr ||
      json_out == nullptr)
    return set_error(NST_ERROR_INVALID_ARGUMENT,
                     "model, corpus path, dialogue id and slot are required");
  return guarded([&]() -> int {
    const nst::Model<float>& m = model->checkpoint.model;
    std::vector<nst::Dialogue> corpus = nst::load_corpus(corpus_json, m.ontology());
    const nst::Dialogue* dialogue = nullptr;
    for (const auto& d : corpus)
      if (d.id == dialogue_id) dialogue = &d;
    if (dialogue == nullptr) nst::fail("attention: dialogue '" + std::string(dialogue_id) + "' not found");
    if (turn_index < 1 || static_cast<size_t>(turn_index) > dialogue->turns.size())
      nst::fail("attention: turn index " + std::to_string(turn_index) + " out of range");

    // Previous state at the requested turn: gold in oracle mode, otherwise the
    // model's own rollout prediction.
    nst::DialogueState prev = nst::all_none_state(m.ontology());
    if (turn_index > 1) {
      if (oracle_prev_state != 0) {
        prev = dialogue->turns[static_cast<size_t>(turn_index) - 2].gold_state;
      } else {
        nst::RolloutResult rollout = nst::rollout_dialogue(m, *dialogue);
        for (const auto& rec : rollout.records)
          if (rec.turn_index == turn_index - 1) prev = rec.pred;
      }
    }
    nst::TurnContextFields fields;
    for (int t = 0; t < turn_index - 1; ++t)
      fields.history.emplace_back(dialogue->turns[static_cast<size_t>(t)].system,
                                  dialogue->turns[static_cast<size_t>(t)].user);
    fields.prev_state = prev;
    fields.system = dialogue->turns[static_cast<size_t>(turn_index) - 1].system;
    fields.user = dialogue->turns[static_cast<size_t>(turn_index) - 1].user;
    nst::ContextInput ctx = nst::build_context_input(
        fields, m.vocab(), m.config().encoder.max_len, model->checkpoint.config.include_state());
    nst::AttentionExport att = nst::attention_export(m, ctx, slot);
    *json_out = dup_string(nst::attention_export_to_json_text(att));
    return *json_out != nullptr ? NST_OK : set_error(NST_ERROR_RUNTIME, "out of memory");
  });
}

}  // extern "C"
