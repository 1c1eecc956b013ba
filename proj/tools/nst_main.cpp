// Command-line front end over the nst shared-library C API.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nst.h"

namespace {

using nlohmann::json;

int die(const std::string& what) {
  std::cerr << "error: " << what << ": " << nst_last_error() << "\n";
  return 2;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    std::exit(2);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    std::cerr << "error: cannot write " << path << "\n";
    std::exit(2);
  }
  out << content;
}

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

void emit(const std::string& content, const std::string& out_path) {
  if (out_path.empty())
    std::cout << content;
  else
    spit(out_path, content);
}

// Owned C string wrapper.
struct CStr {
  char* p = nullptr;
  ~CStr() { nst_free(p); }
  std::string str() const { return p == nullptr ? std::string() : std::string(p); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nst — noise-enhanced dialogue state tracker"};
  app.require_subcommand(1);

  // generate-corpus
  auto* gen = app.add_subcommand("generate-corpus", "Generate a synthetic dialogue corpus");
  std::string gen_config, gen_out, gen_fractions;
  int gen_dialogues = -1, gen_slots = -1, gen_values = -1, gen_min_turns = -1, gen_max_turns = -1;
  double gen_p_new = -1.0, gen_p_change = -1.0;
  int64_t gen_seed = -1;
  gen->add_option("--config", gen_config, "Synthetic config JSON file");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n-dialogues", gen_dialogues, "Number of dialogues");
  gen->add_option("--n-slots", gen_slots, "Number of slots");
  gen->add_option("--values-per-slot", gen_values, "Values per slot (excluding none)");
  gen->add_option("--min-turns", gen_min_turns, "Minimum turns per dialogue");
  gen->add_option("--max-turns", gen_max_turns, "Maximum turns per dialogue");
  gen->add_option("--p-new-slot", gen_p_new, "Probability a turn introduces a new slot");
  gen->add_option("--p-change", gen_p_change, "Probability a turn changes a set slot");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--fractions", gen_fractions, "train,valid,test fractions (default 0.75,0.125,0.125)");

  // train
  auto* train = app.add_subcommand("train", "Train a tracker");
  std::string train_config, train_corpus, train_out, train_mode;
  double train_p = -1.0, train_tau = -1.0, train_lr_enc = -1.0, train_lr_heads = -1.0;
  int train_epochs = -1, train_batch = -1;
  int64_t train_seed = -1;
  bool train_allow_none = false;
  train->add_option("--config", train_config, "Experiment config JSON file");
  train->add_option("--corpus-dir", train_corpus, "Corpus directory")->required();
  train->add_option("--out", train_out, "Checkpoint output directory")->required();
  train->add_option("--mode", train_mode,
                    "baseline | baseline_no_state | monet_st | monet_cm | monet");
  train->add_option("--noise-threshold", train_p, "Noise threshold p (default 0.3)");
  train->add_option("--temperature", train_tau, "Contrastive temperature (default 0.1)");
  train->add_option("--epochs", train_epochs, "Training epochs");
  train->add_option("--batch-size", train_batch, "Batch size (default 8)");
  train->add_option("--lr-encoder", train_lr_enc, "Context-encoder learning rate");
  train->add_option("--lr-heads", train_lr_heads, "Attention-head learning rate");
  train->add_option("--seed", train_seed, "Training seed");
  train->add_flag("--allow-none-noise", train_allow_none,
                  "Let noising replace values with none (deactivate slots)");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score a predictions JSONL file");
  std::string eval_pred, eval_ontology, eval_events, eval_out, eval_turn_csv;
  eval->add_option("--pred", eval_pred, "Predictions JSONL")->required();
  eval->add_option("--ontology", eval_ontology, "Ontology JSON")->required();
  eval->add_option("--events", eval_events, "Event log for change-turn accuracy");
  eval->add_option("--out", eval_out, "Write the report JSON here (default stdout)");
  eval->add_option("--per-turn-csv", eval_turn_csv, "Write the turn-level curve as CSV");

  // analyze-momentum
  auto* mom = app.add_subcommand("analyze-momentum", "Momentum-error counters for predictions");
  std::string mom_pred, mom_ontology, mom_out;
  mom->add_option("--pred", mom_pred, "Predictions JSONL")->required();
  mom->add_option("--ontology", mom_ontology, "Ontology JSON")->required();
  mom->add_option("--out", mom_out, "Write the report JSON here (default stdout)");

  // predict
  auto* pred = app.add_subcommand("predict", "Multi-turn rollout over a corpus");
  std::string pred_ckpt, pred_corpus, pred_out;
  bool pred_oracle = false;
  pred->add_option("--checkpoint", pred_ckpt, "Checkpoint directory")->required();
  pred->add_option("--corpus", pred_corpus, "Corpus JSON")->required();
  pred->add_option("--out", pred_out, "Output predictions JSONL")->required();
  pred->add_flag("--oracle-prev-state", pred_oracle, "Feed gold previous states");

  // probe-noise
  auto* probe = app.add_subcommand("probe-noise", "Noise testing on oracle previous states");
  std::string probe_ckpt, probe_corpus, probe_ratios = "0,0.25,0.5,0.75,1.0", probe_out;
  int64_t probe_seed = 97;
  probe->add_option("--checkpoint", probe_ckpt, "Checkpoint directory")->required();
  probe->add_option("--corpus", probe_corpus, "Corpus JSON")->required();
  probe->add_option("--ratios", probe_ratios, "Comma-separated noise ratios");
  probe->add_option("--seed", probe_seed, "Probe seed");
  probe->add_option("--out", probe_out, "Write the CSV here (default stdout)");

  // visualize-attention
  auto* viz = app.add_subcommand("visualize-attention", "Per-token attention scores for one slot");
  std::string viz_ckpt, viz_corpus, viz_dialogue, viz_slot, viz_out;
  int viz_turn = 1;
  bool viz_oracle = false;
  viz->add_option("--checkpoint", viz_ckpt, "Checkpoint directory")->required();
  viz->add_option("--corpus", viz_corpus, "Corpus JSON")->required();
  viz->add_option("--dialogue", viz_dialogue, "Dialogue id")->required();
  viz->add_option("--turn", viz_turn, "Turn index (1-based)")->required();
  viz->add_option("--slot", viz_slot, "Slot name")->required();
  viz->add_flag("--oracle-prev-state", viz_oracle, "Use the gold previous state");
  viz->add_option("--out", viz_out, "Write the JSON here (default stdout)");

  // sweep-noise-threshold
  auto* sweep = app.add_subcommand("sweep-noise-threshold", "Train at several noise thresholds");
  std::string sweep_config, sweep_corpus, sweep_thresholds = "0,0.1,0.2,0.3,0.4,0.5", sweep_out;
  sweep->add_option("--config", sweep_config, "Experiment config JSON file");
  sweep->add_option("--corpus-dir", sweep_corpus, "Corpus directory")->required();
  sweep->add_option("--thresholds", sweep_thresholds, "Comma-separated thresholds");
  sweep->add_option("--out", sweep_out, "Write the CSV here (default stdout)");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    json cfg = gen_config.empty() ? json::object() : json::parse(slurp(gen_config));
    if (gen_dialogues >= 0) cfg["n_dialogues"] = gen_dialogues;
    if (gen_slots >= 0) cfg["n_slots"] = gen_slots;
    if (gen_values >= 0) cfg["values_per_slot"] = gen_values;
    if (gen_min_turns >= 0) cfg["min_turns"] = gen_min_turns;
    if (gen_max_turns >= 0) cfg["max_turns"] = gen_max_turns;
    if (gen_p_new >= 0.0) cfg["p_new_slot"] = gen_p_new;
    if (gen_p_change >= 0.0) cfg["p_change"] = gen_p_change;
    if (gen_seed >= 0) cfg["seed"] = gen_seed;
    if (!gen_fractions.empty()) cfg["fractions"] = parse_list(gen_fractions);
    if (nst_generate_corpus(cfg.dump().c_str(), gen_out.c_str()) != NST_OK)
      return die("generate-corpus failed");
    std::cout << "corpus written to " << gen_out << "\n";
    return 0;
  }

  if (train->parsed()) {
    json cfg = train_config.empty() ? json::object() : json::parse(slurp(train_config));
    if (!train_mode.empty()) cfg["mode"] = train_mode;
    if (train_p >= 0.0) cfg["noise_threshold"] = train_p;
    if (train_tau >= 0.0) cfg["temperature"] = train_tau;
    if (train_epochs >= 0) cfg["epochs"] = train_epochs;
    if (train_batch >= 0) cfg["batch_size"] = train_batch;
    if (train_lr_enc >= 0.0) cfg["lr_encoder"] = train_lr_enc;
    if (train_lr_heads >= 0.0) cfg["lr_heads"] = train_lr_heads;
    if (train_seed >= 0) cfg["seed"] = train_seed;
    if (train_allow_none) cfg["allow_none_noise"] = true;
    if (nst_train(cfg.dump().c_str(), train_corpus.c_str(), train_out.c_str()) != NST_OK)
      return die("train failed");
    std::cout << "checkpoint written to " << train_out << "\n";
    return 0;
  }

  if (eval->parsed()) {
    CStr report;
    if (nst_evaluate(eval_pred.c_str(), eval_ontology.c_str(),
                     eval_events.empty() ? nullptr : eval_events.c_str(), &report.p) != NST_OK)
      return die("evaluate failed");
    emit(report.str(), eval_out);
    if (!eval_turn_csv.empty()) {
      json j = json::parse(report.str());
      std::string csv = "turn,joint_accuracy\n";
      std::vector<std::pair<int, double>> rows;
      for (const auto& [turn, acc] : j["per_turn"].items())
        rows.emplace_back(std::stoi(turn), acc.get<double>());
      std::sort(rows.begin(), rows.end());
      for (const auto& [turn, acc] : rows)
        csv += std::to_string(turn) + "," + json(acc).dump() + "\n";
      spit(eval_turn_csv, csv);
    }
    return 0;
  }

  if (mom->parsed()) {
    CStr report;
    if (nst_momentum_report(mom_pred.c_str(), mom_ontology.c_str(), &report.p) != NST_OK)
      return die("analyze-momentum failed");
    emit(report.str(), mom_out);
    return 0;
  }

  if (pred->parsed()) {
    nst_model* model = nullptr;
    if (nst_model_open(pred_ckpt.c_str(), &model) != NST_OK) return die("cannot open checkpoint");
    int rc = nst_model_predict(model, pred_corpus.c_str(), pred_oracle ? 1 : 0, pred_out.c_str());
    nst_model_close(model);
    if (rc != NST_OK) return die("predict failed");
    std::cout << "predictions written to " << pred_out << "\n";
    return 0;
  }

  if (probe->parsed()) {
    std::vector<double> ratios = parse_list(probe_ratios);
    nst_model* model = nullptr;
    if (nst_model_open(probe_ckpt.c_str(), &model) != NST_OK) return die("cannot open checkpoint");
    CStr csv;
    int rc = nst_model_probe_noise(model, probe_corpus.c_str(), ratios.data(), ratios.size(),
                                   static_cast<uint64_t>(probe_seed), &csv.p);
    nst_model_close(model);
    if (rc != NST_OK) return die("probe-noise failed");
    emit(csv.str(), probe_out);
    return 0;
  }

  if (viz->parsed()) {
    nst_model* model = nullptr;
    if (nst_model_open(viz_ckpt.c_str(), &model) != NST_OK) return die("cannot open checkpoint");
    CStr out;
    int rc = nst_model_attention(model, viz_corpus.c_str(), viz_dialogue.c_str(), viz_turn,
                                 viz_slot.c_str(), viz_oracle ? 1 : 0, &out.p);
    nst_model_close(model);
    if (rc != NST_OK) return die("visualize-attention failed");
    emit(out.str(), viz_out);
    return 0;
  }

  if (sweep->parsed()) {
    std::vector<double> thresholds = parse_list(sweep_thresholds);
    json cfg = sweep_config.empty() ? json::object() : json::parse(slurp(sweep_config));
    CStr csv;
    if (nst_sweep_noise_threshold(cfg.dump().c_str(), sweep_corpus.c_str(), thresholds.data(),
                                  thresholds.size(), &csv.p) != NST_OK)
      return die("sweep-noise-threshold failed");
    emit(csv.str(), sweep_out);
    return 0;
  }

  std::cerr << app.help() << "\n";
  return 1;
}
