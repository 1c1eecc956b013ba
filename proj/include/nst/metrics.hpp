#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "nst/corpus.hpp"
#include "nst/infer.hpp"
#include "nst/model.hpp"

namespace nst {

struct MetricsReport {
  double joint = 0.0;
  double slot = 0.0;
  std::map<int, double> per_turn;
  size_t turns = 0;
  size_t slot_pairs = 0;
};

/// Fraction of turns whose full state (including "none" slots) is correct.
double joint_goal_accuracy(std::span<const PredictionRecord> records);

/// Fraction of (slot, turn) pairs predicted correctly.
double slot_goal_accuracy(std::span<const PredictionRecord> records);

/// Joint accuracy restricted to each turn index; indices with no records are
/// absent from the map.
std::map<int, double> turn_level_accuracy(std::span<const PredictionRecord> records);

MetricsReport compute_metrics(std::span<const PredictionRecord> records);

/// Joint accuracy over the subset of records whose (dialogue_id, turn_index)
/// is in keys.
double joint_goal_accuracy_on(std::span<const PredictionRecord> records,
                              const std::set<std::pair<std::string, int>>& keys);

/// (dialogue, turn) keys whose turn log contains a change event.
std::set<std::pair<std::string, int>> change_turn_keys(const EventLog& events);

struct MomentumReport {
  size_t wrong_pairs_total = 0;
  size_t wrong_pairs_carried = 0;       // wrong pairs also present in the previous prediction
  double momentum_proportion = 0.0;     // carried / total when total > 0
  double gold_carryover_ratio = 0.0;    // gold active pairs repeated from the previous gold turn
};

/// Starting from each dialogue's second turn, counts wrong predicted
/// slot-value pairs (predicted != gold, predicted != "none") and how many of
/// them already appeared in the previous turn's prediction.
MomentumReport momentum_analysis(std::span<const PredictionRecord> records);

struct NoiseProbePoint {
  double ratio = 0.0;
  double joint_accuracy = 0.0;
  double mean_l2_distance = 0.0;
};

/// Oracle-previous-state evaluation under noised state inputs: for each ratio,
/// every turn's gold previous state is noised at that ratio, predictions are
/// made from the noised context, and the mean L2 distance between mean-pooled
/// token representations of the clean and noised contexts is recorded.
std::vector<NoiseProbePoint> noise_probe(const Model<float>& model,
                                         const std::vector<Dialogue>& corpus,
                                         std::span<const double> ratios, uint64_t probe_seed,
                                         bool allow_none_noise = false);

struct AttentionExport {
  std::vector<std::string> tokens;
  std::vector<double> scores;  // probability vector over tokens
  std::string slot;
};

/// Overall per-token attention: slot-context attention weights (head-averaged)
/// times the self-attention matrix averaged jointly over all layers and heads.
template <typename T>
AttentionExport attention_export(const Model<T>& model, const ContextInput& ctx,
                                 const std::string& slot);

std::string metrics_report_to_json_text(const MetricsReport& metrics, const MomentumReport& momentum,
                                        const std::map<std::string, double>& extra = {});
std::string probe_points_to_csv(std::span<const NoiseProbePoint> points);
std::string attention_export_to_json_text(const AttentionExport& att);
std::string per_turn_to_csv(const std::map<int, double>& per_turn);

}  // namespace nst
