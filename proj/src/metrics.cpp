#include "nst/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "nst/common.hpp"
#include "nst/noise.hpp"

namespace nst {

using nlohmann::json;

double joint_goal_accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) fail("metrics: joint goal accuracy over empty record set");
  size_t correct = 0;
  for (const auto& rec : records)
    if (rec.pred == rec.gold) ++correct;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double slot_goal_accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) fail("metrics: slot goal accuracy over empty record set");
  size_t correct = 0, total = 0;
  for (const auto& rec : records) {
    for (const auto& [slot, gold_value] : rec.gold.assignments) {
      ++total;
      auto it = rec.pred.assignments.find(slot);
      if (it != rec.pred.assignments.end() && it->second == gold_value) ++correct;
    }
  }
  if (total == 0) fail("metrics: no slot pairs in records");
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::map<int, double> turn_level_accuracy(std::span<const PredictionRecord> records) {
  std::map<int, std::pair<size_t, size_t>> buckets;  // turn -> (correct, total)
  for (const auto& rec : records) {
    auto& b = buckets[rec.turn_index];
    ++b.second;
    if (rec.pred == rec.gold) ++b.first;
  }
  std::map<int, double> out;
  for (const auto& [turn, b] : buckets)
    out[turn] = static_cast<double>(b.first) / static_cast<double>(b.second);
  return out;
}

MetricsReport compute_metrics(std::span<const PredictionRecord> records) {
  MetricsReport out;
  out.joint = joint_goal_accuracy(records);
  out.slot = slot_goal_accuracy(records);
  out.per_turn = turn_level_accuracy(records);
  out.turns = records.size();
  for (const auto& rec : records) out.slot_pairs += rec.gold.assignments.size();
  return out;
}

double joint_goal_accuracy_on(std::span<const PredictionRecord> records,
                              const std::set<std::pair<std::string, int>>& keys) {
  size_t correct = 0, total = 0;
  for (const auto& rec : records) {
    if (!keys.count({rec.dialogue_id, rec.turn_index})) continue;
    ++total;
    if (rec.pred == rec.gold) ++correct;
  }
  if (total == 0) fail("metrics: no records match the requested turn keys");
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::set<std::pair<std::string, int>> change_turn_keys(const EventLog& events) {
  std::set<std::pair<std::string, int>> out;
  for (const auto& [id, turns] : events) {
    for (size_t t = 0; t < turns.size(); ++t) {
      for (const auto& ev : turns[t]) {
        if (ev.kind == TurnEvent::Kind::Change) {
          out.insert({id, static_cast<int>(t) + 1});
          break;
        }
      }
    }
  }
  return out;
}

MomentumReport momentum_analysis(std::span<const PredictionRecord> records) {
  std::map<std::string, std::vector<const PredictionRecord*>> groups;
  for (const auto& rec : records) groups[rec.dialogue_id].push_back(&rec);

  MomentumReport out;
  size_t gold_pairs = 0, gold_carried = 0;
  for (auto& [id, group] : groups) {
    std::sort(group.begin(), group.end(), [](const PredictionRecord* a, const PredictionRecord* b) {
      return a->turn_index < b->turn_index;
    });
    for (size_t i = 1; i < group.size(); ++i) {
      const PredictionRecord& prev = *group[i - 1];
      const PredictionRecord& cur = *group[i];
      if (cur.turn_index != prev.turn_index + 1) continue;
      for (const auto& [slot, value] : cur.pred.assignments) {
        if (value == kNoneValue) continue;
        auto gold_it = cur.gold.assignments.find(slot);
        if (gold_it != cur.gold.assignments.end() && gold_it->second == value) continue;
        ++out.wrong_pairs_total;
        auto prev_it = prev.pred.assignments.find(slot);
        if (prev_it != prev.pred.assignments.end() && prev_it->second == value)
          ++out.wrong_pairs_carried;
      }
      for (const auto& [slot, value] : cur.gold.assignments) {
        if (value == kNoneValue) continue;
        ++gold_pairs;
        auto prev_it = prev.gold.assignments.find(slot);
        if (prev_it != prev.gold.assignments.end() && prev_it->second == value) ++gold_carried;
      }
    }
  }
  if (out.wrong_pairs_total > 0)
    out.momentum_proportion = static_cast<double>(out.wrong_pairs_carried) /
                              static_cast<double>(out.wrong_pairs_total);
  if (gold_pairs > 0)
    out.gold_carryover_ratio = static_cast<double>(gold_carried) / static_cast<double>(gold_pairs);
  return out;
}

std::vector<NoiseProbePoint> noise_probe(const Model<float>& model,
                                         const std::vector<Dialogue>& corpus,
                                         std::span<const double> ratios, uint64_t probe_seed,
                                         bool allow_none_noise) {
  const Ontology& ontology = model.ontology();
  int d = model.config().encoder.d_model;
  int max_len = model.config().encoder.max_len;

  std::vector<NoiseProbePoint> out;
  for (size_t ri = 0; ri < ratios.size(); ++ri) {
    NoiseConfig nc{ratios[ri], allow_none_noise};
    nc.validate();
    uint64_t ratio_seed = rng::derive(probe_seed, "probe-ratio", ri);
    size_t correct = 0, total = 0;
    double dist_sum = 0.0;

    for (size_t di = 0; di < corpus.size(); ++di) {
      const Dialogue& dialogue = corpus[di];
      TurnContextFields fields;
      for (size_t t = 0; t < dialogue.turns.size(); ++t) {
        const Turn& turn = dialogue.turns[t];
        fields.prev_state = t == 0 ? all_none_state(ontology) : dialogue.turns[t - 1].gold_state;
        fields.system = turn.system;
        fields.user = turn.user;

        rng::Engine eng(rng::derive(ratio_seed, "turn", di, t));
        NoisedState noised = noise_state(fields.prev_state, ontology, nc, eng);

        ContextInput clean_ctx = build_context_input(fields, model.vocab(), max_len);
        TurnContextFields noised_fields = fields;
        noised_fields.prev_state = noised.state;
        ContextInput noised_ctx = build_context_input(noised_fields, model.vocab(), max_len);

        EncoderTrace<float> clean_enc = model.encode(clean_ctx);
        EncoderTrace<float> noised_enc = model.encode(noised_ctx);

        // mean pooling over token representations, then L2 of the difference
        std::vector<double> pool_clean(static_cast<size_t>(d), 0.0);
        std::vector<double> pool_noised(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < clean_enc.len; ++i)
          for (int c = 0; c < d; ++c)
            pool_clean[static_cast<size_t>(c)] +=
                static_cast<double>(clean_enc.h[static_cast<size_t>(i) * d + c]);
        for (int i = 0; i < noised_enc.len; ++i)
          for (int c = 0; c < d; ++c)
            pool_noised[static_cast<size_t>(c)] +=
                static_cast<double>(noised_enc.h[static_cast<size_t>(i) * d + c]);
        double dist = 0.0;
        for (int c = 0; c < d; ++c) {
          double diff = pool_clean[static_cast<size_t>(c)] / clean_enc.len -
                        pool_noised[static_cast<size_t>(c)] / noised_enc.len;
          dist += diff * diff;
        }
        dist_sum += std::sqrt(dist);

        DialogueState pred = model.predict_from(noised_enc);
        ++total;
        if (pred == turn.gold_state) ++correct;

        fields.history.emplace_back(turn.system, turn.user);
      }
    }

    NoiseProbePoint point;
    point.ratio = ratios[ri];
    point.joint_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    point.mean_l2_distance = total > 0 ? dist_sum / static_cast<double>(total) : 0.0;
    out.push_back(point);
  }
  return out;
}

template <typename T>
AttentionExport attention_export(const Model<T>& model, const ContextInput& ctx,
                                 const std::string& slot) {
  int slot_index = model.ontology().slot_index(slot);
  if (slot_index < 0) fail("attention export: unknown slot '" + slot + "'");

  EncoderTrace<T> enc = model.encode(ctx);
  int len = enc.len;
  int heads = model.config().encoder.n_heads;
  int layers = model.config().encoder.n_layers;

  // Self-attention averaged jointly over every (layer, head) matrix.
  std::vector<double> avg(static_cast<size_t>(len) * len, 0.0);
  for (int li = 0; li < layers; ++li) {
    const auto& probs = enc.layers[static_cast<size_t>(li)].probs;
    for (int h = 0; h < heads; ++h) {
      const T* hp = probs.data() + static_cast<size_t>(h) * len * len;
      for (size_t i = 0; i < static_cast<size_t>(len) * len; ++i)
        avg[i] += static_cast<double>(hp[i]);
    }
  }
  double inv = 1.0 / (static_cast<double>(layers) * heads);
  for (auto& a : avg) a *= inv;

  SlotAttnTrace<T> sat;
  model.slot_feature(slot_index, enc, &sat);
  std::vector<T> w = sat.mean_weights();

  AttentionExport out;
  out.slot = slot;
  out.tokens = ctx.tokens;
  out.scores.assign(static_cast<size_t>(len), 0.0);
  for (int i = 0; i < len; ++i) {
    double wi = static_cast<double>(w[static_cast<size_t>(i)]);
    for (int j = 0; j < len; ++j)
      out.scores[static_cast<size_t>(j)] += wi * avg[static_cast<size_t>(i) * len + j];
  }
  return out;
}

namespace {
std::string fmt(double x) { return json(x).dump(); }
}  // namespace

std::string metrics_report_to_json_text(const MetricsReport& metrics, const MomentumReport& momentum,
                                        const std::map<std::string, double>& extra) {
  json per_turn = json::object();
  for (const auto& [turn, acc] : metrics.per_turn) per_turn[std::to_string(turn)] = acc;
  json j;
  j["joint"] = metrics.joint;
  j["slot"] = metrics.slot;
  j["per_turn"] = std::move(per_turn);
  j["counts"] = {{"turns", metrics.turns}, {"slot_pairs", metrics.slot_pairs}};
  j["momentum"] = {{"wrong_pairs_total", momentum.wrong_pairs_total},
                   {"wrong_pairs_carried", momentum.wrong_pairs_carried},
                   {"momentum_proportion", momentum.momentum_proportion},
                   {"gold_carryover_ratio", momentum.gold_carryover_ratio}};
  for (const auto& [key, value] : extra) j[key] = value;
  return j.dump(2) + "\n";
}

std::string probe_points_to_csv(std::span<const NoiseProbePoint> points) {
  std::string out = "ratio,joint_accuracy,mean_l2_distance\n";
  for (const auto& p : points)
    out += fmt(p.ratio) + "," + fmt(p.joint_accuracy) + "," + fmt(p.mean_l2_distance) + "\n";
  return out;
}

std::string per_turn_to_csv(const std::map<int, double>& per_turn) {
  std::string out = "turn,joint_accuracy\n";
  for (const auto& [turn, acc] : per_turn) out += std::to_string(turn) + "," + fmt(acc) + "\n";
  return out;
}

std::string attention_export_to_json_text(const AttentionExport& att) {
  json j;
  j["slot"] = att.slot;
  j["tokens"] = att.tokens;
  j["scores"] = att.scores;
  return j.dump(2) + "\n";
}

template AttentionExport attention_export<float>(const Model<float>&, const ContextInput&,
                                                 const std::string&);
template AttentionExport attention_export<double>(const Model<double>&, const ContextInput&,
                                                  const std::string&);

}  // namespace nst
