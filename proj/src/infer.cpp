#include "nst/infer.hpp"

#include <sstream>

#include "json.hpp"
#include "nst/common.hpp"

namespace nst {

using nlohmann::json;

RolloutResult rollout_dialogue_with(const TurnPredictor& predictor, const Dialogue& dialogue,
                                    const Ontology& ontology, const RolloutOptions& options) {
  RolloutResult out;
  DialogueState prev = all_none_state(ontology);
  TurnContextFields fields;
  for (size_t t = 0; t < dialogue.turns.size(); ++t) {
    const Turn& turn = dialogue.turns[t];
    fields.prev_state = options.oracle_prev_state && t > 0 ? dialogue.turns[t - 1].gold_state : prev;
    fields.system = turn.system;
    fields.user = turn.user;
    try {
      PredictionRecord rec;
      rec.dialogue_id = dialogue.id;
      rec.turn_index = static_cast<int>(t) + 1;
      rec.pred = predictor(fields);
      rec.gold = turn.gold_state;
      prev = rec.pred;
      out.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      out.issues.push_back({dialogue.id, static_cast<int>(t) + 1, e.what()});
      break;  // turns after a failed one have no usable previous state
    }
    fields.history.emplace_back(turn.system, turn.user);
  }
  return out;
}

TurnPredictor model_predictor(const Model<float>& model, bool include_state) {
  return [&model, include_state](const TurnContextFields& fields) {
    ContextInput ctx = build_context_input(fields, model.vocab(),
                                           model.config().encoder.max_len, include_state);
    return model.predict_state(ctx);
  };
}

RolloutResult rollout_dialogue(const Model<float>& model, const Dialogue& dialogue,
                               const RolloutOptions& options) {
  return rollout_dialogue_with(model_predictor(model, options.include_state), dialogue,
                               model.ontology(), options);
}

RolloutResult rollout_corpus(const Model<float>& model, const std::vector<Dialogue>& corpus,
                             const RolloutOptions& options) {
  RolloutResult out;
  TurnPredictor predictor = model_predictor(model, options.include_state);
  for (const auto& dialogue : corpus) {
    RolloutResult one = rollout_dialogue_with(predictor, dialogue, model.ontology(), options);
    out.records.insert(out.records.end(), one.records.begin(), one.records.end());
    out.issues.insert(out.issues.end(), one.issues.begin(), one.issues.end());
  }
  return out;
}

std::string predictions_to_jsonl(const std::vector<PredictionRecord>& records) {
  std::ostringstream out;
  for (const auto& rec : records) {
    json j;
    j["dialogue_id"] = rec.dialogue_id;
    j["turn"] = rec.turn_index;
    j["pred"] = state_to_sparse(rec.pred);
    j["gold"] = state_to_sparse(rec.gold);
    out << j.dump() << "\n";
  }
  return out.str();
}

void write_predictions_jsonl(const std::string& path, const std::vector<PredictionRecord>& records) {
  write_file(path, predictions_to_jsonl(records));
}

std::vector<PredictionRecord> read_predictions_jsonl(const std::string& path,
                                                     const Ontology& ontology) {
  std::istringstream in(read_file(path));
  std::vector<PredictionRecord> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      fail("predictions: cannot parse JSONL line " + std::to_string(line_no) + " in " + path);
    PredictionRecord rec;
    rec.dialogue_id = j.value("dialogue_id", std::string());
    rec.turn_index = j.value("turn", 0);
    auto read_state = [&](const char* key) {
      std::map<std::string, std::string> sparse;
      if (j.contains(key))
        for (const auto& [slot, value] : j[key].items()) sparse[slot] = value.get<std::string>();
      return state_from_sparse(sparse, ontology);
    };
    rec.pred = read_state("pred");
    rec.gold = read_state("gold");
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace nst
