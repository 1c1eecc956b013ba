#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nst/corpus.hpp"
#include "nst/model.hpp"

namespace nst {

struct PredictionRecord {
  std::string dialogue_id;
  int turn_index = 0;  // 1-based
  DialogueState pred;
  DialogueState gold;
};

struct RolloutIssue {
  std::string dialogue_id;
  int turn_index = 0;
  std::string message;
};

struct RolloutResult {
  std::vector<PredictionRecord> records;
  std::vector<RolloutIssue> issues;
};

struct RolloutOptions {
  bool oracle_prev_state = false;  // feed gold previous states instead of predictions
  bool include_state = true;       // false reproduces the state-free context variant
};

/// A predictor maps one turn's context fields to a state.
using TurnPredictor = std::function<DialogueState(const TurnContextFields&)>;

/// Multi-turn rollout: turn 1 sees the all-"none" previous state, turn t>1 the
/// previous turn's prediction (or gold, in oracle mode). A failure inside one
/// turn aborts that dialogue's remaining turns and is reported as an issue.
RolloutResult rollout_dialogue_with(const TurnPredictor& predictor, const Dialogue& dialogue,
                                    const Ontology& ontology, const RolloutOptions& options = {});

RolloutResult rollout_dialogue(const Model<float>& model, const Dialogue& dialogue,
                               const RolloutOptions& options = {});

/// All dialogues, records in (dialogue order, turn order); per-dialogue errors
/// are isolated.
RolloutResult rollout_corpus(const Model<float>& model, const std::vector<Dialogue>& corpus,
                             const RolloutOptions& options = {});

TurnPredictor model_predictor(const Model<float>& model, bool include_state = true);

void write_predictions_jsonl(const std::string& path, const std::vector<PredictionRecord>& records);
std::string predictions_to_jsonl(const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions_jsonl(const std::string& path,
                                                     const Ontology& ontology);

}  // namespace nst
