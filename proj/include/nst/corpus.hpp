#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nst/ontology.hpp"

namespace nst {

struct Turn {
  std::string system;
  std::string user;
  DialogueState gold_state;  // cumulative up to and including this turn
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;  // turn indices are implicit 1..T
};

std::vector<Dialogue> load_corpus(const std::string& path, const Ontology& ontology);
std::vector<Dialogue> corpus_from_json_text(const std::string& text, const Ontology& ontology,
                                            const std::string& origin);
std::string corpus_to_json_text(const std::vector<Dialogue>& dialogues);

struct SyntheticConfig {
  int n_dialogues = 400;
  int n_slots = 5;
  int values_per_slot = 6;  // non-"none" values; "none" is added on top
  int min_turns = 3;
  int max_turns = 6;
  double p_new_slot = 0.5;  // probability a turn introduces a new slot
  double p_change = 0.4;    // probability a turn changes an already-set slot
  uint64_t seed = 13;

  void validate() const;
};

struct TurnEvent {
  enum class Kind { Introduce, Change };
  Kind kind;
  std::string slot;
  std::string value;      // value after the event
  std::string old_value;  // only for Change
};

/// Event log: dialogue id -> per-turn event lists (index 0 = turn 1).
using EventLog = std::map<std::string, std::vector<std::vector<TurnEvent>>>;

struct SyntheticCorpus {
  Ontology ontology;
  std::vector<Dialogue> dialogues;
  EventLog events;
};

/// Deterministic templated-generation of momentum scenarios: slots get
/// introduced and later rewritten ("actually change ... to ...") while gold
/// states accumulate. Every event is verbalized in the user utterance.
SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config);

std::string events_to_json_text(const EventLog& events);
EventLog events_from_json_text(const std::string& text, const std::string& origin);

struct SplitResult {
  std::vector<Dialogue> train;
  std::vector<Dialogue> validation;
  std::vector<Dialogue> test;
};

/// Disjoint cover of the corpus; sizes follow floor-then-distribute on the
/// fractions, assignment is a seeded shuffle.
SplitResult split_corpus(const std::vector<Dialogue>& corpus, std::array<double, 3> fractions,
                         uint64_t seed);

}  // namespace nst
