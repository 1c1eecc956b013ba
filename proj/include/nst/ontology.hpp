#pragma once

#include <map>
#include <string>
#include <vector>

namespace nst {

constexpr const char* kNoneValue = "none";

/// The pre-defined universe of slots and candidate values. Slot names are
/// stored in lexicographic order and every candidate list contains "none"
/// exactly once, so index-based lookups are stable across runs.
class Ontology {
 public:
  Ontology() = default;
  Ontology(std::vector<std::pair<std::string, std::vector<std::string>>> slot_values);

  const std::vector<std::string>& slots() const { return slots_; }
  size_t slot_count() const { return slots_.size(); }

  bool has_slot(const std::string& slot) const;
  int slot_index(const std::string& slot) const;  // -1 when absent

  /// Candidate values for a slot, in file order, "none" included.
  const std::vector<std::string>& candidates(const std::string& slot) const;
  const std::vector<std::string>& candidates(int slot_index) const;
  int value_index(const std::string& slot, const std::string& value) const;  // -1 when absent

 private:
  std::vector<std::string> slots_;                        // sorted
  std::vector<std::vector<std::string>> values_;          // aligned with slots_
  std::map<std::string, int> index_;
};

/// Total slot->value map; inactive slots hold "none".
struct DialogueState {
  std::map<std::string, std::string> assignments;

  bool operator==(const DialogueState& other) const = default;
  const std::string& value_of(const std::string& slot) const;
};

struct StateViolation {
  std::string slot;
  std::string value;
  std::string reason;
};

DialogueState all_none_state(const Ontology& ontology);

/// Slots with a non-"none" value, lexicographically sorted.
std::vector<std::string> active_slots(const DialogueState& state);

/// Reports every out-of-ontology slot or value and every missing slot entry.
/// Empty result means the state is valid.
std::vector<StateViolation> validate_state(const DialogueState& state, const Ontology& ontology);

Ontology load_ontology(const std::string& path);
Ontology ontology_from_json_text(const std::string& text, const std::string& origin);
std::string ontology_to_json_text(const Ontology& ontology);

/// Sparse on disk: absent slot means "none". Totalized here.
DialogueState state_from_sparse(const std::map<std::string, std::string>& sparse,
                                const Ontology& ontology);
std::map<std::string, std::string> state_to_sparse(const DialogueState& state);

}  // namespace nst
