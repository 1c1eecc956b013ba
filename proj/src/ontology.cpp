#include "nst/ontology.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"
#include "nst/common.hpp"

namespace nst {

using nlohmann::json;

Ontology::Ontology(std::vector<std::pair<std::string, std::vector<std::string>>> slot_values) {
  std::sort(slot_values.begin(), slot_values.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [slot, values] : slot_values) {
    if (index_.count(slot)) fail("ontology: duplicate slot '" + slot + "'");
    if (values.empty()) fail("ontology: slot '" + slot + "' has an empty value list");
    std::set<std::string> seen;
    size_t none_count = 0;
    for (const auto& v : values) {
      if (!seen.insert(v).second) fail("ontology: slot '" + slot + "' has duplicate value '" + v + "'");
      if (v == kNoneValue) ++none_count;
    }
    if (none_count == 0) values.push_back(kNoneValue);
    index_[slot] = static_cast<int>(slots_.size());
    slots_.push_back(slot);
    values_.push_back(std::move(values));
  }
}

bool Ontology::has_slot(const std::string& slot) const { return index_.count(slot) > 0; }

int Ontology::slot_index(const std::string& slot) const {
  auto it = index_.find(slot);
  return it == index_.end() ? -1 : it->second;
}

const std::vector<std::string>& Ontology::candidates(const std::string& slot) const {
  int i = slot_index(slot);
  if (i < 0) fail("ontology: unknown slot '" + slot + "'");
  return values_[static_cast<size_t>(i)];
}

const std::vector<std::string>& Ontology::candidates(int slot_index) const {
  return values_.at(static_cast<size_t>(slot_index));
}

int Ontology::value_index(const std::string& slot, const std::string& value) const {
  const auto& vals = candidates(slot);
  auto it = std::find(vals.begin(), vals.end(), value);
  return it == vals.end() ? -1 : static_cast<int>(it - vals.begin());
}

const std::string& DialogueState::value_of(const std::string& slot) const {
  auto it = assignments.find(slot);
  if (it == assignments.end()) fail("state: no entry for slot '" + slot + "'");
  return it->second;
}

DialogueState all_none_state(const Ontology& ontology) {
  DialogueState s;
  for (const auto& slot : ontology.slots()) s.assignments[slot] = kNoneValue;
  return s;
}

std::vector<std::string> active_slots(const DialogueState& state) {
  std::vector<std::string> out;
  for (const auto& [slot, value] : state.assignments) {
    if (value != kNoneValue) out.push_back(slot);
  }
  return out;  // map iteration is already lexicographic
}

std::vector<StateViolation> validate_state(const DialogueState& state, const Ontology& ontology) {
  std::vector<StateViolation> out;
  for (const auto& [slot, value] : state.assignments) {
    if (!ontology.has_slot(slot)) {
      out.push_back({slot, value, "slot not in ontology"});
    } else if (ontology.value_index(slot, value) < 0) {
      out.push_back({slot, value, "value not in candidate list"});
    }
  }
  for (const auto& slot : ontology.slots()) {
    if (!state.assignments.count(slot)) out.push_back({slot, "", "slot absent"});
  }
  return out;
}

Ontology ontology_from_json_text(const std::string& text, const std::string& origin) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail("ontology: cannot parse JSON from " + origin);
  if (!j.is_object() || !j.contains("slots") || !j["slots"].is_object())
    fail("ontology: expected {\"slots\": {...}} in " + origin);
  std::vector<std::pair<std::string, std::vector<std::string>>> slot_values;
  for (const auto& [slot, vals] : j["slots"].items()) {
    if (!vals.is_array()) fail("ontology: values of slot '" + slot + "' must be an array in " + origin);
    std::vector<std::string> values;
    for (const auto& v : vals) {
      if (!v.is_string()) fail("ontology: non-string value under slot '" + slot + "' in " + origin);
      values.push_back(v.get<std::string>());
    }
    slot_values.emplace_back(slot, std::move(values));
  }
  return Ontology(std::move(slot_values));
}

Ontology load_ontology(const std::string& path) {
  return ontology_from_json_text(read_file(path), path);
}

std::string ontology_to_json_text(const Ontology& ontology) {
  json slots = json::object();
  for (const auto& slot : ontology.slots()) slots[slot] = ontology.candidates(slot);
  json j;
  j["slots"] = slots;
  return j.dump(2) + "\n";
}

DialogueState state_from_sparse(const std::map<std::string, std::string>& sparse,
                                const Ontology& ontology) {
  DialogueState s = all_none_state(ontology);
  for (const auto& [slot, value] : sparse) s.assignments[slot] = value;  // keeps unknown slots visible to validate_state
  return s;
}

std::map<std::string, std::string> state_to_sparse(const DialogueState& state) {
  std::map<std::string, std::string> out;
  for (const auto& [slot, value] : state.assignments) {
    if (value != kNoneValue) out[slot] = value;
  }
  return out;
}

}  // namespace nst
