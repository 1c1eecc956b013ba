#include "nst/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"
#include "nst/common.hpp"

namespace nst {

using nlohmann::json;

std::vector<Dialogue> corpus_from_json_text(const std::string& text, const Ontology& ontology,
                                            const std::string& origin) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail("corpus: cannot parse JSON from " + origin);
  if (!j.is_object() || !j.contains("dialogues") || !j["dialogues"].is_array())
    fail("corpus: expected {\"dialogues\": [...]} in " + origin);

  std::vector<Dialogue> out;
  for (const auto& jd : j["dialogues"]) {
    Dialogue d;
    if (!jd.contains("id") || !jd["id"].is_string()) fail("corpus: dialogue without string id in " + origin);
    d.id = jd["id"].get<std::string>();
    if (!jd.contains("turns") || !jd["turns"].is_array() || jd["turns"].empty())
      fail("corpus: dialogue '" + d.id + "' has no turns in " + origin);
    int turn_index = 0;
    for (const auto& jt : jd["turns"]) {
      ++turn_index;
      Turn t;
      t.system = jt.value("system", std::string());
      t.user = jt.value("user", std::string());
      std::map<std::string, std::string> sparse;
      if (jt.contains("state")) {
        if (!jt["state"].is_object())
          fail("corpus: dialogue '" + d.id + "' turn " + std::to_string(turn_index) + " state must be an object");
        for (const auto& [slot, value] : jt["state"].items()) {
          if (!value.is_string())
            fail("corpus: dialogue '" + d.id + "' turn " + std::to_string(turn_index) + " non-string value for slot '" + slot + "'");
          sparse[slot] = value.get<std::string>();
        }
      }
      t.gold_state = state_from_sparse(sparse, ontology);
      auto violations = validate_state(t.gold_state, ontology);
      if (!violations.empty()) {
        const auto& v = violations.front();
        fail("corpus: invalid state in dialogue '" + d.id + "' turn " + std::to_string(turn_index) +
             ": slot '" + v.slot + "' value '" + v.value + "' (" + v.reason + ")");
      }
      d.turns.push_back(std::move(t));
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Dialogue> load_corpus(const std::string& path, const Ontology& ontology) {
  return corpus_from_json_text(read_file(path), ontology, path);
}

std::string corpus_to_json_text(const std::vector<Dialogue>& dialogues) {
  json jds = json::array();
  for (const auto& d : dialogues) {
    json jturns = json::array();
    for (const auto& t : d.turns) {
      json jt;
      jt["system"] = t.system;
      jt["user"] = t.user;
      jt["state"] = state_to_sparse(t.gold_state);
      jturns.push_back(std::move(jt));
    }
    json jd;
    jd["id"] = d.id;
    jd["turns"] = std::move(jturns);
    jds.push_back(std::move(jd));
  }
  json j;
  j["dialogues"] = std::move(jds);
  return j.dump(2) + "\n";
}

void SyntheticConfig::validate() const {
  if (n_dialogues < 0) fail("synthetic config: n_dialogues must be >= 0");
  if (n_slots < 1) fail("synthetic config: n_slots must be >= 1");
  if (values_per_slot < 1) fail("synthetic config: values_per_slot must be >= 1");
  if (min_turns < 1 || max_turns < min_turns)
    fail("synthetic config: need max_turns >= min_turns >= 1");
  if (p_new_slot < 0.0 || p_new_slot > 1.0) fail("synthetic config: p_new_slot must be in [0,1]");
  if (p_change < 0.0 || p_change > 1.0) fail("synthetic config: p_change must be in [0,1]");
}

namespace {

const std::vector<std::string> kDomains = {"train", "hotel", "restaurant", "taxi",
                                           "attraction", "bus", "flight", "museum"};
const std::vector<std::string> kAttributes = {"day", "area", "food", "time",
                                              "price", "name", "people", "stars"};
const std::vector<std::string> kValuePool = {
    "monday",  "tuesday", "wednesday", "thursday", "friday",  "saturday", "sunday",
    "north",   "south",   "east",      "west",     "centre",  "cheap",    "moderate",
    "expensive", "italian", "chinese", "indian",   "british", "french",   "noon",
    "morning", "evening",  "afternoon", "midnight", "early",  "late",     "one",
    "two",     "three",    "four",     "five",     "six",     "seven",    "eight",
    "alpha",   "bravo",    "delta",    "echo",     "golden",  "silver",   "amber",
    "ruby",    "ivory",    "jade",     "coral",    "pearl",   "onyx"};

const std::vector<std::string> kSystemPrompts = {
    "how can i help you", "what else can i do for you", "is there anything else you need",
    "okay noted , anything else", "sure , what do you need"};

const std::vector<std::string> kFillers = {"no that is all thanks", "that is everything",
                                           "sounds good thank you", "nothing else for now"};

std::string synthetic_slot_name(int i) {
  int nd = static_cast<int>(kDomains.size());
  int na = static_cast<int>(kAttributes.size());
  int grid = nd * na;
  int base = i % grid;
  int d = base % nd;
  int a = (base / nd + d) % na;
  std::string name = kDomains[static_cast<size_t>(d)] + "-" + kAttributes[static_cast<size_t>(a)];
  if (i >= grid) name += "-" + std::to_string(i / grid);
  return name;
}

std::vector<std::string> synthetic_values(int slot_index, int count) {
  std::vector<std::string> out;
  std::set<std::string> used;
  int p = static_cast<int>(kValuePool.size());
  for (int k = 0; k < count; ++k) {
    std::string v;
    for (int probe = 0; probe < p; ++probe) {
      const std::string& cand = kValuePool[static_cast<size_t>((slot_index * 7 + k + probe) % p)];
      if (cand != kNoneValue && !used.count(cand)) {
        v = cand;
        break;
      }
    }
    if (v.empty()) v = kValuePool[static_cast<size_t>(k % p)] + "-" + std::to_string(k);
    used.insert(v);
    out.push_back(v);
  }
  return out;
}

std::string slot_words(const std::string& slot) {
  std::string out = slot;
  std::replace(out.begin(), out.end(), '-', ' ');
  return out;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config) {
  config.validate();

  std::vector<std::pair<std::string, std::vector<std::string>>> slot_values;
  for (int i = 0; i < config.n_slots; ++i)
    slot_values.emplace_back(synthetic_slot_name(i), synthetic_values(i, config.values_per_slot));

  SyntheticCorpus out;
  out.ontology = Ontology(std::move(slot_values));

  for (int di = 0; di < config.n_dialogues; ++di) {
    rng::Engine eng(rng::derive(config.seed, "dialogue", static_cast<uint64_t>(di)));
    Dialogue dialogue;
    dialogue.id = "syn-" + std::to_string(di);

    int n_turns = config.min_turns + static_cast<int>(eng.index(
                      static_cast<size_t>(config.max_turns - config.min_turns + 1)));
    DialogueState state = all_none_state(out.ontology);
    std::vector<std::vector<TurnEvent>> dialogue_events;

    for (int t = 1; t <= n_turns; ++t) {
      std::vector<std::string> unset, set_before;
      for (const auto& slot : out.ontology.slots()) {
        (state.value_of(slot) == kNoneValue ? unset : set_before).push_back(slot);
      }

      std::vector<TurnEvent> events;
      if (!unset.empty() && (t == 1 || eng.uniform() < config.p_new_slot)) {
        const std::string& slot = unset[eng.index(unset.size())];
        const auto& cands = out.ontology.candidates(slot);
        std::vector<std::string> choices;
        for (const auto& v : cands)
          if (v != kNoneValue) choices.push_back(v);
        if (!choices.empty()) {
          TurnEvent ev{TurnEvent::Kind::Introduce, slot, choices[eng.index(choices.size())], ""};
          state.assignments[slot] = ev.value;
          events.push_back(std::move(ev));
        }
      }
      if (!set_before.empty() && eng.uniform() < config.p_change) {
        const std::string& slot = set_before[eng.index(set_before.size())];
        const std::string& current = state.value_of(slot);
        std::vector<std::string> choices;
        for (const auto& v : out.ontology.candidates(slot))
          if (v != kNoneValue && v != current) choices.push_back(v);
        if (!choices.empty()) {
          TurnEvent ev{TurnEvent::Kind::Change, slot, choices[eng.index(choices.size())], current};
          state.assignments[slot] = ev.value;
          events.push_back(std::move(ev));
        }
      }

      Turn turn;
      turn.system = kSystemPrompts[eng.index(kSystemPrompts.size())];
      if (events.empty()) {
        turn.user = kFillers[eng.index(kFillers.size())];
      } else {
        std::string u;
        for (const auto& ev : events) {
          if (!u.empty()) u += " and ";
          if (ev.kind == TurnEvent::Kind::Introduce)
            u += "i want " + slot_words(ev.slot) + " to be " + ev.value;
          else
            u += "actually change " + slot_words(ev.slot) + " to " + ev.value;
        }
        turn.user = u;
      }
      turn.gold_state = state;
      dialogue.turns.push_back(std::move(turn));
      dialogue_events.push_back(std::move(events));
    }

    out.events[dialogue.id] = std::move(dialogue_events);
    out.dialogues.push_back(std::move(dialogue));
  }
  return out;
}

std::string events_to_json_text(const EventLog& events) {
  json j = json::object();
  for (const auto& [id, turns] : events) {
    json jturns = json::array();
    for (const auto& turn_events : turns) {
      json jevents = json::array();
      for (const auto& ev : turn_events) {
        json je;
        je["type"] = ev.kind == TurnEvent::Kind::Introduce ? "introduce" : "change";
        je["slot"] = ev.slot;
        je["value"] = ev.value;
        if (ev.kind == TurnEvent::Kind::Change) je["old"] = ev.old_value;
        jevents.push_back(std::move(je));
      }
      jturns.push_back(std::move(jevents));
    }
    j[id] = std::move(jturns);
  }
  return j.dump(2) + "\n";
}

EventLog events_from_json_text(const std::string& text, const std::string& origin) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail("events: cannot parse JSON from " + origin);
  EventLog out;
  for (const auto& [id, jturns] : j.items()) {
    std::vector<std::vector<TurnEvent>> turns;
    for (const auto& jevents : jturns) {
      std::vector<TurnEvent> evs;
      for (const auto& je : jevents) {
        TurnEvent ev;
        std::string type = je.value("type", "");
        if (type == "introduce")
          ev.kind = TurnEvent::Kind::Introduce;
        else if (type == "change")
          ev.kind = TurnEvent::Kind::Change;
        else
          fail("events: unknown event type '" + type + "' in " + origin);
        ev.slot = je.value("slot", "");
        ev.value = je.value("value", "");
        ev.old_value = je.value("old", "");
        evs.push_back(std::move(ev));
      }
      turns.push_back(std::move(evs));
    }
    out[id] = std::move(turns);
  }
  return out;
}

SplitResult split_corpus(const std::vector<Dialogue>& corpus, std::array<double, 3> fractions,
                         uint64_t seed) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions)
    if (f < 0.0) fail("split: fractions must be non-negative");
  if (std::abs(sum - 1.0) > 1e-9) fail("split: fractions must sum to 1");

  size_t n = corpus.size();
  std::array<size_t, 3> sizes{};
  size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    sizes[static_cast<size_t>(i)] = static_cast<size_t>(std::floor(fractions[static_cast<size_t>(i)] * static_cast<double>(n)));
    assigned += sizes[static_cast<size_t>(i)];
  }
  for (size_t i = 0; assigned < n; i = (i + 1) % 3) {  // leftover goes to groups in order
    ++sizes[i];
    ++assigned;
  }

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  rng::Engine eng(rng::derive(seed, "split"));
  eng.shuffle(order);

  SplitResult out;
  size_t pos = 0;
  for (size_t i = 0; i < sizes[0]; ++i) out.train.push_back(corpus[order[pos++]]);
  for (size_t i = 0; i < sizes[1]; ++i) out.validation.push_back(corpus[order[pos++]]);
  for (size_t i = 0; i < sizes[2]; ++i) out.test.push_back(corpus[order[pos++]]);
  return out;
}

}  // namespace nst
