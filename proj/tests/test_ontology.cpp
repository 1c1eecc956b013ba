#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "helpers.hpp"
#include "nst/common.hpp"
#include "nst/ontology.hpp"

using namespace nst;

TEST_CASE("load appends none and keeps file order") {
  testutil::TempDir tmp;
  write_file(tmp.str("ontology.json"),
             R"({"slots": {"train-day": ["monday", "sunday"]}})");
  Ontology o = load_ontology(tmp.str("ontology.json"));
  REQUIRE(o.slot_count() == 1);
  CHECK(o.slots()[0] == "train-day");
  CHECK(o.candidates("train-day") == std::vector<std::string>{"monday", "sunday", "none"});
}

TEST_CASE("none kept in place when already present") {
  Ontology o({{"s", {"a", "none", "b"}}});
  CHECK(o.candidates("s") == std::vector<std::string>{"a", "none", "b"});
}

TEST_CASE("slots are sorted lexicographically regardless of file order") {
  testutil::TempDir tmp;
  write_file(tmp.str("o.json"), R"({"slots": {"z-slot": ["a"], "a-slot": ["b"]}})");
  Ontology o = load_ontology(tmp.str("o.json"));
  CHECK(o.slots() == std::vector<std::string>{"a-slot", "z-slot"});
  CHECK(o.slot_index("a-slot") == 0);
  CHECK(o.slot_index("z-slot") == 1);
  CHECK(o.slot_index("missing") == -1);
}

TEST_CASE("invalid ontologies are rejected") {
  CHECK_THROWS_AS(Ontology({{"s", std::vector<std::string>{}}}), Error);  // empty value list
  CHECK_THROWS_AS(Ontology({{"s", {"a", "a"}}}), Error);               // duplicate value
  CHECK_THROWS_AS(Ontology({{"s", {"a"}}, {"s", {"b"}}}), Error);      // duplicate slot
  testutil::TempDir tmp;
  write_file(tmp.str("bad.json"), "{nope");
  CHECK_THROWS_AS(load_ontology(tmp.str("bad.json")), Error);
  CHECK_THROWS_AS(load_ontology(tmp.str("absent.json")), Error);
}

TEST_CASE("thirty-slot ontology reports its slot count") {
  std::vector<std::pair<std::string, std::vector<std::string>>> slots;
  for (int i = 0; i < 30; ++i)
    slots.push_back({"domain-slot-" + std::to_string(i), {"a", "b"}});
  Ontology o(std::move(slots));
  CHECK(o.slot_count() == 30);
}

TEST_CASE("active slots") {
  Ontology o = testutil::tiny_ontology();
  CHECK(active_slots(all_none_state(o)).empty());

  DialogueState s = testutil::make_state(o, {{"train-day", "sunday"}});
  CHECK(active_slots(s) == std::vector<std::string>{"train-day"});

  DialogueState both = testutil::make_state(o, {{"train-day", "sunday"}, {"hotel-area", "north"}});
  CHECK(active_slots(both) == std::vector<std::string>{"hotel-area", "train-day"});
}

TEST_CASE("active slots on a hand-enumerated 30-slot fixture") {
  std::vector<std::pair<std::string, std::vector<std::string>>> slots;
  for (int i = 0; i < 30; ++i)
    slots.push_back({std::string("slot-") + (i < 10 ? "0" : "") + std::to_string(i), {"x", "y"}});
  Ontology o(std::move(slots));
  DialogueState s = testutil::make_state(
      o, {{"slot-03", "x"}, {"slot-17", "y"}, {"slot-29", "x"}});
  CHECK(active_slots(s) == std::vector<std::string>{"slot-03", "slot-17", "slot-29"});
}

TEST_CASE("validate_state reports every violation without throwing") {
  Ontology o = testutil::tiny_ontology();
  CHECK(validate_state(testutil::make_state(o, {{"train-day", "sunday"}}), o).empty());

  DialogueState bad = testutil::make_state(o, {{"train-day", "tuesday"}});
  auto violations = validate_state(bad, o);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].slot == "train-day");
  CHECK(violations[0].value == "tuesday");

  DialogueState dropped = all_none_state(o);
  dropped.assignments.erase("hotel-area");
  auto missing = validate_state(dropped, o);
  REQUIRE(missing.size() == 1);
  CHECK(missing[0].slot == "hotel-area");
  CHECK(missing[0].reason == "slot absent");

  DialogueState unknown = all_none_state(o);
  unknown.assignments["made-up"] = "x";
  CHECK(validate_state(unknown, o).size() == 1);
}

TEST_CASE("active_slots depends only on content") {
  Ontology o = testutil::tiny_ontology();
  DialogueState a = testutil::make_state(o, {{"train-day", "sunday"}, {"hotel-area", "east"}});
  DialogueState b;
  b.assignments["train-day"] = "sunday";
  b.assignments["hotel-area"] = "east";
  CHECK(active_slots(a) == active_slots(b));
}

TEST_CASE("serialize/load round trip keeps states valid") {
  Ontology o = testutil::tiny_ontology();
  rng::Engine eng(5);
  for (int trial = 0; trial < 50; ++trial) {
    DialogueState s = all_none_state(o);
    for (const auto& slot : o.slots()) {
      const auto& cands = o.candidates(slot);
      s.assignments[slot] = cands[eng.index(cands.size())];
    }
    DialogueState back = state_from_sparse(state_to_sparse(s), o);
    CHECK(validate_state(back, o).empty());
    CHECK(back == s);
  }
}
