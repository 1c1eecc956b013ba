#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "helpers.hpp"
#include "nst/common.hpp"
#include "nst/corpus.hpp"

using namespace nst;

TEST_CASE("corpus load echoes the fixture") {
  Ontology o = testutil::tiny_ontology();
  testutil::TempDir tmp;
  write_file(tmp.str("corpus.json"), corpus_to_json_text(testutil::tiny_corpus(o)));
  auto corpus = load_corpus(tmp.str("corpus.json"), o);
  REQUIRE(corpus.size() == 2);
  CHECK(corpus[0].id == "d1");
  CHECK(corpus[0].turns.size() == 2);
  CHECK(corpus[1].turns.size() == 2);
  CHECK(corpus[0].turns[1].gold_state.value_of("train-day") == "monday");
}

TEST_CASE("empty dialogue list loads as empty corpus") {
  Ontology o = testutil::tiny_ontology();
  testutil::TempDir tmp;
  write_file(tmp.str("corpus.json"), R"({"dialogues": []})");
  CHECK(load_corpus(tmp.str("corpus.json"), o).empty());
}

TEST_CASE("bad state names the dialogue and turn") {
  Ontology o = testutil::tiny_ontology();
  testutil::TempDir tmp;
  write_file(tmp.str("corpus.json"), R"({"dialogues": [
    {"id": "d1", "turns": [
      {"system": "s", "user": "u", "state": {"train-day": "sunday"}},
      {"system": "s", "user": "u", "state": {"train-day": "tuesday"}}
    ]}
  ]})");
  try {
    load_corpus(tmp.str("corpus.json"), o);
    FAIL("expected a load error");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("d1") != std::string::npos);
    CHECK(msg.find("turn 2") != std::string::npos);
  }
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticConfig cfg;
  cfg.n_dialogues = 20;
  cfg.seed = 7;
  SyntheticCorpus a = generate_synthetic_corpus(cfg);
  SyntheticCorpus b = generate_synthetic_corpus(cfg);
  CHECK(corpus_to_json_text(a.dialogues) == corpus_to_json_text(b.dialogues));
  CHECK(events_to_json_text(a.events) == events_to_json_text(b.events));
  CHECK(ontology_to_json_text(a.ontology) == ontology_to_json_text(b.ontology));
}

TEST_CASE("synthetic gold states are always ontology-valid and cumulative") {
  SyntheticConfig cfg;
  cfg.n_dialogues = 30;
  cfg.seed = 11;
  SyntheticCorpus c = generate_synthetic_corpus(cfg);
  REQUIRE(c.dialogues.size() == 30);
  for (const auto& d : c.dialogues) {
    REQUIRE(!d.turns.empty());
    CHECK(d.turns.size() >= static_cast<size_t>(cfg.min_turns));
    CHECK(d.turns.size() <= static_cast<size_t>(cfg.max_turns));
    for (const auto& t : d.turns) CHECK(validate_state(t.gold_state, c.ontology).empty());
  }
}

TEST_CASE("state changes exactly match the event log") {
  SyntheticConfig cfg;
  cfg.n_dialogues = 40;
  cfg.seed = 3;
  SyntheticCorpus c = generate_synthetic_corpus(cfg);
  for (const auto& d : c.dialogues) {
    const auto& events = c.events.at(d.id);
    REQUIRE(events.size() == d.turns.size());
    DialogueState prev = all_none_state(c.ontology);
    for (size_t t = 0; t < d.turns.size(); ++t) {
      std::set<std::string> touched;
      for (const auto& ev : events[t]) touched.insert(ev.slot);
      for (const auto& [slot, value] : d.turns[t].gold_state.assignments) {
        if (prev.value_of(slot) != value) CHECK(touched.count(slot) == 1);
      }
      // and the event log never names a slot that did not change
      for (const auto& ev : events[t])
        CHECK(d.turns[t].gold_state.value_of(ev.slot) == ev.value);
      prev = d.turns[t].gold_state;
    }
  }
}

TEST_CASE("p_change = 0 gives monotone accumulation") {
  SyntheticConfig cfg;
  cfg.n_dialogues = 25;
  cfg.p_change = 0.0;
  cfg.seed = 9;
  SyntheticCorpus c = generate_synthetic_corpus(cfg);
  for (const auto& d : c.dialogues) {
    DialogueState prev = all_none_state(c.ontology);
    for (const auto& t : d.turns) {
      for (const auto& [slot, value] : prev.assignments) {
        if (value != kNoneValue) CHECK(t.gold_state.value_of(slot) == value);
      }
      prev = t.gold_state;
    }
  }
}

TEST_CASE("change-event frequency tracks p_change") {
  SyntheticConfig cfg;
  cfg.n_dialogues = 400;
  cfg.p_change = 0.5;
  cfg.min_turns = 4;
  cfg.max_turns = 6;
  cfg.seed = 21;
  SyntheticCorpus c = generate_synthetic_corpus(cfg);
  size_t eligible = 0, changed = 0;
  for (const auto& d : c.dialogues) {
    DialogueState prev = all_none_state(c.ontology);
    const auto& events = c.events.at(d.id);
    for (size_t t = 0; t < d.turns.size(); ++t) {
      if (!active_slots(prev).empty()) {
        ++eligible;
        for (const auto& ev : events[t])
          if (ev.kind == TurnEvent::Kind::Change) {
            ++changed;
            break;
          }
      }
      prev = d.turns[t].gold_state;
    }
  }
  REQUIRE(eligible > 1000);
  double fraction = static_cast<double>(changed) / static_cast<double>(eligible);
  CHECK(fraction == doctest::Approx(0.5).epsilon(0.1));
  CHECK(fraction >= 0.45);
  CHECK(fraction <= 0.55);
}

TEST_CASE("split sizes follow floor-then-distribute") {
  Ontology o = testutil::tiny_ontology();
  std::vector<Dialogue> corpus;
  for (int i = 0; i < 10; ++i) {
    Dialogue d;
    d.id = "d" + std::to_string(i);
    d.turns.push_back({"s", "u", all_none_state(o)});
    corpus.push_back(d);
  }

  SplitResult r = split_corpus(corpus, {0.8, 0.1, 0.1}, 1);
  CHECK(r.train.size() == 8);
  CHECK(r.validation.size() == 1);
  CHECK(r.test.size() == 1);

  SplitResult all = split_corpus(corpus, {1.0, 0.0, 0.0}, 1);
  CHECK(all.train.size() == 10);
  CHECK(all.validation.empty());
  CHECK(all.test.empty());

  CHECK_THROWS_AS(split_corpus(corpus, {0.5, 0.2, 0.2}, 1), Error);
}

TEST_CASE("split is a deterministic partition") {
  Ontology o = testutil::tiny_ontology();
  std::vector<Dialogue> corpus;
  for (int i = 0; i < 23; ++i) {
    Dialogue d;
    d.id = "d" + std::to_string(i);
    d.turns.push_back({"s", "u", all_none_state(o)});
    corpus.push_back(d);
  }
  SplitResult a = split_corpus(corpus, {0.7, 0.15, 0.15}, 42);
  SplitResult b = split_corpus(corpus, {0.7, 0.15, 0.15}, 42);

  auto ids = [](const std::vector<Dialogue>& ds) {
    std::set<std::string> out;
    for (const auto& d : ds) out.insert(d.id);
    return out;
  };
  CHECK(ids(a.train) == ids(b.train));
  CHECK(ids(a.validation) == ids(b.validation));
  CHECK(ids(a.test) == ids(b.test));

  std::set<std::string> all = ids(a.train);
  for (const auto& id : ids(a.validation)) CHECK(all.insert(id).second);
  for (const auto& id : ids(a.test)) CHECK(all.insert(id).second);
  CHECK(all.size() == corpus.size());
}

TEST_CASE("events round-trip through JSON") {
  SyntheticConfig cfg;
  cfg.n_dialogues = 5;
  cfg.seed = 2;
  SyntheticCorpus c = generate_synthetic_corpus(cfg);
  std::string text = events_to_json_text(c.events);
  EventLog back = events_from_json_text(text, "test");
  CHECK(events_to_json_text(back) == text);
}
