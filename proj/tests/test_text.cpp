#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "helpers.hpp"
#include "nst/common.hpp"
#include "nst/text.hpp"

using namespace nst;

TEST_CASE("tokenize keeps punctuation and lowercases") {
  CHECK(tokenize("Leave after 20:15.") ==
        std::vector<std::string>{"leave", "after", "20", ":", "15", "."});
  CHECK(tokenize("").empty());
  CHECK(tokenize("SUNDAY") == std::vector<std::string>{"sunday"});
  CHECK(tokenize("train-day") == std::vector<std::string>{"train", "-", "day"});
  CHECK(tokenize("  spaced   out  ") == std::vector<std::string>{"spaced", "out"});
}

TEST_CASE("vocab contains corpus and ontology tokens, deterministic order") {
  Ontology o = testutil::tiny_ontology();
  auto corpus = testutil::tiny_corpus(o);
  Vocabulary v1 = build_vocab(corpus, o);
  Vocabulary v2 = build_vocab(corpus, o);
  CHECK(vocab_to_json_text(v1) == vocab_to_json_text(v2));
  CHECK(v1.id("sunday") != v1.unk_id());
  CHECK(v1.id("monday") != v1.unk_id());
  CHECK(v1.id("hotel") != v1.unk_id());
  CHECK(v1.id("never-seen-token") == v1.unk_id());
  CHECK(v1.token(v1.cls_id()) == Vocabulary::kCls);

  Vocabulary empty_corpus_vocab = build_vocab({}, o);
  CHECK(empty_corpus_vocab.id("north") != empty_corpus_vocab.unk_id());
  CHECK(empty_corpus_vocab.id("none") != empty_corpus_vocab.unk_id());
}

TEST_CASE("vocab JSON round trip and hash") {
  Ontology o = testutil::tiny_ontology();
  Vocabulary v = build_vocab(testutil::tiny_corpus(o), o);
  Vocabulary back = vocab_from_json_text(vocab_to_json_text(v), "test");
  CHECK(vocab_to_json_text(back) == vocab_to_json_text(v));
  CHECK(vocab_hash(back) == vocab_hash(v));
}

namespace {
TurnContextFields fields_for(const Ontology& o, const std::map<std::string, std::string>& prev,
                             std::vector<std::pair<std::string, std::string>> history = {},
                             std::string system = "how can i help you",
                             std::string user = "i want train day to be sunday") {
  TurnContextFields f;
  f.history = std::move(history);
  f.prev_state = testutil::make_state(o, prev);
  f.system = std::move(system);
  f.user = std::move(user);
  return f;
}
}  // namespace

TEST_CASE("turn-1 context has empty history and state regions") {
  Ontology o = testutil::tiny_ontology();
  Vocabulary v = testutil::tiny_vocab(o, testutil::tiny_corpus(o));
  ContextInput ctx = build_context_input(fields_for(o, {}), v, 64);
  REQUIRE(ctx.tokens.size() >= 3);
  CHECK(ctx.tokens.front() == Vocabulary::kCls);
  CHECK(ctx.history.begin == ctx.history.end);
  CHECK(ctx.state.begin == ctx.state.end);
  CHECK(ctx.tokens[static_cast<size_t>(ctx.state.end)] == Vocabulary::kSep);
  CHECK(ctx.tokens.back() == Vocabulary::kSep);
  CHECK(ctx.value_spans.empty());
  // region order: [CLS] M B [SEP] D [SEP]
  std::vector<std::string> current(ctx.tokens.begin() + ctx.current.begin,
                                   ctx.tokens.begin() + ctx.current.end);
  CHECK(current.front() == "how");
  CHECK(current.back() == "sunday");
}

TEST_CASE("state region serializes active slots in order with separators") {
  Ontology o = testutil::tiny_ontology();
  Vocabulary v = testutil::tiny_vocab(o, testutil::tiny_corpus(o));
  ContextInput ctx = build_context_input(fields_for(o, {{"train-day", "sunday"}}), v, 64);
  std::vector<std::string> state(ctx.tokens.begin() + ctx.state.begin,
                                 ctx.tokens.begin() + ctx.state.end);
  CHECK(state == std::vector<std::string>{Vocabulary::kSlotSep, "train", "-", "day",
                                          Vocabulary::kValSep, "sunday"});
  REQUIRE(ctx.value_spans.count("train-day") == 1);
  TokenSpan span = ctx.value_spans.at("train-day");
  CHECK(ctx.tokens[static_cast<size_t>(span.begin)] == "sunday");
  CHECK(span.end - span.begin == 1);

  // two active slots appear in lexicographic order
  ContextInput both = build_context_input(
      fields_for(o, {{"train-day", "sunday"}, {"hotel-area", "north"}}), v, 64);
  std::vector<std::string> st(both.tokens.begin() + both.state.begin,
                              both.tokens.begin() + both.state.end);
  CHECK(st.front() == Vocabulary::kSlotSep);
  CHECK(st[1] == "hotel");
  REQUIRE(both.value_spans.count("hotel-area") == 1);
  REQUIRE(both.value_spans.count("train-day") == 1);
}

TEST_CASE("changing one value changes exactly the recorded span") {
  Ontology o = testutil::tiny_ontology();
  Vocabulary v = testutil::tiny_vocab(o, testutil::tiny_corpus(o));
  ContextInput a = build_context_input(fields_for(o, {{"train-day", "sunday"}}), v, 64);
  ContextInput b = build_context_input(fields_for(o, {{"train-day", "monday"}}), v, 64);
  REQUIRE(a.ids.size() == b.ids.size());
  TokenSpan span = a.value_spans.at("train-day");
  for (size_t i = 0; i < a.ids.size(); ++i) {
    bool inside = static_cast<int>(i) >= span.begin && static_cast<int>(i) < span.end;
    if (inside)
      CHECK(a.ids[i] != b.ids[i]);
    else
      CHECK(a.ids[i] == b.ids[i]);
  }
}

TEST_CASE("serialization is injective over previous states") {
  Ontology o = testutil::tiny_ontology();
  Vocabulary v = testutil::tiny_vocab(o, testutil::tiny_corpus(o));
  std::vector<DialogueState> states;
  for (const auto& area : o.candidates("hotel-area"))
    for (const auto& day : o.candidates("train-day"))
      states.push_back(testutil::make_state(o, {{"hotel-area", area}, {"train-day", day}}));
  std::set<std::vector<int>> regions;
  for (const auto& s : states) {
    TurnContextFields f = fields_for(o, {});
    f.prev_state = s;
    ContextInput ctx = build_context_input(f, v, 64);
    std::vector<int> region(ctx.ids.begin() + ctx.state.begin, ctx.ids.begin() + ctx.state.end);
    CHECK(regions.insert(region).second);
  }
  CHECK(regions.size() == states.size());
}

TEST_CASE("truncation drops oldest history turns first") {
  Ontology o = testutil::tiny_ontology();
  Vocabulary v = testutil::tiny_vocab(o, testutil::tiny_corpus(o));
  std::vector<std::pair<std::string, std::string>> history = {
      {"first system words", "first user words"},
      {"second system words", "second user words"},
      {"third system words", "third user words"},
  };
  TurnContextFields f = fields_for(o, {{"train-day", "sunday"}}, history);

  ContextInput full = build_context_input(f, v, 256);
  CHECK(full.history.end - full.history.begin == 18);

  ContextInput truncated = build_context_input(f, v, 35);
  std::vector<std::string> hist(truncated.tokens.begin() + truncated.history.begin,
                                truncated.tokens.begin() + truncated.history.end);
  REQUIRE(!hist.empty());
  CHECK(hist.front() == "second");  // oldest turn dropped first
  CHECK(hist.back() == "words");
  CHECK(truncated.length() <= 35);
  // state and current turn survive truncation
  CHECK(truncated.value_spans.count("train-day") == 1);
  CHECK(truncated.current.end > truncated.current.begin);
}

TEST_CASE("state plus current turn exceeding max_len is a hard error") {
  Ontology o = testutil::tiny_ontology();
  Vocabulary v = testutil::tiny_vocab(o, testutil::tiny_corpus(o));
  TurnContextFields f = fields_for(o, {{"train-day", "sunday"}, {"hotel-area", "north"}});
  CHECK_THROWS_AS(build_context_input(f, v, 10), Error);
}

TEST_CASE("state-free variant omits the state region") {
  Ontology o = testutil::tiny_ontology();
  Vocabulary v = testutil::tiny_vocab(o, testutil::tiny_corpus(o));
  TurnContextFields f = fields_for(o, {{"train-day", "sunday"}});
  ContextInput ctx = build_context_input(f, v, 64, /*include_state=*/false);
  CHECK(ctx.state.begin == ctx.state.end);
  CHECK(ctx.value_spans.empty());
  for (const auto& tok : ctx.tokens) CHECK(tok != Vocabulary::kSlotSep);
}
