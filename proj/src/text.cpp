#include "nst/text.hpp"

#include <algorithm>
#include <cctype>

#include "json.hpp"
#include "nst/common.hpp"

namespace nst {

using nlohmann::json;

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.push_back(std::string(1, raw));  // punctuation kept as its own token
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens_in_order)
    : id_to_token_(std::move(tokens_in_order)) {
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    const std::string& tok = id_to_token_[i];
    if (!token_to_id_.emplace(tok, static_cast<int>(i)).second)
      fail("vocabulary: duplicate token '" + tok + "'");
  }
  auto need = [&](const char* tok) {
    auto it = token_to_id_.find(tok);
    if (it == token_to_id_.end()) fail(std::string("vocabulary: missing special token ") + tok);
    return it->second;
  };
  pad_id_ = need(kPad);
  unk_id_ = need(kUnk);
  cls_id_ = need(kCls);
  sep_id_ = need(kSep);
  slot_sep_id_ = need(kSlotSep);
  val_sep_id_ = need(kValSep);
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? unk_id_ : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size())
    fail("vocabulary: id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::ids_of(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Vocabulary build_vocab(const std::vector<Dialogue>& corpus, const Ontology& ontology) {
  std::map<std::string, size_t> freq;
  auto count = [&](const std::string& text) {
    for (auto& tok : tokenize(text)) ++freq[tok];
  };
  for (const auto& d : corpus) {
    for (const auto& t : d.turns) {
      count(t.system);
      count(t.user);
    }
  }
  for (const auto& slot : ontology.slots()) {
    count(slot);
    for (const auto& v : ontology.candidates(slot)) count(v);
  }

  std::vector<std::pair<std::string, size_t>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens = {Vocabulary::kPad,     Vocabulary::kUnk,
                                     Vocabulary::kCls,     Vocabulary::kSep,
                                     Vocabulary::kSlotSep, Vocabulary::kValSep};
  for (auto& [tok, _] : entries) tokens.push_back(tok);
  return Vocabulary(std::move(tokens));
}

std::string vocab_to_json_text(const Vocabulary& vocab) {
  json j = json::object();
  for (size_t i = 0; i < vocab.size(); ++i) j[vocab.token(static_cast<int>(i))] = i;
  return j.dump(2) + "\n";
}

Vocabulary vocab_from_json_text(const std::string& text, const std::string& origin) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail("vocabulary: cannot parse JSON from " + origin);
  std::vector<std::string> tokens(j.size());
  for (const auto& [tok, id] : j.items()) {
    if (!id.is_number_unsigned()) fail("vocabulary: non-integer id for token '" + tok + "' in " + origin);
    size_t i = id.get<size_t>();
    if (i >= tokens.size() || !tokens[i].empty())
      fail("vocabulary: ids must be dense from 0 in " + origin);
    tokens[i] = tok;
  }
  return Vocabulary(std::move(tokens));
}

uint64_t vocab_hash(const Vocabulary& vocab) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < vocab.size(); ++i) {
    h = fnv1a64(vocab.token(static_cast<int>(i)), h);
    h = fnv1a64("\n", h);
  }
  return h;
}

ContextInput build_context_input(const TurnContextFields& fields, const Vocabulary& vocab,
                                 int max_len, bool include_state) {
  // Per-turn history token lists, oldest first, so truncation can drop whole turns.
  std::vector<std::vector<std::string>> history_turns;
  for (const auto& [system, user] : fields.history) {
    std::vector<std::string> toks = tokenize(system);
    auto user_toks = tokenize(user);
    toks.insert(toks.end(), user_toks.begin(), user_toks.end());
    history_turns.push_back(std::move(toks));
  }

  // State region: per active slot, [SLOT_SEP] slot tokens [VAL_SEP] value tokens.
  struct SlotChunk {
    std::string slot;
    std::vector<std::string> tokens;
    int value_offset;  // offset of the value tokens within the chunk
  };
  std::vector<SlotChunk> state_chunks;
  if (include_state) {
    for (const auto& slot : active_slots(fields.prev_state)) {
      SlotChunk chunk;
      chunk.slot = slot;
      chunk.tokens.push_back(Vocabulary::kSlotSep);
      for (auto& t : tokenize(slot)) chunk.tokens.push_back(std::move(t));
      chunk.tokens.push_back(Vocabulary::kValSep);
      chunk.value_offset = static_cast<int>(chunk.tokens.size());
      for (auto& t : tokenize(fields.prev_state.value_of(slot))) chunk.tokens.push_back(std::move(t));
      state_chunks.push_back(std::move(chunk));
    }
  }

  std::vector<std::string> current_tokens = tokenize(fields.system);
  for (auto& t : tokenize(fields.user)) current_tokens.push_back(std::move(t));

  size_t fixed = 3;  // [CLS] and the two [SEP]s
  for (const auto& c : state_chunks) fixed += c.tokens.size();
  fixed += current_tokens.size();
  if (fixed > static_cast<size_t>(max_len))
    fail("context: previous state and current turn alone exceed max_len (" +
         std::to_string(fixed) + " > " + std::to_string(max_len) + ")");

  size_t history_total = 0;
  for (const auto& h : history_turns) history_total += h.size();
  size_t first_kept = 0;
  while (first_kept < history_turns.size() && fixed + history_total > static_cast<size_t>(max_len)) {
    history_total -= history_turns[first_kept].size();
    ++first_kept;  // drop the oldest turn
  }

  ContextInput out;
  auto push = [&](const std::string& tok) { out.tokens.push_back(tok); };
  auto pos = [&] { return static_cast<int>(out.tokens.size()); };
  push(Vocabulary::kCls);
  out.history.begin = pos();
  for (size_t i = first_kept; i < history_turns.size(); ++i)
    for (const auto& t : history_turns[i]) push(t);
  out.history.end = pos();
  out.state.begin = pos();
  for (const auto& chunk : state_chunks) {
    int chunk_begin = pos();
    for (const auto& t : chunk.tokens) push(t);
    out.value_spans[chunk.slot] = {chunk_begin + chunk.value_offset, pos()};
  }
  out.state.end = pos();
  push(Vocabulary::kSep);
  out.current.begin = pos();
  for (const auto& t : current_tokens) push(t);
  out.current.end = pos();
  push(Vocabulary::kSep);

  out.ids.reserve(out.tokens.size());
  for (const auto& t : out.tokens) out.ids.push_back(vocab.id(t));
  return out;
}

}  // namespace nst
