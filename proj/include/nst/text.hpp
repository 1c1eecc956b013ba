#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nst/corpus.hpp"
#include "nst/ontology.hpp"

namespace nst {

/// Lowercases, splits on whitespace, keeps punctuation as single-char tokens.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr const char* kPad = "[PAD]";
  static constexpr const char* kUnk = "[UNK]";
  static constexpr const char* kCls = "[CLS]";
  static constexpr const char* kSep = "[SEP]";
  static constexpr const char* kSlotSep = "[SLOT_SEP]";
  static constexpr const char* kValSep = "[VAL_SEP]";

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens_in_order);

  int id(const std::string& token) const;  // [UNK] fallback
  const std::string& token(int id) const;
  size_t size() const { return id_to_token_.size(); }

  int pad_id() const { return pad_id_; }
  int unk_id() const { return unk_id_; }
  int cls_id() const { return cls_id_; }
  int sep_id() const { return sep_id_; }
  int slot_sep_id() const { return slot_sep_id_; }
  int val_sep_id() const { return val_sep_id_; }

  std::vector<int> ids_of(const std::vector<std::string>& tokens) const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int pad_id_ = -1, unk_id_ = -1, cls_id_ = -1, sep_id_ = -1, slot_sep_id_ = -1, val_sep_id_ = -1;
};

/// Specials first, then corpus/ontology tokens by descending frequency,
/// lexicographic tie-break. Deterministic for identical inputs.
Vocabulary build_vocab(const std::vector<Dialogue>& corpus, const Ontology& ontology);

std::string vocab_to_json_text(const Vocabulary& vocab);
Vocabulary vocab_from_json_text(const std::string& text, const std::string& origin);
uint64_t vocab_hash(const Vocabulary& vocab);

struct TokenSpan {
  int begin = 0;
  int end = 0;  // exclusive
  bool operator==(const TokenSpan&) const = default;
};

/// Serialized context input [CLS] M_t B_{t-1} [SEP] D_t [SEP].
struct ContextInput {
  std::vector<int> ids;
  std::vector<std::string> tokens;  // aligned with ids, for export and debugging
  TokenSpan history;                // M_t region
  TokenSpan state;                  // B_{t-1} region
  TokenSpan current;                // D_t region
  std::map<std::string, TokenSpan> value_spans;  // active slot -> its value tokens
  int length() const { return static_cast<int>(ids.size()); }
};

/// One turn's raw context fields before serialization.
struct TurnContextFields {
  std::vector<std::pair<std::string, std::string>> history;  // (system, user) per prior turn
  DialogueState prev_state;
  std::string system;
  std::string user;
};

/// Builds the context input. Truncation drops oldest history turns first and
/// never touches the state or current-turn regions; if those alone exceed
/// max_len the instance is unprocessable and an Error is thrown.
/// include_state=false builds the state-free variant [CLS] M_t [SEP] D_t [SEP].
ContextInput build_context_input(const TurnContextFields& fields, const Vocabulary& vocab,
                                 int max_len, bool include_state = true);

}  // namespace nst
