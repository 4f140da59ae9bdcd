#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "poft/common.hpp"

namespace poft {

enum class TokenizerKind { byte, character, bpe };

std::string to_string(TokenizerKind k);
TokenizerKind tokenizer_kind_from_string(std::string_view s);

struct Vocabulary {
  std::vector<std::string> id_to_token;  // byte strings; specials hold sentinel names
  std::unordered_map<std::string, int> token_to_id;
  int pad_id = 0;
  int bos_id = 1;
  int eos_id = 2;

  int size() const { return static_cast<int>(id_to_token.size()); }
};

// Immutable after construction; safe for concurrent reads. Encoding is
// byte-based: unknown input always falls back to single-byte atoms, so
// encode never fails and decode(encode(s)) == s.
class Tokenizer {
 public:
  static Tokenizer byte_level();
  // byte atoms plus one token per multi-byte UTF-8 codepoint seen in the corpus
  static Tokenizer char_level(std::span<const std::string> corpus);
  static Tokenizer train_bpe(std::span<const std::string> corpus, int num_merges,
                             std::uint64_t seed);

  std::vector<int> encode(std::string_view s) const;
  std::string decode(std::span<const int> ids) const;
  int token_count(std::string_view s) const;

  TokenizerKind kind() const { return kind_; }
  const Vocabulary& vocab() const { return vocab_; }
  int vocab_size() const { return vocab_.size(); }
  int pad_id() const { return vocab_.pad_id; }
  int bos_id() const { return vocab_.bos_id; }
  int eos_id() const { return vocab_.eos_id; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  std::string serialize() const;
  static Tokenizer deserialize(const std::string& text);
  void save(const std::string& path) const;
  static Tokenizer load(const std::string& path);
  std::uint64_t content_hash() const { return fnv1a64(serialize()); }

 private:
  Tokenizer() = default;
  void add_specials_and_bytes();
  int add_token(std::string token);

  TokenizerKind kind_ = TokenizerKind::byte;
  Vocabulary vocab_;
  std::vector<std::pair<std::string, std::string>> merges_;              // bpe only
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

// Plain-text prompt construction shared by every model: instruction,
// separator, response. Chat templates are out of scope.
inline constexpr const char* kPromptSeparator = "\n";

}  // namespace poft
