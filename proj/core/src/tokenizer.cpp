#include "poft/tokenizer.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace poft {

std::string to_string(TokenizerKind k) {
  switch (k) {
    case TokenizerKind::byte: return "byte";
    case TokenizerKind::character: return "char";
    case TokenizerKind::bpe: return "bpe";
  }
  throw std::logic_error("bad TokenizerKind");
}

TokenizerKind tokenizer_kind_from_string(std::string_view s) {
  if (s == "byte") return TokenizerKind::byte;
  if (s == "char") return TokenizerKind::character;
  if (s == "bpe") return TokenizerKind::bpe;
  throw std::invalid_argument("unknown tokenizer kind: " + std::string(s));
}

namespace {

std::string hex_encode(std::string_view s) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(s.size() * 2);
  for (unsigned char c : s) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

std::string hex_decode(std::string_view s) {
  if (s.size() % 2 != 0) throw std::invalid_argument("odd hex string length");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw std::invalid_argument("bad hex digit");
  };
  std::string out;
  out.reserve(s.size() / 2);
  for (std::size_t i = 0; i < s.size(); i += 2)
    out.push_back(static_cast<char>((nib(s[i]) << 4) | nib(s[i + 1])));
  return out;
}

// length of the UTF-8 codepoint starting at s[i]; 1 for malformed bytes
std::size_t utf8_len(std::string_view s, std::size_t i) {
  const unsigned char c = static_cast<unsigned char>(s[i]);
  std::size_t n = 1;
  if ((c & 0xe0) == 0xc0) n = 2;
  else if ((c & 0xf0) == 0xe0) n = 3;
  else if ((c & 0xf8) == 0xf0) n = 4;
  if (i + n > s.size()) return 1;
  for (std::size_t k = 1; k < n; ++k)
    if ((static_cast<unsigned char>(s[i + k]) & 0xc0) != 0x80) return 1;
  return n;
}

}  // namespace

void Tokenizer::add_specials_and_bytes() {
  vocab_.id_to_token = {"<pad>", "<bos>", "<eos>"};
  // specials are absent from token_to_id: they are never produced by encode
  for (int b = 0; b < 256; ++b) {
    std::string t(1, static_cast<char>(b));
    vocab_.token_to_id[t] = vocab_.size();
    vocab_.id_to_token.push_back(std::move(t));
  }
}

int Tokenizer::add_token(std::string token) {
  auto it = vocab_.token_to_id.find(token);
  if (it != vocab_.token_to_id.end()) return it->second;
  const int id = vocab_.size();
  vocab_.token_to_id[token] = id;
  vocab_.id_to_token.push_back(std::move(token));
  return id;
}

Tokenizer Tokenizer::byte_level() {
  Tokenizer t;
  t.kind_ = TokenizerKind::byte;
  t.add_specials_and_bytes();
  return t;
}

Tokenizer Tokenizer::char_level(std::span<const std::string> corpus) {
  Tokenizer t;
  t.kind_ = TokenizerKind::character;
  t.add_specials_and_bytes();
  std::vector<std::string> chars;
  for (const std::string& s : corpus) {
    for (std::size_t i = 0; i < s.size();) {
      const std::size_t n = utf8_len(s, i);
      if (n > 1) chars.push_back(s.substr(i, n));
      i += n;
    }
  }
  std::sort(chars.begin(), chars.end());
  chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
  for (std::string& c : chars) t.add_token(std::move(c));
  return t;
}

Tokenizer Tokenizer::train_bpe(std::span<const std::string> corpus, int num_merges,
                               std::uint64_t /*seed*/) {
  if (corpus.empty()) throw std::invalid_argument("train_bpe: empty corpus");
  if (num_merges < 0) throw std::invalid_argument("train_bpe: negative num_merges");
  Tokenizer t;
  t.kind_ = TokenizerKind::bpe;
  t.add_specials_and_bytes();

  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.size());
  for (const std::string& s : corpus) {
    std::vector<int> ids;
    ids.reserve(s.size());
    for (unsigned char c : s) ids.push_back(3 + c);
    seqs.push_back(std::move(ids));
  }

  for (int m = 0; m < num_merges; ++m) {
    std::map<std::pair<int, int>, std::size_t> counts;
    for (const auto& seq : seqs)
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];

    // most frequent pair; ties broken by lexicographic order of the pair
    std::pair<int, int> best{-1, -1};
    std::size_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count < 2) continue;
      if (count > best_count) {
        best = pair;
        best_count = count;
      } else if (count == best_count) {
        auto key = [&](const std::pair<int, int>& p) {
          return std::make_pair(t.vocab_.id_to_token[p.first], t.vocab_.id_to_token[p.second]);
        };
        if (key(pair) < key(best)) best = pair;
      }
    }
    if (best_count == 0) break;

    const std::string left = t.vocab_.id_to_token[best.first];
    const std::string right = t.vocab_.id_to_token[best.second];
    const int merged_id = t.add_token(left + right);
    t.merge_rank_[{left, right}] = t.merges_.size();
    t.merges_.emplace_back(left, right);

    for (auto& seq : seqs) {
      std::vector<int> out;
      out.reserve(seq.size());
      for (std::size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == best.first && seq[i + 1] == best.second) {
          out.push_back(merged_id);
          i += 2;
        } else {
          out.push_back(seq[i]);
          ++i;
        }
      }
      seq = std::move(out);
    }
  }
  return t;
}

std::vector<int> Tokenizer::encode(std::string_view s) const {
  std::vector<int> ids;
  if (s.empty()) return ids;
  switch (kind_) {
    case TokenizerKind::byte: {
      ids.reserve(s.size());
      for (unsigned char c : s) ids.push_back(3 + c);
      return ids;
    }
    case TokenizerKind::character: {
      for (std::size_t i = 0; i < s.size();) {
        const std::size_t n = utf8_len(s, i);
        if (n == 1) {
          ids.push_back(3 + static_cast<unsigned char>(s[i]));
        } else {
          auto it = vocab_.token_to_id.find(std::string(s.substr(i, n)));
          if (it != vocab_.token_to_id.end()) {
            ids.push_back(it->second);
          } else {
            for (std::size_t k = 0; k < n; ++k)
              ids.push_back(3 + static_cast<unsigned char>(s[i + k]));
          }
        }
        i += n;
      }
      return ids;
    }
    case TokenizerKind::bpe: {
      std::vector<std::string> toks;
      toks.reserve(s.size());
      for (char c : s) toks.emplace_back(1, c);
      while (toks.size() >= 2) {
        std::size_t best_rank = merges_.size();
        for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
          auto it = merge_rank_.find({toks[i], toks[i + 1]});
          if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
        }
        if (best_rank == merges_.size()) break;
        const auto& [left, right] = merges_[best_rank];
        std::vector<std::string> next;
        next.reserve(toks.size());
        for (std::size_t i = 0; i < toks.size();) {
          if (i + 1 < toks.size() && toks[i] == left && toks[i + 1] == right) {
            next.push_back(left + right);
            i += 2;
          } else {
            next.push_back(std::move(toks[i]));
            ++i;
          }
        }
        toks = std::move(next);
      }
      ids.reserve(toks.size());
      for (const std::string& t : toks) ids.push_back(vocab_.token_to_id.at(t));
      return ids;
    }
  }
  throw std::logic_error("bad TokenizerKind");
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_.size()) throw std::out_of_range("decode: id out of range");
    if (id < 3) continue;  // pad/bos/eos carry no text
    out += vocab_.id_to_token[id];
  }
  return out;
}

int Tokenizer::token_count(std::string_view s) const {
  return static_cast<int>(encode(s).size());
}

std::string Tokenizer::serialize() const {
  std::ostringstream out;
  out << "poft-tokenizer v1\n";
  out << "kind " << to_string(kind_) << "\n";
  out << "vocab " << vocab_.size() << "\n";
  for (const std::string& t : vocab_.id_to_token) out << hex_encode(t) << "\n";
  out << "merges " << merges_.size() << "\n";
  for (const auto& [l, r] : merges_) out << hex_encode(l) << " " << hex_encode(r) << "\n";
  return out.str();
}

Tokenizer Tokenizer::deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line, word;
  if (!std::getline(in, line) || line != "poft-tokenizer v1")
    throw std::invalid_argument("bad tokenizer file header");
  Tokenizer t;
  in >> word;
  if (word != "kind") throw std::invalid_argument("expected 'kind'");
  in >> word;
  t.kind_ = tokenizer_kind_from_string(word);
  int n = 0;
  in >> word >> n;
  if (word != "vocab" || n < 3) throw std::invalid_argument("bad vocab section");
  t.vocab_.id_to_token.clear();
  for (int i = 0; i < n; ++i) {
    in >> word;
    std::string tok = hex_decode(word);
    if (i >= 3) t.vocab_.token_to_id[tok] = i;
    t.vocab_.id_to_token.push_back(std::move(tok));
  }
  int m = 0;
  in >> word >> m;
  if (word != "merges" || m < 0) throw std::invalid_argument("bad merges section");
  for (int i = 0; i < m; ++i) {
    std::string l, r;
    in >> l >> r;
    std::pair<std::string, std::string> pair{hex_decode(l), hex_decode(r)};
    t.merge_rank_[pair] = t.merges_.size();
    t.merges_.push_back(std::move(pair));
  }
  return t;
}

void Tokenizer::save(const std::string& path) const { write_text_file(path, serialize()); }

Tokenizer Tokenizer::load(const std::string& path) { return deserialize(read_text_file(path)); }

}  // namespace poft
