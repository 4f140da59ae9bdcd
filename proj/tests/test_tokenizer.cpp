#include <doctest.h>

#include <string>
#include <vector>

#include "poft/objectives.hpp"
#include "poft/tokenizer.hpp"

using namespace poft;

TEST_CASE("byte-level tokenizer round-trips arbitrary bytes") {
  Tokenizer tok = Tokenizer::byte_level();
  CHECK(tok.vocab_size() == 259);  // pad, bos, eos + 256 byte atoms
  std::string s;
  for (int b = 0; b < 256; ++b) s.push_back(static_cast<char>(b));
  auto ids = tok.encode(s);
  CHECK(ids.size() == 256);
  CHECK(tok.decode(ids) == s);
  // byte atom for 0x00 sits right after the specials
  CHECK(ids[0] == 3);
  CHECK(ids[255] == 258);
}

TEST_CASE("char-level tokenizer gives one id per codepoint seen in training") {
  const std::vector<std::string> corpus{"héllo", "naïve \xE2\x82\xAC"};
  Tokenizer tok = Tokenizer::char_level(corpus);
  auto ids = tok.encode("hé€");
  CHECK(ids.size() == 3);  // h + é + € each a single token
  CHECK(tok.decode(ids) == "hé€");
  // unseen multi-byte codepoints fall back to byte atoms, never fail
  const std::string unseen = "\xF0\x9F\x98\x80";
  auto fb = tok.encode(unseen);
  CHECK(fb.size() == 4);
  CHECK(tok.decode(fb) == unseen);
}

TEST_CASE("BPE learns the most frequent pair first, hand-simulated") {
  // corpus: "abab" x3 and "abc" x2 -> pair (a,b) occurs 8 times, wins merge 1;
  // then (ab,ab) occurs 3 times, beating (ab,c) at 2.
  const std::vector<std::string> corpus{"abab", "abab", "abab", "abc", "abc"};
  Tokenizer tok = Tokenizer::train_bpe(corpus, 2, 0);
  REQUIRE(tok.merges().size() == 2);
  CHECK(tok.merges()[0].first == "a");
  CHECK(tok.merges()[0].second == "b");
  CHECK(tok.merges()[1].first == "ab");
  CHECK(tok.merges()[1].second == "ab");
  CHECK(tok.encode("abab").size() == 1);
  CHECK(tok.encode("abc").size() == 2);  // "ab" + "c"
  CHECK(tok.decode(tok.encode("abcabab")) == "abcabab");
}

TEST_CASE("BPE merge ties break lexicographically") {
  // "xy" and "yz" both appear twice inside "xyz xyz"; (x,y) < (y,z)
  const std::vector<std::string> corpus{"xyz", "xyz"};
  Tokenizer tok = Tokenizer::train_bpe(corpus, 1, 0);
  REQUIRE(tok.merges().size() == 1);
  CHECK(tok.merges()[0].first == "x");
  CHECK(tok.merges()[0].second == "y");
}

TEST_CASE("BPE stops early when no pair repeats") {
  const std::vector<std::string> corpus{"ab"};
  Tokenizer tok = Tokenizer::train_bpe(corpus, 10, 0);
  CHECK(tok.merges().empty());  // best pair count 1 < 2
}

TEST_CASE("serialization round-trips every tokenizer kind") {
  const std::vector<std::string> corpus{"hello world", "héllo wörld", "aaa bbb aaa"};
  for (Tokenizer tok : {Tokenizer::byte_level(), Tokenizer::char_level(corpus),
                        Tokenizer::train_bpe(corpus, 8, 1)}) {
    Tokenizer back = Tokenizer::deserialize(tok.serialize());
    CHECK(back.kind() == tok.kind());
    CHECK(back.vocab_size() == tok.vocab_size());
    CHECK(back.content_hash() == tok.content_hash());
    const std::string probe = "héllo aaa\n\tworld";
    CHECK(back.encode(probe) == tok.encode(probe));
    CHECK(back.decode(back.encode(probe)) == probe);
  }
}

TEST_CASE("special ids never appear in encoded text") {
  const std::vector<std::string> corpus{"<pad><pad><pad>", "<pad><pad>"};
  Tokenizer tok = Tokenizer::train_bpe(corpus, 20, 0);
  for (int id : tok.encode("<pad><bos><eos>")) CHECK(id >= 3);
  CHECK(tok.decode(tok.encode("<pad><bos><eos>")) == "<pad><bos><eos>");
}

TEST_CASE("token_count matches encode size") {
  Tokenizer tok = Tokenizer::byte_level();
  CHECK(tok.token_count("hello") == 5);
  CHECK(tok.token_count("") == 0);
}

TEST_CASE("prompt separator joins instruction and response deterministically") {
  Tokenizer tok = Tokenizer::byte_level();
  auto ids = encode_prompt(tok, "do it");
  CHECK(tok.decode(ids) == std::string("do it") + kPromptSeparator);
}
