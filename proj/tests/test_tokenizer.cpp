// Copyright 2026 The gcmp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "gcmp/error.hpp"
#include "gcmp/rng.hpp"
#include "gcmp/tokenizer.hpp"

using namespace gcmp;

namespace {

std::vector<std::string> random_corpus(Rng& rng, int lines, const std::string& alphabet) {
  std::vector<std::string> out;
  for (int i = 0; i < lines; ++i) {
    std::string line;
    const int words = 1 + static_cast<int>(rng.below(5));
    for (int w = 0; w < words; ++w) {
      if (w) line += ' ';
      const int len = 1 + static_cast<int>(rng.below(6));
      for (int c = 0; c < len; ++c) line += alphabet[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(alphabet.size())))];
    }
    out.push_back(line);
  }
  return out;
}

// Kept set by repeated rule application until nothing changes.
std::set<std::string> kept_oracle(const BpeTokenizer& tok, const std::vector<std::string>& corpus) {
  std::set<std::string> seen;
  for (const auto& line : corpus)
    for (TokenId id : tok.encode(line)) seen.insert(tok.token(id));
  std::set<std::string> kept(seen);
  for (const auto& s : kSpecialTokens) kept.insert(s);
  for (const auto& m : tok.merges())
    if (seen.count(m.left) && seen.count(m.right)) kept.insert(m.left + m.right);
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& m : tok.merges()) {
      if (!kept.count(m.left + m.right)) continue;
      for (const auto* part : {&m.left, &m.right})
        if (kept.insert(*part).second) changed = true;
    }
  }
  return kept;
}

std::set<std::string> token_set(const BpeTokenizer& tok) {
  return {tok.vocab().begin(), tok.vocab().end()};
}

}  // namespace

TEST_CASE("first merge of a repeated run is the doubled character") {
  const std::vector<std::string> corpus{"aaab", "aaab"};
  auto tok = BpeTokenizer::train(corpus, 100);
  REQUIRE_FALSE(tok.merges().empty());
  CHECK(tok.merges()[0] == Merge{"a", "a"});
}

TEST_CASE("no merge budget means no merges") {
  const std::vector<std::string> corpus{"abc cab", "bca"};
  // 5 specials + marker + a, b, c.
  auto tok = BpeTokenizer::train(corpus, 9);
  CHECK(tok.merges().empty());
  CHECK(tok.vocab_size() == 9);
  CHECK_THROWS_AS(BpeTokenizer::train(corpus, 8), ValidationError);
}

TEST_CASE("encode/decode round trip") {
  const std::vector<std::string> corpus{"hello world", "the world is wide", "hello there"};
  auto tok = BpeTokenizer::train(corpus, 40);
  CHECK(tok.encode("").empty());
  CHECK(tok.decode(tok.encode("hello world")) == "hello world");
  for (const auto& line : corpus) CHECK(tok.decode(tok.encode(line)) == line);
  Rng rng(4);
  auto random = random_corpus(rng, 60, "abcdefg");
  auto tok2 = BpeTokenizer::train(random, 60);
  for (const auto& line : random) CHECK(tok2.decode(tok2.encode(line)) == line);
  const auto z = tok.encode("zzz");
  CHECK(std::count(z.begin(), z.end(), SpecialIds::kUnk) == 3);
}

TEST_CASE("merges apply in priority order") {
  const std::string m = kDefaultWordMarker;
  BpeTokenizer tok({"<pad>", "<unk>", "<cls>", "<sep>", "<mask>", m, "a", "b", "c", "ab", "abc"},
                   {{"a", "b"}, {"ab", "c"}});
  // Without the marker merged in, "abc" becomes [marker, abc].
  const auto ids = tok.encode("abc");
  REQUIRE(ids.size() == 2);
  CHECK(tok.token(ids[1]) == "abc");
}

TEST_CASE("serialization round trip and fingerprint") {
  const std::vector<std::string> corpus{"legal text about law", "the court ruled"};
  auto tok = BpeTokenizer::train(corpus, 45);
  const auto path = std::filesystem::temp_directory_path() / "gcmp_tok_test.json";
  tok.save(path);
  auto back = BpeTokenizer::load(path);
  CHECK(back.vocab() == tok.vocab());
  CHECK(back.merges() == tok.merges());
  CHECK(back.fingerprint() == tok.fingerprint());
  std::filesystem::remove(path);
}

TEST_CASE("kept set matches the rule-application oracle on a toy tokenizer") {
  // Marker + 6 letters + 5 specials = 12 base tokens; 8 merges -> 20 tokens.
  const std::vector<std::string> train{"abab cdcd efef", "abcd cdef abef", "ab cd ef abab", "fe dc ba", "abab cdcd efef fe"};
  auto tok = BpeTokenizer::train(train, 20);
  REQUIRE(tok.vocab_size() == 20);
  REQUIRE(tok.merges().size() == 8);
  const std::vector<std::string> corpus{"ab", "cd cd", "fe"};
  auto res = prune_vocabulary(tok, corpus);
  CHECK(token_set(res.pruned_tokenizer) == kept_oracle(tok, corpus));
  const auto kept = token_set(res.pruned_tokenizer);
  for (const auto& mg : res.pruned_tokenizer.merges()) {
    CHECK(kept.count(mg.left));
    CHECK(kept.count(mg.right));
    CHECK(kept.count(mg.left + mg.right));
  }
}

TEST_CASE("pruning properties on random tokenizers") {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    Rng rng(seed);
    auto train = random_corpus(rng, 80, "abcdefghij");
    auto tok = BpeTokenizer::train(train, 80);
    std::vector<std::string> task(train.begin(), train.begin() + 10);
    auto res = prune_vocabulary(tok, task);
    INFO("seed " << seed);

    CHECK(token_set(res.pruned_tokenizer) == kept_oracle(tok, task));
    for (const auto& line : task) {
      const auto old_ids = tok.encode(line);
      CHECK(res.pruned_tokenizer.encode(line) == res.remap(old_ids));
    }
    CHECK(res.removed_fraction ==
          1.0 - static_cast<double>(res.kept_old_ids.size()) / static_cast<double>(tok.vocab_size()));
    for (TokenId s = 0; s < SpecialIds::kCount; ++s) CHECK(res.old_to_new[s] == s);

    auto again = prune_vocabulary(res.pruned_tokenizer, task);
    CHECK(again.removed_count() == 0);
    CHECK(again.pruned_tokenizer.vocab() == res.pruned_tokenizer.vocab());
    CHECK(again.pruned_tokenizer.merges() == res.pruned_tokenizer.merges());

    auto rnd = random_prune_vocabulary(tok, 1.0 - res.removed_fraction, seed);
    CHECK(rnd.kept_old_ids.size() == res.kept_old_ids.size());
    auto rnd2 = random_prune_vocabulary(tok, 1.0 - res.removed_fraction, seed);
    CHECK(rnd.kept_old_ids == rnd2.kept_old_ids);
    for (TokenId s = 0; s < SpecialIds::kCount; ++s) CHECK(rnd.old_to_new[s] == s);
  }
}

TEST_CASE("corpus that uses every token removes nothing") {
  const std::vector<std::string> train{"ab ab ab", "abc abc"};
  auto tok = BpeTokenizer::train(train, 12);
  std::vector<std::string> every;
  for (const auto& t : tok.vocab()) {
    if (t.front() == '<') continue;
    std::string s;
    for (const auto& ch : utf8_chars(t))
      if (ch != kDefaultWordMarker) s += ch;
    if (!s.empty()) every.push_back(s);
  }
  every.insert(every.end(), train.begin(), train.end());
  auto res = prune_vocabulary(tok, every);
  CHECK(res.removed_fraction == 0.0);
  CHECK(res.pruned_tokenizer.vocab() == tok.vocab());
}

TEST_CASE("random pruning edge cases") {
  Rng rng(2);
  auto train = random_corpus(rng, 30, "abcdef");
  auto tok = BpeTokenizer::train(train, 30);
  auto full = random_prune_vocabulary(tok, 1.0, 9);
  CHECK(full.removed_count() == 0);
  CHECK_THROWS_AS(random_prune_vocabulary(tok, 0.0, 9), ValidationError);
  CHECK_THROWS_AS(random_prune_vocabulary(tok, 1.0 / static_cast<double>(tok.vocab_size()), 9),
                  ValidationError);
}

TEST_CASE("embedding parameter accounting for the base vocabulary") {
  // 64,000 tokens with 2.52% removed, hidden 512.
  const std::int64_t vocab = 64000, hidden = 512;
  const auto removed = static_cast<std::int64_t>(std::llround(0.0252 * static_cast<double>(vocab)));
  CHECK(removed == 1613);
  CHECK(1615 * hidden == 826880);
  CHECK(std::abs(static_cast<double>(removed * hidden) - 826880.0) / 826880.0 < 0.01);
}
