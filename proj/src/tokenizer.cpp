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

#include "gcmp/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "gcmp/error.hpp"
#include "gcmp/rng.hpp"

namespace gcmp {

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0 && c < 0xF8) {
      len = 4;
    } else if (c >= 0xE0) {
      len = c < 0xF0 ? 3 : 1;
    } else if (c >= 0xC0) {
      len = 2;
    }
    if (i + len > text.size()) len = 1;
    for (std::size_t j = 1; j < len; ++j) {
      if ((static_cast<unsigned char>(text[i + j]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

namespace {

// Space-separated segments, each becoming marker + segment.
std::vector<std::string> split_words(std::string_view text, const std::string& marker) {
  std::vector<std::string> words;
  if (text.empty()) return words;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = text.find(' ', start);
    const std::size_t end = pos == std::string_view::npos ? text.size() : pos;
    words.push_back(marker + std::string(text.substr(start, end - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return words;
}

}  // namespace

BpeTokenizer::BpeTokenizer(std::vector<std::string> vocab, std::vector<Merge> merges,
                           std::string word_boundary_marker)
    : vocab_(std::move(vocab)), merges_(std::move(merges)), marker_(std::move(word_boundary_marker)) {
  if (marker_.empty()) throw ValidationError("word boundary marker must be non-empty");
  if (vocab_.size() < static_cast<std::size_t>(SpecialIds::kCount)) {
    throw ValidationError("tokenizer vocabulary is missing the special tokens");
  }
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
    if (vocab_[i] != kSpecialTokens[i]) {
      throw ValidationError("special token '" + kSpecialTokens[i] + "' must have id " +
                            std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!index_.emplace(vocab_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("duplicate vocabulary entry '" + vocab_[i] + "'");
    }
  }
  std::set<std::string> produced;
  for (std::size_t rank = 0; rank < merges_.size(); ++rank) {
    const auto& m = merges_[rank];
    const TokenId l = id_of(m.left), r = id_of(m.right), c = id_of(m.left + m.right);
    if (l < 0 || r < 0 || c < 0) {
      throw ValidationError("merge (" + m.left + ", " + m.right + ") references unknown tokens");
    }
    if (!produced.insert(m.left + m.right).second) {
      throw ValidationError("token '" + m.left + m.right + "' is produced by two merges");
    }
    rules_.emplace(pair_key(l, r), MergeRule{rank, c});
  }
}

TokenId BpeTokenizer::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

BpeTokenizer BpeTokenizer::train(std::span<const std::string> corpus,
                                 std::size_t target_vocab_size, std::string marker) {
  if (corpus.empty()) throw ValidationError("train_bpe: corpus is empty");
  std::map<std::string, std::int64_t> word_freq;
  for (const auto& line : corpus)
    for (auto& w : split_words(line, marker)) ++word_freq[w];

  // Marker first so it is never split; it is the prefix of every word.
  std::set<std::string> alphabet;
  std::vector<std::pair<std::vector<std::string>, std::int64_t>> words;
  for (const auto& [w, f] : word_freq) {
    std::vector<std::string> symbols{marker};
    for (auto& ch : utf8_chars(std::string_view(w).substr(marker.size()))) symbols.push_back(ch);
    alphabet.insert(symbols.begin(), symbols.end());
    words.emplace_back(std::move(symbols), f);
  }
  std::vector<std::string> vocab(kSpecialTokens.begin(), kSpecialTokens.end());
  vocab.insert(vocab.end(), alphabet.begin(), alphabet.end());
  if (vocab.size() > target_vocab_size) {
    throw ValidationError("train_bpe: alphabet plus specials (" + std::to_string(vocab.size()) +
                          ") exceeds target vocabulary size " + std::to_string(target_vocab_size));
  }
  std::set<std::string> known(vocab.begin(), vocab.end());
  std::vector<Merge> merges;

  while (vocab.size() < target_vocab_size) {
    std::map<std::pair<std::string, std::string>, std::int64_t> counts;
    for (const auto& [sym, f] : words)
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) counts[{sym[i], sym[i + 1]}] += f;
    // Highest count wins; std::map order breaks ties lexicographically.
    const std::pair<std::string, std::string>* best = nullptr;
    std::int64_t best_count = 1;
    for (const auto& [pair, count] : counts) {
      if (count > best_count && !known.count(pair.first + pair.second)) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr) break;
    const Merge m{best->first, best->second};
    const std::string joined = m.left + m.right;
    for (auto& [sym, f] : words) {
      std::vector<std::string> next;
      next.reserve(sym.size());
      for (std::size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && sym[i] == m.left && sym[i + 1] == m.right) {
          next.push_back(joined);
          ++i;
        } else {
          next.push_back(sym[i]);
        }
      }
      sym = std::move(next);
    }
    merges.push_back(m);
    vocab.push_back(joined);
    known.insert(joined);
  }
  return BpeTokenizer(std::move(vocab), std::move(merges), std::move(marker));
}

void BpeTokenizer::encode_word(std::string_view word, std::vector<TokenId>& out) const {
  std::vector<TokenId> sym;
  sym.push_back(id_of(marker_));
  if (sym.back() < 0) sym.back() = SpecialIds::kUnk;
  for (auto& ch : utf8_chars(word.substr(marker_.size()))) {
    const TokenId id = id_of(ch);
    sym.push_back(id < 0 ? SpecialIds::kUnk : id);
  }
  for (;;) {
    std::size_t best_rank = merges_.size();
    TokenId best_l = -1, best_r = -1, best_c = -1;
    for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
      auto it = rules_.find(pair_key(sym[i], sym[i + 1]));
      if (it != rules_.end() && it->second.rank < best_rank) {
        best_rank = it->second.rank;
        best_l = sym[i];
        best_r = sym[i + 1];
        best_c = it->second.result;
      }
    }
    if (best_c < 0) break;
    std::vector<TokenId> next;
    next.reserve(sym.size());
    for (std::size_t i = 0; i < sym.size(); ++i) {
      if (i + 1 < sym.size() && sym[i] == best_l && sym[i + 1] == best_r) {
        next.push_back(best_c);
        ++i;
      } else {
        next.push_back(sym[i]);
      }
    }
    sym = std::move(next);
  }
  out.insert(out.end(), sym.begin(), sym.end());
}

std::vector<TokenId> BpeTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  for (const auto& w : split_words(text, marker_)) encode_word(w, out);
  return out;
}

std::string BpeTokenizer::decode(std::span<const TokenId> ids) const {
  std::string joined;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
      throw ValidationError("decode: id " + std::to_string(id) + " outside vocabulary");
    }
    if (id == SpecialIds::kUnk) {
      joined += kSpecialTokens[SpecialIds::kUnk];
    } else if (!is_special(id)) {
      joined += vocab_[static_cast<std::size_t>(id)];
    }
  }
  std::string text;
  text.reserve(joined.size());
  for (std::size_t i = 0; i < joined.size();) {
    if (joined.compare(i, marker_.size(), marker_) == 0) {
      text.push_back(' ');
      i += marker_.size();
    } else {
      text.push_back(joined[i++]);
    }
  }
  if (!text.empty() && text.front() == ' ') text.erase(text.begin());
  return text;
}

nlohmann::json BpeTokenizer::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& m : merges_) merges.push_back({m.left, m.right});
  nlohmann::json specials;
  specials["pad"] = SpecialIds::kPad;
  specials["unk"] = SpecialIds::kUnk;
  specials["cls"] = SpecialIds::kCls;
  specials["sep"] = SpecialIds::kSep;
  specials["mask"] = SpecialIds::kMask;
  return {{"version", 1},
          {"specials", specials},
          {"vocab", vocab_},
          {"merges", merges},
          {"word_boundary_marker", marker_}};
}

BpeTokenizer BpeTokenizer::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw ValidationError("unsupported tokenizer version");
    std::vector<Merge> merges;
    for (const auto& m : j.at("merges")) merges.push_back({m.at(0).get<std::string>(), m.at(1).get<std::string>()});
    return BpeTokenizer(j.at("vocab").get<std::vector<std::string>>(), std::move(merges),
                        j.at("word_boundary_marker").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed tokenizer JSON: ") + e.what());
  }
}

void BpeTokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write tokenizer to " + path.string());
  out << to_json().dump(1) << '\n';
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read tokenizer " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("tokenizer " + path.string() + ": " + e.what());
  }
}

std::string BpeTokenizer::fingerprint() const {
  const std::string canonical = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<TokenId> VocabPruneResult::remap(std::span<const TokenId> old_ids) const {
  std::vector<TokenId> out;
  out.reserve(old_ids.size());
  for (TokenId id : old_ids) {
    const TokenId n = old_to_new.at(static_cast<std::size_t>(id));
    if (n < 0) throw ValidationError("token id " + std::to_string(id) + " was pruned");
    out.push_back(n);
  }
  return out;
}

VocabPruneResult apply_vocab_keep_mask(const BpeTokenizer& tok, std::vector<bool> keep) {
  const std::size_t v = tok.vocab_size();
  if (keep.size() != v) throw ValidationError("keep mask size does not match vocabulary");
  for (TokenId s = 0; s < SpecialIds::kCount; ++s) keep[static_cast<std::size_t>(s)] = true;

  VocabPruneResult res{{}, std::vector<TokenId>(v, -1), tok, 0.0};
  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < v; ++i) {
    if (!keep[i]) continue;
    res.old_to_new[i] = static_cast<TokenId>(res.kept_old_ids.size());
    res.kept_old_ids.push_back(static_cast<TokenId>(i));
    vocab.push_back(tok.vocab()[i]);
  }
  std::vector<Merge> merges;
  for (const auto& m : tok.merges()) {
    if (keep[static_cast<std::size_t>(tok.id_of(m.left))] &&
        keep[static_cast<std::size_t>(tok.id_of(m.right))] &&
        keep[static_cast<std::size_t>(tok.id_of(m.left + m.right))]) {
      merges.push_back(m);
    }
  }
  res.pruned_tokenizer = BpeTokenizer(std::move(vocab), std::move(merges), tok.marker());
  res.removed_fraction =
      1.0 - static_cast<double>(res.kept_old_ids.size()) / static_cast<double>(v);
  return res;
}

VocabPruneResult prune_vocabulary(const BpeTokenizer& tok,
                                  std::span<const std::string> training_corpus) {
  const std::size_t v = tok.vocab_size();
  std::vector<bool> occurs(v, false);
  for (const auto& line : training_corpus)
    for (TokenId id : tok.encode(line)) occurs[static_cast<std::size_t>(id)] = true;

  std::vector<bool> keep = occurs;
  const auto& merges = tok.merges();
  for (const auto& m : merges) {
    if (occurs[static_cast<std::size_t>(tok.id_of(m.left))] &&
        occurs[static_cast<std::size_t>(tok.id_of(m.right))]) {
      keep[static_cast<std::size_t>(tok.id_of(m.left + m.right))] = true;
    }
  }
  // A merge's inputs are always older than its result, so one reverse sweep
  // reaches the fixpoint of "kept result => kept inputs".
  for (auto it = merges.rbegin(); it != merges.rend(); ++it) {
    if (keep[static_cast<std::size_t>(tok.id_of(it->left + it->right))]) {
      keep[static_cast<std::size_t>(tok.id_of(it->left))] = true;
      keep[static_cast<std::size_t>(tok.id_of(it->right))] = true;
    }
  }
  return apply_vocab_keep_mask(tok, std::move(keep));
}

VocabPruneResult random_prune_vocabulary(const BpeTokenizer& tok, double keep_fraction,
                                         std::uint64_t seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ValidationError("keep_fraction must be in (0, 1]");
  }
  const std::size_t v = tok.vocab_size();
  const auto target = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(v)));
  if (target < static_cast<std::size_t>(SpecialIds::kCount)) {
    throw ValidationError("keep_fraction would drop special tokens");
  }
  std::vector<TokenId> candidates(v - SpecialIds::kCount);
  std::iota(candidates.begin(), candidates.end(), SpecialIds::kCount);
  Rng rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng.engine());
  std::vector<bool> keep(v, false);
  for (std::size_t i = 0; i < target - SpecialIds::kCount; ++i) {
    keep[static_cast<std::size_t>(candidates[i])] = true;
  }
  return apply_vocab_keep_mask(tok, std::move(keep));
}

}  // namespace gcmp
