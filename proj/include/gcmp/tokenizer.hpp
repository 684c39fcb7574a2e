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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace gcmp {

using TokenId = std::int32_t;

// Specials occupy the lowest ids in this fixed order.
struct SpecialIds {
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kMask = 4;
  static constexpr TokenId kCount = 5;
};
inline const std::array<std::string, 5> kSpecialTokens = {"<pad>", "<unk>", "<cls>", "<sep>",
                                                         "<mask>"};
inline const std::string kDefaultWordMarker = "\xE2\x96\x81";  // U+2581

struct Merge {
  std::string left, right;
  bool operator==(const Merge&) const = default;
};

// Byte-pair-encoding tokenizer over Unicode code points. Each space-separated
// segment of the input becomes one word prefixed with the boundary marker;
// merges apply within a word in learned priority order.
class BpeTokenizer {
 public:
  BpeTokenizer(std::vector<std::string> vocab, std::vector<Merge> merges,
               std::string word_boundary_marker = kDefaultWordMarker);

  static BpeTokenizer train(std::span<const std::string> corpus, std::size_t target_vocab_size,
                            std::string word_boundary_marker = kDefaultWordMarker);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::string& marker() const { return marker_; }
  const std::string& token(TokenId id) const { return vocab_.at(static_cast<std::size_t>(id)); }
  // -1 when absent.
  TokenId id_of(const std::string& token) const;
  static bool is_special(TokenId id) { return id >= 0 && id < SpecialIds::kCount; }

  nlohmann::json to_json() const;
  static BpeTokenizer from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static BpeTokenizer load(const std::filesystem::path& path);

  // Stable 64-bit FNV-1a digest of the canonical JSON form, as hex.
  std::string fingerprint() const;

 private:
  struct MergeRule {
    std::size_t rank;
    TokenId result;
  };
  static std::uint64_t pair_key(TokenId l, TokenId r) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) |
           static_cast<std::uint32_t>(r);
  }
  void encode_word(std::string_view word, std::vector<TokenId>& out) const;

  std::vector<std::string> vocab_;
  std::vector<Merge> merges_;
  std::string marker_;
  std::unordered_map<std::string, TokenId> index_;
  std::unordered_map<std::uint64_t, MergeRule> rules_;
};

// Splits UTF-8 into code points; malformed bytes become single-byte units.
std::vector<std::string> utf8_chars(std::string_view text);

struct VocabPruneResult {
  std::vector<TokenId> kept_old_ids;  // ascending
  std::vector<TokenId> old_to_new;    // -1 for removed ids
  BpeTokenizer pruned_tokenizer;
  double removed_fraction = 0.0;

  std::size_t original_size() const { return old_to_new.size(); }
  std::size_t removed_count() const { return old_to_new.size() - kept_old_ids.size(); }
  std::vector<TokenId> remap(std::span<const TokenId> old_ids) const;
};

// Keeps specials, every token emitted when encoding `training_corpus`, the
// result of any merge whose two inputs are both emitted, and (transitively)
// the inputs of every kept merge result.
VocabPruneResult prune_vocabulary(const BpeTokenizer& tok,
                                  std::span<const std::string> training_corpus);

// Keeps round(keep_fraction * V) tokens: all specials plus a uniform sample.
VocabPruneResult random_prune_vocabulary(const BpeTokenizer& tok, double keep_fraction,
                                         std::uint64_t seed);

// Builds the result for an explicit keep mask (specials forced on).
VocabPruneResult apply_vocab_keep_mask(const BpeTokenizer& tok, std::vector<bool> keep);

}  // namespace gcmp
