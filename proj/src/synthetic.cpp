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

#include "gcmp/synthetic.hpp"

#include <algorithm>
#include <set>

#include "gcmp/error.hpp"
#include "gcmp/rng.hpp"

namespace gcmp::synthetic {

namespace {

const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "st", "tr"};
const char* kVowels[] = {"a", "e", "i", "o", "u", "ia", "eu"};

std::string pick(const std::vector<std::string>& v, Rng& rng) {
  return v[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(v.size())))];
}

int range(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(hi - lo + 1)); }

void shuffle_words(std::vector<std::string>& w, Rng& rng) {
  for (std::size_t i = w.size(); i > 1; --i) std::swap(w[i - 1], w[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(i)))]);
}

std::string join(const std::vector<std::string>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " " : "") + w[i];
  return s;
}

template <typename Make>
Dataset split(int n_train, int n_val, int n_test, Make make) {
  Dataset d;
  for (int i = 0; i < n_train; ++i) d.train.push_back(make(i));
  for (int i = 0; i < n_val; ++i) d.validation.push_back(make(n_train + i));
  for (int i = 0; i < n_test; ++i) d.test.push_back(make(n_train + n_val + i));
  return d;
}

}  // namespace

Lexicon Lexicon::make(int num_classes, int topic_words, int filler_words, std::uint64_t seed) {
  Rng rng(seed);
  std::set<std::string> used;
  auto word = [&] {
    for (;;) {
      std::string w;
      const int syll = range(rng, 1, 3);
      for (int s = 0; s < syll; ++s) {
        w += kOnsets[rng.below(std::size(kOnsets))];
        w += kVowels[rng.below(std::size(kVowels))];
      }
      if (rng.bernoulli(0.3)) w += kOnsets[rng.below(std::size(kOnsets))];
      if (used.insert(w).second) return w;
    }
  };
  Lexicon lex;
  for (int i = 0; i < filler_words; ++i) lex.filler.push_back(word());
  lex.topics.resize(static_cast<std::size_t>(num_classes));
  for (auto& t : lex.topics)
    for (int i = 0; i < topic_words; ++i) t.push_back(word());
  for (int i = 0; i < 24; ++i) lex.entities.push_back(word());
  return lex;
}

Dataset single_label_task(const Lexicon& lex, int n_train, int n_val, int n_test, const ClassTaskOptions& o,
                          std::uint64_t seed) {
  if (o.num_classes < 2 || o.num_classes > static_cast<int>(lex.topics.size())) {
    throw ValidationError("lexicon has too few topic classes");
  }
  if (o.distractor_words >= o.own_topic_words * 2) throw ValidationError("distractors could outvote the class");
  return split(n_train, n_val, n_test, [&](int idx) {
    Rng rng(Rng::mix(seed) ^ static_cast<std::uint64_t>(idx) * 0x9e3779b97f4a7c15ULL);
    const int label = static_cast<int>(rng.below(o.num_classes));
    std::vector<std::string> w;
    for (int i = 0; i < o.own_topic_words; ++i) w.push_back(pick(lex.topics[label], rng));
    // Distractors are spread over distinct other classes so none ties the label.
    std::vector<int> others;
    for (int c = 0; c < o.num_classes; ++c)
      if (c != label) others.push_back(c);
    for (int i = 0; i < o.distractor_words; ++i) {
      const int c = others[static_cast<std::size_t>(i) % others.size()];
      w.push_back(pick(lex.topics[c], rng));
    }
    const int fill = range(rng, o.filler_min, o.filler_max);
    for (int i = 0; i < fill; ++i) w.push_back(pick(lex.filler, rng));
    shuffle_words(w, rng);
    Example e;
    e.text = join(w);
    e.target.label = rng.uniform() < o.label_noise ? static_cast<int>(rng.below(o.num_classes)) : label;
    if (!o.groups.empty()) e.group = o.groups[static_cast<std::size_t>(idx) % o.groups.size()];
    return e;
  });
}

Dataset multi_label_task(const Lexicon& lex, int n_train, int n_val, int n_test, std::uint64_t seed) {
  const int k = static_cast<int>(lex.topics.size());
  return split(n_train, n_val, n_test, [&](int idx) {
    Rng rng(Rng::mix(seed + 1) ^ static_cast<std::uint64_t>(idx) * 0x9e3779b97f4a7c15ULL);
    std::vector<std::string> w;
    Example e;
    for (int c = 0; c < k; ++c) {
      const int n = rng.bernoulli(0.35) ? 2 : static_cast<int>(rng.below(2));
      for (int i = 0; i < n; ++i) w.push_back(pick(lex.topics[c], rng));
      if (n >= 2) e.target.labels.push_back(c);
    }
    const int fill = range(rng, 3, 8);
    for (int i = 0; i < fill; ++i) w.push_back(pick(lex.filler, rng));
    shuffle_words(w, rng);
    e.text = join(w);
    return e;
  });
}

Dataset regression_task(const Lexicon& lex, int n_train, int n_val, int n_test, std::uint64_t seed) {
  return split(n_train, n_val, n_test, [&](int idx) {
    Rng rng(Rng::mix(seed + 2) ^ static_cast<std::uint64_t>(idx) * 0x9e3779b97f4a7c15ULL);
    const int score = static_cast<int>(rng.below(5));
    std::vector<std::string> w;
    for (int i = 0; i < score; ++i) w.push_back(pick(lex.topics[0], rng));
    const int fill = range(rng, 4, 9);
    for (int i = 0; i < fill; ++i) w.push_back(pick(lex.filler, rng));
    shuffle_words(w, rng);
    Example e;
    e.text = join(w);
    e.target.score = score;
    return e;
  });
}

std::vector<std::string> token_task_tags() { return {"O", "B-PARTY", "I-PARTY", "B-DATE", "I-DATE"}; }

Dataset token_task(const Lexicon& lex, int n_train, int n_val, int n_test, std::uint64_t seed) {
  const std::vector<std::string> half_a(lex.entities.begin(), lex.entities.begin() + 12);
  const std::vector<std::string> half_b(lex.entities.begin() + 12, lex.entities.end());
  return split(n_train, n_val, n_test, [&](int idx) {
    Rng rng(Rng::mix(seed + 3) ^ static_cast<std::uint64_t>(idx) * 0x9e3779b97f4a7c15ULL);
    Example e;
    const int chunks = range(rng, 3, 7);
    for (int c = 0; c < chunks; ++c) {
      const auto r = rng.below(3);
      if (r == 0) {
        e.tokens.push_back(pick(lex.filler, rng));
        e.target.tags.push_back("O");
        continue;
      }
      const bool party = r == 1;
      // Cue word then a 1-2 word span.
      e.tokens.push_back(party ? lex.topics[0][0] : lex.topics[1][0]);
      e.target.tags.push_back("O");
      const int len = range(rng, 1, 2);
      for (int i = 0; i < len; ++i) {
        e.tokens.push_back(pick(party ? half_a : half_b, rng));
        e.target.tags.push_back(std::string(i == 0 ? "B-" : "I-") + (party ? "PARTY" : "DATE"));
      }
    }
    return e;
  });
}

Dataset separable_task(const Lexicon& lex, int n_train, int n_val, std::uint64_t seed) {
  return split(n_train, n_val, 0, [&](int idx) {
    Rng rng(Rng::mix(seed + 4) ^ static_cast<std::uint64_t>(idx) * 0x9e3779b97f4a7c15ULL);
    const int label = static_cast<int>(rng.below(2));
    std::vector<std::string> w{lex.topics[label][0]};
    const int fill = range(rng, 2, 5);
    for (int i = 0; i < fill; ++i) w.push_back(pick(lex.filler, rng));
    shuffle_words(w, rng);
    Example e;
    e.text = join(w);
    e.target.label = label;
    return e;
  });
}

std::vector<std::string> corpus(const Lexicon& lex, int lines, std::uint64_t seed) {
  Rng rng(Rng::mix(seed + 5));
  std::vector<std::string> out;
  for (int i = 0; i < lines; ++i) {
    std::vector<std::string> w;
    const int n = range(rng, 5, 14);
    // One topic per line, so topic words predict each other.
    const auto& topic = lex.topics[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(lex.topics.size())))];
    for (int j = 0; j < n; ++j) {
      const auto r = rng.below(10);
      if (r < 5) {
        w.push_back(pick(lex.filler, rng));
      } else if (r < 9) {
        w.push_back(pick(topic, rng));
      } else {
        w.push_back(pick(lex.entities, rng));
      }
    }
    out.push_back(join(w));
  }
  return out;
}

std::vector<std::string> texts(const std::vector<Example>& examples) {
  std::vector<std::string> out;
  for (const auto& e : examples) {
    if (!e.tokens.empty()) {
      out.push_back(join(e.tokens));
    } else {
      out.push_back(e.text);
    }
  }
  return out;
}

}  // namespace gcmp::synthetic
