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

#include <cstdint>
#include <string>
#include <vector>

#include "gcmp/data.hpp"

namespace gcmp::synthetic {

// Pseudo-words built from syllables so BPE finds shared sub-units. Each
// class owns a set of topic words; everything else is filler.
struct Lexicon {
  std::vector<std::string> filler;
  std::vector<std::vector<std::string>> topics;  // [class][word]
  std::vector<std::string> entities;             // words used inside entity spans

  static Lexicon make(int num_classes, int topic_words, int filler_words, std::uint64_t seed);
};

struct ClassTaskOptions {
  int num_classes = 5;
  int own_topic_words = 3;    // drawn from the example's class
  int distractor_words = 2;   // drawn from other classes (never forming a majority)
  int filler_min = 4, filler_max = 10;
  double label_noise = 0.0;   // fraction of labels replaced uniformly
  std::vector<std::string> groups;  // round-robin group tags; empty = none
};

Dataset single_label_task(const Lexicon& lex, int n_train, int n_val, int n_test, const ClassTaskOptions& o,
                          std::uint64_t seed);
// Labels = classes with at least two topic words in the sentence.
Dataset multi_label_task(const Lexicon& lex, int n_train, int n_val, int n_test, std::uint64_t seed);
// Score = number of class-0 topic words (0..4).
Dataset regression_task(const Lexicon& lex, int n_train, int n_val, int n_test, std::uint64_t seed);
// Two entity types: spans of 1-2 entity words after a type-specific cue word.
Dataset token_task(const Lexicon& lex, int n_train, int n_val, int n_test, std::uint64_t seed);
std::vector<std::string> token_task_tags();

// Two classes split by a single marker word.
Dataset separable_task(const Lexicon& lex, int n_train, int n_val, std::uint64_t seed);

// Unlabelled sentences over the whole lexicon.
std::vector<std::string> corpus(const Lexicon& lex, int lines, std::uint64_t seed);

std::vector<std::string> texts(const std::vector<Example>& examples);

}  // namespace gcmp::synthetic
