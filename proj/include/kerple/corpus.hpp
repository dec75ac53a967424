// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic byte corpus for desk-scale training: sentences of
// made-up words drawn from a Zipf-like frequency profile, so a byte model
// gains from context (word spellings, word boundaries, punctuation rhythm).

#ifndef KERPLE_CORPUS_HPP
#define KERPLE_CORPUS_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kerple/model.hpp"

namespace kerple {

inline Corpus synthetic_corpus(std::size_t num_bytes, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xc2b2ae3d27d4eb4full);
  // Fixed lexicon of short pronounceable words.
  constexpr int kNumWords = 180;
  static const char* kVowels = "aeiou";
  static const char* kConsonants = "bcdfghjklmnprstvwz";
  std::vector<std::string> lexicon;
  lexicon.reserve(kNumWords);
  std::uniform_int_distribution<int> syllables(1, 3);
  std::uniform_int_distribution<int> vowel(0, 4);
  std::uniform_int_distribution<int> consonant(0, 17);
  while (static_cast<int>(lexicon.size()) < kNumWords) {
    std::string word;
    const int n = syllables(rng);
    for (int s = 0; s < n; ++s) {
      word += kConsonants[consonant(rng)];
      word += kVowels[vowel(rng)];
    }
    lexicon.push_back(word);
  }
  // Zipf-like weights 1/rank.
  std::vector<double> weights(kNumWords);
  for (int i = 0; i < kNumWords; ++i) weights[i] = 1.0 / (i + 1);
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::uniform_int_distribution<int> sentence_len(4, 12);

  Corpus corpus;
  corpus.reserve(num_bytes + 32);
  while (corpus.size() < num_bytes) {
    const int words = sentence_len(rng);
    for (int w = 0; w < words; ++w) {
      const std::string& word = lexicon[pick(rng)];
      for (char ch : word) corpus.push_back(static_cast<std::uint8_t>(ch));
      corpus.push_back(w + 1 == words ? '.' : ' ');
    }
    corpus.push_back(' ');
  }
  corpus.resize(num_bytes);
  return corpus;
}

}  // namespace kerple

#endif  // KERPLE_CORPUS_HPP
