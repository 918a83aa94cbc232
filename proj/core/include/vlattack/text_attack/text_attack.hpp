#pragma once

#include <vector>

#include "vlattack/blackbox/blackbox.hpp"
#include "vlattack/bsa/bsa.hpp"

namespace vlattack::text_attack {

using blackbox::QuerySession;
using modelzoo::Matrix;
using modelzoo::SentenceEncoder;

struct TextCandidate {
  TokenSequence text;
  double similarity = 0.0;  // gamma against the originating text
  int substituted_position = 0;
  int original_word = 0;
  int new_word = 0;

  friend bool operator==(const TextCandidate&, const TextCandidate&) = default;
};

using CandidateList = std::vector<TextCandidate>;

// Orders by similarity descending, then earlier position, then lower new_word.
bool ranks_before(const TextCandidate& a, const TextCandidate& b);
void rank(CandidateList& list);

// Content-word positions (all positions for stop-word-only text), sorted by
// descending confidence drop when the word is replaced by [UNK]. A probe that
// flips the prediction scores conf_orig + conf, otherwise conf_orig - conf.
// Ties keep the earlier position. One probe per returned position.
std::vector<int> rank_word_importance(QuerySession& session, const TokenSequence& text);

// Up to k nearest words to text[position] by cosine in the embedding table,
// excluding the word itself and special tokens. Ties go to the lower id.
// InputError for an invalid position or negative k.
std::vector<int> generate_substitutions(const Matrix& word_table, const TokenSequence& text, int position, int k);

double semantic_similarity(const SentenceEncoder& encoder, const TokenSequence& a, const TokenSequence& b);

enum class TextOutcome { kSuccess, kExhausted };

struct TextAttackResult {
  TextOutcome outcome = TextOutcome::kExhausted;
  // Gate-passing candidates in test order; on success the last one flipped S.
  CandidateList candidates;
  std::vector<double> confidences;  // S's score for each tested candidate
  // Generated candidates that failed the gate.
  CandidateList rejected;
  std::vector<int> importance;
  int queries = 0;

  const TextCandidate* adversarial() const {
    return outcome == TextOutcome::kSuccess ? &candidates.back() : nullptr;
  }
};

// Importance-major, substitution-minor search. Each gate-passing candidate is
// queried with the clean image; stops at the first prediction change.
TextAttackResult text_attack(QuerySession& session, const bsa::AttackBudget& budget, int k = 8);

}  // namespace vlattack::text_attack
