#include "vlattack/text_attack/text_attack.hpp"

#include <algorithm>
#include <numeric>

#include "vlattack/modelzoo/vocabulary.hpp"

namespace vlattack::text_attack {

using modelzoo::Vocabulary;

bool ranks_before(const TextCandidate& a, const TextCandidate& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  if (a.substituted_position != b.substituted_position) return a.substituted_position < b.substituted_position;
  return a.new_word < b.new_word;
}

void rank(CandidateList& list) { std::stable_sort(list.begin(), list.end(), ranks_before); }

std::vector<int> rank_word_importance(QuerySession& session, const TokenSequence& text) {
  if (text.empty()) throw InputError("importance ranking needs a nonempty text");
  const Vocabulary& vocab = Vocabulary::standard();
  std::vector<int> positions;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!vocab.is_stop_word(text[i])) positions.push_back(static_cast<int>(i));
  }
  if (positions.empty()) {
    positions.resize(text.size());
    std::iota(positions.begin(), positions.end(), 0);
  }

  const Prediction& original = session.original_prediction();
  std::vector<double> drop(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Prediction p = session.probe(text.with_token(static_cast<std::size_t>(positions[i]), Vocabulary::kUnk));
    drop[i] = session.flips(p) ? original.confidence + p.confidence : original.confidence - p.confidence;
  }
  std::vector<std::size_t> order(positions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return drop[a] > drop[b]; });
  std::vector<int> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(positions[i]);
  return out;
}

std::vector<int> generate_substitutions(const Matrix& word_table, const TokenSequence& text, int position, int k) {
  if (position < 0 || static_cast<std::size_t>(position) >= text.size()) {
    throw InputError("substitution position out of range");
  }
  if (k < 0) throw InputError("negative substitution count");
  const int word = text[static_cast<std::size_t>(position)];
  if (word >= word_table.rows()) throw InputError("token outside the embedding table");
  std::vector<std::pair<double, int>> scored;
  for (int w = Vocabulary::kSpecialCount; w < word_table.rows(); ++w) {
    if (w == word) continue;
    scored.emplace_back(ad::cosine(word_table.row(word), word_table.row(w)), w);
  }
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<int> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back(scored[i].second);
  return out;
}

double semantic_similarity(const SentenceEncoder& encoder, const TokenSequence& a, const TokenSequence& b) {
  return encoder.similarity(a, b);
}

TextAttackResult text_attack(QuerySession& session, const bsa::AttackBudget& budget, int k) {
  budget.validate();
  TextAttackResult result;
  const TokenSequence& text = session.original_text();
  const SentenceEncoder& encoder = session.sentence_encoder();
  if (budget.max_modified_words < 1) return result;

  result.importance = rank_word_importance(session, text);
  for (int pos : result.importance) {
    for (int w : generate_substitutions(encoder.table(), text, pos, k)) {
      TextCandidate c;
      c.text = text.with_token(static_cast<std::size_t>(pos), w);
      c.similarity = semantic_similarity(encoder, c.text, text);
      c.substituted_position = pos;
      c.original_word = text[static_cast<std::size_t>(pos)];
      c.new_word = w;
      if (!(c.similarity > budget.sigma_s)) {
        result.rejected.push_back(std::move(c));
        continue;
      }
      result.candidates.push_back(c);
      ++result.queries;
      const Prediction p = session.query(session.original_image(), c.text, blackbox::Stage::kText);
      result.confidences.push_back(p.confidence);
      if (session.flips(p)) {
        result.outcome = TextOutcome::kSuccess;
        return result;
      }
    }
  }
  return result;
}

}  // namespace vlattack::text_attack
