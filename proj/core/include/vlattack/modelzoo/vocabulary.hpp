#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vlattack::modelzoo {

// Fixed whitespace vocabulary: special tokens first, then 64 words.
class Vocabulary {
 public:
  static constexpr int kCls = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSpecialCount = 2;

  // The built-in 64-word vocabulary shared by every task.
  static const Vocabulary& standard();

  explicit Vocabulary(std::vector<std::string> words);

  int size() const { return static_cast<int>(words_.size()) + kSpecialCount; }
  int word_count() const { return static_cast<int>(words_.size()); }

  // Unknown words map to kUnk.
  int id(std::string_view word) const;
  // Throws std::out_of_range for unknown words.
  int require_id(std::string_view word) const;
  const std::string& word(int id) const;

  bool is_special(int id) const { return id < kSpecialCount; }
  bool is_stop_word(int id) const;

  // Groups of interchangeable words, used to seed the word-embedding table.
  const std::vector<std::vector<int>>& synonym_groups() const { return synonym_groups_; }

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  std::vector<bool> stop_;
  std::vector<std::vector<int>> synonym_groups_;
};

}  // namespace vlattack::modelzoo
