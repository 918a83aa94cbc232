#include "vlattack/modelzoo/vocabulary.hpp"

#include <sstream>
#include <stdexcept>

namespace vlattack::modelzoo {

namespace {

const std::vector<std::string>& standard_words() {
  static const std::vector<std::string> words = {
      // colors and their synonyms
      "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
      "crimson", "scarlet", "emerald", "azure", "golden", "aqua", "fuchsia", "ivory", "amber",
      // shapes
      "circle", "square", "triangle", "disk", "ring", "box", "block", "wedge",
      // question and prompt words
      "what", "which", "where", "is", "the", "a", "of",
      "color", "colour", "hue", "shade",
      "shape", "object", "thing",
      "there", "this",
      "image", "picture", "photo", "scene",
      "find", "locate", "show", "describe", "caption", "tell", "me",
      "and", "in", "here",
      "yes", "no",
      "please", "small", "big", "tiny", "large", "an", "item",
  };
  return words;
}

const std::vector<std::vector<std::string>>& standard_synonyms() {
  static const std::vector<std::vector<std::string>> groups = {
      {"red", "crimson", "scarlet"}, {"green", "emerald"}, {"blue", "azure"},
      {"yellow", "golden"}, {"cyan", "aqua"}, {"magenta", "fuchsia"},
      {"white", "ivory"}, {"orange", "amber"},
      {"circle", "disk", "ring"}, {"square", "box", "block"}, {"triangle", "wedge"},
      {"color", "colour", "hue", "shade"}, {"image", "picture", "photo", "scene"},
      {"object", "thing", "item"}, {"find", "locate", "show"}, {"describe", "caption"},
      {"small", "tiny"}, {"big", "large"}, {"a", "an"},
  };
  return groups;
}

const std::vector<std::string>& standard_stop_words() {
  static const std::vector<std::string> stop = {
      "what", "which", "where", "is", "the", "a", "an", "of", "there",
      "this", "in", "and", "me", "here", "please", "tell",
  };
  return stop;
}

}  // namespace

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab = [] {
    Vocabulary v(standard_words());
    for (const auto& w : standard_stop_words()) v.stop_[v.require_id(w)] = true;
    for (const auto& group : standard_synonyms()) {
      std::vector<int> ids;
      for (const auto& w : group) ids.push_back(v.require_id(w));
      v.synonym_groups_.push_back(std::move(ids));
    }
    return v;
  }();
  return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const int id = static_cast<int>(i) + kSpecialCount;
    if (!index_.emplace(words_[i], id).second) {
      throw std::invalid_argument("duplicate vocabulary word: " + words_[i]);
    }
  }
  stop_.assign(static_cast<std::size_t>(size()), false);
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

int Vocabulary::require_id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw std::out_of_range("word not in vocabulary: " + std::string(word));
  return it->second;
}

const std::string& Vocabulary::word(int id) const {
  static const std::string kClsName = "[CLS]";
  static const std::string kUnkName = "[UNK]";
  if (id == kCls) return kClsName;
  if (id == kUnk) return kUnkName;
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of vocabulary");
  return words_[static_cast<std::size_t>(id - kSpecialCount)];
}

bool Vocabulary::is_stop_word(int id) const {
  return id >= 0 && id < size() && stop_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += word(id);
  }
  return out;
}

}  // namespace vlattack::modelzoo
