#include "capg/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "capg/error.hpp"

namespace capg {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::size_t Vocabulary::add(std::string word, std::size_t frequency) {
  if (word.empty()) throw InvalidArgument("vocabulary: empty word");
  if (frequency == 0) throw InvalidArgument("vocabulary: zero frequency for '" + word + "'");
  if (index_.contains(word)) throw InvalidArgument("vocabulary: duplicate word '" + word + "'");
  const std::size_t index = words_.size();
  index_.emplace(word, index);
  words_.push_back(std::move(word));
  frequencies_.push_back(frequency);
  return index;
}

std::optional<std::size_t> Vocabulary::find(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::index_of(std::string_view word) const {
  if (auto i = find(word)) return *i;
  throw UnknownWord("unknown word '" + std::string(word) + "'");
}

std::vector<int> Vocabulary::encode(std::string_view text, bool skip_unknown) const {
  std::vector<int> out;
  for (const auto& token : tokenize(text)) {
    if (auto i = find(token)) {
      out.push_back(static_cast<int>(*i));
    } else if (!skip_unknown) {
      throw UnknownWord("unknown word '" + token + "'");
    }
  }
  return out;
}

Vocabulary Vocabulary::from_texts(const std::vector<std::string>& texts) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& token : tokenize(text)) ++counts[std::move(token)];
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (auto& [word, count] : ordered) vocab.add(word, count);
  return vocab;
}

Caption make_caption(std::string image_id, std::string raw_text, const Vocabulary& vocab,
                     std::size_t max_length) {
  Caption caption{std::move(image_id), vocab.encode(raw_text, /*skip_unknown=*/true),
                  std::move(raw_text)};
  if (caption.tokens.empty()) {
    throw InvalidArgument("caption for '" + caption.image_id + "' has no known words");
  }
  if (caption.tokens.size() > max_length) caption.tokens.resize(max_length);
  return caption;
}

}  // namespace capg
