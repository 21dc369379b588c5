#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace capg {

/// Lowercases and splits on anything that is not an ASCII letter or digit.
std::vector<std::string> tokenize(std::string_view text);

/// Ordered caption vocabulary with corpus frequencies. Indices are dense and
/// follow insertion order.
class Vocabulary {
 public:
  /// Throws InvalidArgument on a duplicate word, an empty word, or frequency 0.
  std::size_t add(std::string word, std::size_t frequency);

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(std::size_t index) const { return words_.at(index); }
  std::size_t frequency(std::size_t index) const { return frequencies_.at(index); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  std::optional<std::size_t> find(std::string_view word) const;
  /// Throws UnknownWord.
  std::size_t index_of(std::string_view word) const;

  /// Tokens of `text` as indices. Unknown tokens throw UnknownWord unless
  /// skip_unknown is set.
  std::vector<int> encode(std::string_view text, bool skip_unknown = false) const;

  /// Counts tokens over all texts; words are ordered by descending frequency,
  /// then lexicographically.
  static Vocabulary from_texts(const std::vector<std::string>& texts);

  bool operator==(const Vocabulary& other) const {
    return words_ == other.words_ && frequencies_ == other.frequencies_;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::size_t> frequencies_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A tokenized caption paired with one image.
struct Caption {
  std::string image_id;
  std::vector<int> tokens;
  std::string raw_text;
};

Caption make_caption(std::string image_id, std::string raw_text, const Vocabulary& vocab,
                     std::size_t max_length = 64);

}  // namespace capg
