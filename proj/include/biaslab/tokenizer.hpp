#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "biaslab/common.hpp"

namespace biaslab {

// Closed word-level vocabulary. Prompts are lowercased and split on spaces;
// every word must already be in the vocabulary.
class Vocab {
public:
    Vocab() = default;
    explicit Vocab(std::vector<std::string> words);

    // Collects unique lowercased words from the given texts, sorted.
    static Vocab build(const std::vector<std::string>& texts);

    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }

    bool contains(const std::string& word) const { return index_.count(word) > 0; }
    int id(const std::string& word) const;  // throws ValidationError if absent
    const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

    std::vector<int> encode(const std::string& text) const;

    static std::vector<std::string> split_words(const std::string& text);
    static std::string lowercase(std::string s);

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace biaslab
