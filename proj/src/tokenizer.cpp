#include "biaslab/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace biaslab {

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
    for (int i = 0; i < static_cast<int>(words_.size()); ++i) {
        if (!index_.emplace(words_[i], i).second) {
            throw ValidationError("duplicate vocabulary word: " + words_[i]);
        }
    }
}

std::string Vocab::lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<std::string> Vocab::split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t') {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
    std::set<std::string> unique;
    for (const auto& t : texts) {
        for (auto& w : split_words(lowercase(t))) {
            unique.insert(std::move(w));
        }
    }
    return Vocab(std::vector<std::string>(unique.begin(), unique.end()));
}

int Vocab::id(const std::string& word) const {
    const auto it = index_.find(word);
    if (it == index_.end()) {
        throw ValidationError("word not in vocabulary: " + word);
    }
    return it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(lowercase(text))) {
        ids.push_back(id(w));
    }
    return ids;
}

}  // namespace biaslab
