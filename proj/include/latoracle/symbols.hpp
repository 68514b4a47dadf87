#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "latoracle/error.hpp"

namespace latoracle {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

// Sentence-start sentinel. Gives the first edge of every path a bigram left
// context; never appears as an edge label.
inline constexpr TokenId kBos = 0;

/// Bijective mapping between token strings and dense ids. Id 0 is reserved
/// for the BOS sentinel.
class SymbolTable {
public:
    SymbolTable() { strings_.emplace_back("<s>"); }

    TokenId intern(std::string_view word) {
        auto it = ids_.find(std::string(word));
        if (it != ids_.end()) return it->second;
        const auto id = static_cast<TokenId>(strings_.size());
        strings_.emplace_back(word);
        ids_.emplace(strings_.back(), id);
        return id;
    }

    // Returns kBos when the word is unknown.
    TokenId find(std::string_view word) const {
        auto it = ids_.find(std::string(word));
        return it == ids_.end() ? kBos : it->second;
    }

    const std::string& str(TokenId id) const {
        if (id >= strings_.size()) throw InputError("unknown token id " + std::to_string(id));
        return strings_[id];
    }

    std::size_t size() const { return strings_.size(); }

    TokenSeq intern_all(std::string_view text) {
        TokenSeq out;
        for (auto word : split_words(text)) out.push_back(intern(word));
        return out;
    }

    std::string join(const TokenSeq& tokens) const {
        std::string out;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (i) out += ' ';
            out += str(tokens[i]);
        }
        return out;
    }

    static std::vector<std::string_view> split_words(std::string_view text) {
        std::vector<std::string_view> words;
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && is_space(text[i])) ++i;
            std::size_t j = i;
            while (j < text.size() && !is_space(text[j])) ++j;
            if (j > i) words.push_back(text.substr(i, j - i));
            i = j;
        }
        return words;
    }

private:
    static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

    std::vector<std::string> strings_;
    std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace latoracle
