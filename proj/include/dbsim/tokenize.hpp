#pragma once

#include <cctype>
#include <string>
#include <vector>

namespace dbsim {

/// Lowercases and splits on whitespace/punctuation boundaries. Alphanumeric
/// runs become tokens; everything else separates.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char ch : text) {
        if (std::isalnum(ch)) {
            current.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(current);
    return tokens;
}

}  // namespace dbsim
