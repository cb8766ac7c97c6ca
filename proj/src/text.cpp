#include "groundkit/text.hpp"

#include <cctype>

namespace groundkit::text {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

bool attaches_left(const std::string& tok) {
    return tok == "." || tok == "," || tok == ";" || tok == ":" || tok == "!" || tok == "?" || tok == ")" ||
           tok == "%";
}

}  // namespace

std::string normalize(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::vector<std::string> tokenize_words(std::string_view s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        if (s.substr(i, kSegToken.size()) == kSegToken) {
            out.emplace_back(kSegToken);
            i += kSegToken.size();
            continue;
        }
        const auto c = static_cast<unsigned char>(s[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (is_word_char(c)) {
            std::string word;
            while (i < s.size() && is_word_char(static_cast<unsigned char>(s[i])) &&
                   s.substr(i, kSegToken.size()) != kSegToken) {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
                ++i;
            }
            out.push_back(std::move(word));
            continue;
        }
        out.emplace_back(1, static_cast<char>(c));
        ++i;
    }
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    bool suppress_space = true;
    for (const auto& tok : tokens) {
        if (!suppress_space && !attaches_left(tok)) out.push_back(' ');
        out += tok;
        suppress_space = (tok == "(");
    }
    return out;
}

bool contains_seg(std::string_view s) { return s.find(kSegToken) != std::string_view::npos; }

bool is_no_findings(std::string_view s) { return normalize(s) == "no findings"; }

std::string capitalize(std::string_view s) {
    std::string out(s);
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
}

}  // namespace groundkit::text
