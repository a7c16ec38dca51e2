#include "exgrpo/text.hpp"

#include <cctype>
#include <sstream>

namespace exgrpo {

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

std::string join_words(const std::vector<std::string>& words, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += sep;
        out += words[i];
    }
    return out;
}

std::string render_response(const ReasoningTrace& reasoning, std::string_view answer) {
    std::string out(kThinkOpen);
    out += ' ';
    out += reasoning.joined(" ");
    out += ' ';
    out += kThinkClose;
    out += ' ';
    out += answer;
    return out;
}

namespace {

bool is_marker(std::string_view w) { return w == kThinkOpen || w == kThinkClose || w == kEos; }

}  // namespace

std::string extract_answer(std::string_view response) {
    const auto words = split_words(response);
    for (std::size_t i = words.size(); i-- > 0;) {
        if (words[i] != kThinkClose) continue;
        std::vector<std::string> answer;
        for (std::size_t k = i + 1; k < words.size() && words[k] != kEos; ++k)
            if (!is_marker(words[k])) answer.push_back(words[k]);
        return join_words(answer);
    }
    // no think-close: fall back to the last plain word
    for (std::size_t i = words.size(); i-- > 0;)
        if (!is_marker(words[i])) return words[i];
    return {};
}

std::string extract_reasoning(std::string_view response) {
    const auto words = split_words(response);
    std::vector<std::string> inside;
    bool open = false;
    for (const auto& w : words) {
        if (w == kThinkOpen && !open) {
            open = true;
        } else if (w == kThinkClose && open) {
            return join_words(inside);
        } else if (open) {
            inside.push_back(w);
        }
    }
    return {};
}

bool has_single_think_span(std::string_view response) {
    const auto words = split_words(response);
    int opens = 0, closes = 0;
    std::size_t open_at = 0, close_at = 0;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (words[i] == kThinkOpen) {
            ++opens;
            open_at = i;
        } else if (words[i] == kThinkClose) {
            ++closes;
            close_at = i;
        }
    }
    if (opens != 1 || closes != 1 || open_at > close_at) return false;
    for (std::size_t i = close_at + 1; i < words.size(); ++i)
        if (!is_marker(words[i])) return true;
    return false;
}

}  // namespace exgrpo
