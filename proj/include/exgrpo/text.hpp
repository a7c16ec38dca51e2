#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "exgrpo/task.hpp"

namespace exgrpo {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kEos = "<eos>";

std::vector<std::string> split_words(std::string_view text);
std::string join_words(const std::vector<std::string>& words, std::string_view sep = " ");

/// "<think> step ... </think> answer" is the response layout shared by teacher targets and student outputs.
std::string render_response(const ReasoningTrace& reasoning, std::string_view answer);

/// Answer carried by a response: the words after the last think-close marker, else the last
/// non-marker word. Returns an empty string when nothing qualifies.
std::string extract_answer(std::string_view response);

/// Reasoning carried by a response: the words inside the first think span, or empty.
std::string extract_reasoning(std::string_view response);

/// Exactly one think-open and one think-close, in that order, followed by a non-empty answer.
bool has_single_think_span(std::string_view response);

}  // namespace exgrpo
