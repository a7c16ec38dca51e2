#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace exgrpo {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr std::string_view kUnknown = "<unk>";

/// Bijective token <-> index map over a closed, whitespace-split lexicon.
/// The think-open, think-close and end-of-sequence markers are always present.
class Vocabulary {
public:
    /// Tokens must be distinct and non-empty; missing reserved markers are appended.
    explicit Vocabulary(std::vector<std::string> tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    TokenId id(std::string_view token) const;  // throws SchemaError for unknown tokens
    std::optional<TokenId> find(std::string_view token) const;
    const std::string& token(TokenId id) const;
    bool contains(std::string_view token) const { return find(token).has_value(); }

    TokenSequence encode(std::string_view text) const;
    /// Like encode(), but words outside the vocabulary map to kUnknown when it is present.
    TokenSequence encode_lenient(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

    TokenId think_open() const noexcept { return think_open_; }
    TokenId think_close() const noexcept { return think_close_; }
    TokenId eos() const noexcept { return eos_; }

    nlohmann::json to_json() const { return tokens_; }
    static Vocabulary from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId think_open_ = -1, think_close_ = -1, eos_ = -1;
};

}  // namespace exgrpo
