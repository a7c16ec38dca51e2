#include "exgrpo/vocabulary.hpp"

#include <fstream>

#include "exgrpo/error.hpp"
#include "exgrpo/text.hpp"

namespace exgrpo {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (auto reserved : {kThinkOpen, kThinkClose, kEos}) {
        bool present = false;
        for (const auto& t : tokens_) present = present || t == reserved;
        if (!present) tokens_.emplace_back(reserved);
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto& t = tokens_[i];
        if (t.empty()) throw SchemaError("vocabulary token must not be empty");
        if (t.find_first_of(" \t\r\n") != std::string::npos)
            throw SchemaError("vocabulary token contains whitespace: '" + t + "'");
        if (!index_.emplace(t, static_cast<TokenId>(i)).second)
            throw SchemaError("duplicate vocabulary token '" + t + "'");
    }
    think_open_ = id(kThinkOpen);
    think_close_ = id(kThinkClose);
    eos_ = id(kEos);
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
    if (auto found = find(token)) return *found;
    throw SchemaError("token '" + std::string(token) + "' is not in the vocabulary");
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw ContractError("token index out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(std::string_view text) const {
    TokenSequence out;
    for (const auto& w : split_words(text)) out.push_back(id(w));
    return out;
}

TokenSequence Vocabulary::encode_lenient(std::string_view text) const {
    const auto unk = find(kUnknown);
    if (!unk) return encode(text);
    TokenSequence out;
    for (const auto& w : split_words(text)) out.push_back(find(w).value_or(*unk));
    return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw SchemaError("vocabulary JSON must be a list of strings");
    return Vocabulary(j.get<std::vector<std::string>>());
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("vocabulary: ") + e.what());
    }
}

}  // namespace exgrpo
