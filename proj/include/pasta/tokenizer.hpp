#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pasta/lang.hpp"

namespace pasta {

using TokenId = std::int32_t;

/// Maps words and PASTA-LANG tags to token ids. Every tag — including a full
/// promise tag with its attributes — is a single atomic control token, the
/// same way a production setup would extend the model vocabulary.
///
/// Whitespace mode assigns ids on first touch and detokenizes exactly.
/// Provided mode hashes words into a fixed content range so a fixed-size
/// embedding table can sit on top; specials still get exact dedicated ids.
class Tokenizer {
public:
    enum class Mode { Whitespace, Provided };

    static Tokenizer whitespace();
    static Tokenizer provided(int content_slots = 256, int max_specials = 64);

    Mode mode() const { return mode_; }

    TokenId async_open_id() const { return async_open_; }
    TokenId async_close_id() const { return async_close_; }
    TokenId sync_id() const { return sync_; }
    TokenId eos_id() const { return eos_; }
    TokenId promise_id(const Promise& p) const;

    bool is_control(TokenId id) const;
    bool is_promise(TokenId id) const { return promise_info(id) != nullptr; }
    /// topic/tokens attributes behind a promise control token, nullptr otherwise.
    const Promise* promise_info(TokenId id) const;

    TokenId word_id(std::string_view word) const;
    std::vector<TokenId> tokenize_text(std::string_view text) const;
    std::size_t count_text_tokens(std::string_view text) const;

    /// Canonical token stream of a response: tags atomic, inner text split on
    /// whitespace. No EOS is appended.
    std::vector<TokenId> tokenize(const AnnotatedResponse& r) const;

    /// Joins surfaces with canonical spacing: single spaces between tokens,
    /// with async blocks abutting their promise and their inner text.
    std::string detokenize(std::span<const TokenId> ids) const;

    std::string surface(TokenId id) const;

    /// Ids currently allocated (Whitespace) or the fixed table size (Provided).
    int vocab_capacity() const;

    static std::vector<std::string_view> split_words(std::string_view text);

private:
    explicit Tokenizer(Mode mode, int content_slots, int max_specials);

    TokenId intern_special(const std::string& surface) const;
    TokenId intern_word(std::string_view word) const;

    Mode mode_;
    int content_slots_;
    int max_specials_;

    // registries are lazily grown; treat a Tokenizer as single-owner state
    mutable std::unordered_map<std::string, TokenId> special_by_surface_;
    mutable std::unordered_map<TokenId, std::string> surface_by_id_;
    mutable std::unordered_map<TokenId, Promise> promise_by_id_;
    mutable std::unordered_map<std::string, TokenId> word_by_surface_;
    mutable TokenId next_id_ = 0;
    mutable TokenId next_special_ = 0;

    TokenId async_open_ = -1;
    TokenId async_close_ = -1;
    TokenId sync_ = -1;
    TokenId eos_ = -1;
};

/// Canonical surface of a promise tag, also its vocabulary key.
std::string promise_surface(const Promise& p);

}  // namespace pasta
