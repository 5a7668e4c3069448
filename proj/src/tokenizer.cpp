#include "pasta/tokenizer.hpp"

#include <cctype>

namespace pasta {

std::string promise_surface(const Promise& p) {
    return "<promise topic=\"" + p.topic + "\" tokens=\"" + std::to_string(p.tokens) + "\"/>";
}

Tokenizer::Tokenizer(Mode mode, int content_slots, int max_specials)
    : mode_(mode), content_slots_(content_slots), max_specials_(max_specials) {
    if (mode_ == Mode::Provided) next_special_ = content_slots_;
    async_open_ = intern_special("<async>");
    async_close_ = intern_special("</async>");
    sync_ = intern_special("<sync/>");
    eos_ = intern_special("<eos>");
}

Tokenizer Tokenizer::whitespace() {
    return Tokenizer(Mode::Whitespace, 0, 0);
}

Tokenizer Tokenizer::provided(int content_slots, int max_specials) {
    return Tokenizer(Mode::Provided, content_slots, max_specials);
}

TokenId Tokenizer::intern_special(const std::string& surface) const {
    if (auto it = special_by_surface_.find(surface); it != special_by_surface_.end())
        return it->second;
    TokenId id;
    if (mode_ == Mode::Provided) {
        if (next_special_ >= content_slots_ + max_specials_)
            fail(Errc::BackendError, "special-token table full (" + std::to_string(max_specials_) + ")");
        id = next_special_++;
    } else {
        id = next_id_++;
    }
    special_by_surface_.emplace(surface, id);
    surface_by_id_.emplace(id, surface);
    return id;
}

namespace {
std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}
}  // namespace

TokenId Tokenizer::intern_word(std::string_view word) const {
    if (mode_ == Mode::Provided)
        return static_cast<TokenId>(fnv1a(word) % static_cast<std::uint64_t>(content_slots_));
    auto it = word_by_surface_.find(std::string(word));
    if (it != word_by_surface_.end()) return it->second;
    TokenId id = next_id_++;
    word_by_surface_.emplace(std::string(word), id);
    surface_by_id_.emplace(id, std::string(word));
    return id;
}

TokenId Tokenizer::promise_id(const Promise& p) const {
    std::string surface = promise_surface(p);
    auto it = special_by_surface_.find(surface);
    if (it != special_by_surface_.end()) return it->second;
    TokenId id = intern_special(surface);
    promise_by_id_.emplace(id, Promise{p.topic, p.tokens, -1});
    return id;
}

bool Tokenizer::is_control(TokenId id) const {
    if (id == async_open_ || id == async_close_ || id == sync_ || id == eos_) return true;
    return promise_by_id_.contains(id);
}

const Promise* Tokenizer::promise_info(TokenId id) const {
    auto it = promise_by_id_.find(id);
    return it == promise_by_id_.end() ? nullptr : &it->second;
}

TokenId Tokenizer::word_id(std::string_view word) const {
    return intern_word(word);
}

std::vector<std::string_view> Tokenizer::split_words(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) out.push_back(text.substr(start, i - start));
    }
    return out;
}

std::vector<TokenId> Tokenizer::tokenize_text(std::string_view text) const {
    std::vector<TokenId> out;
    for (auto word : split_words(text)) out.push_back(intern_word(word));
    return out;
}

std::size_t Tokenizer::count_text_tokens(std::string_view text) const {
    return split_words(text).size();
}

std::vector<TokenId> Tokenizer::tokenize(const AnnotatedResponse& r) const {
    std::vector<TokenId> out;
    for (const auto& seg : r.segments) {
        if (const auto* t = std::get_if<TextRun>(&seg)) {
            for (auto word : split_words(t->text)) out.push_back(intern_word(word));
        } else if (const auto* p = std::get_if<Promise>(&seg)) {
            out.push_back(promise_id(*p));
        } else if (const auto* b = std::get_if<AsyncBlock>(&seg)) {
            out.push_back(async_open_);
            for (auto word : split_words(b->inner)) out.push_back(intern_word(word));
            out.push_back(async_close_);
        } else {
            out.push_back(sync_);
        }
    }
    return out;
}

std::string Tokenizer::surface(TokenId id) const {
    if (auto it = surface_by_id_.find(id); it != surface_by_id_.end()) return it->second;
    return "w" + std::to_string(id);
}

std::string Tokenizer::detokenize(std::span<const TokenId> ids) const {
    std::string out;
    TokenId prev = -1;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        TokenId id = ids[i];
        bool glue = out.empty() ||
                    (is_promise(prev) && id == async_open_) ||
                    prev == async_open_ ||
                    id == async_close_;
        if (!glue) out += ' ';
        out += surface(id);
        prev = id;
    }
    return out;
}

int Tokenizer::vocab_capacity() const {
    if (mode_ == Mode::Provided) return content_slots_ + max_specials_;
    return next_id_;
}

}  // namespace pasta
