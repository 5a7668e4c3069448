#include "pasta/lang.hpp"

#include <cctype>
#include <charconv>
#include <deque>
#include <optional>

#include "pasta/tokenizer.hpp"

namespace pasta {

std::string_view errc_name(Errc code) {
    switch (code) {
        case Errc::UnbalancedAsync: return "UnbalancedAsync";
        case Errc::OrphanAsync: return "OrphanAsync";
        case Errc::PromiseWithoutBlock: return "PromiseWithoutBlock";
        case Errc::MalformedAttribute: return "MalformedAttribute";
        case Errc::NestedAsync: return "NestedAsync";
        case Errc::MissingTopic: return "MissingTopic";
        case Errc::NonPositiveValue: return "NonPositiveValue";
        case Errc::PoolOverflow: return "PoolOverflow";
        case Errc::MaxThreadsExceeded: return "MaxThreadsExceeded";
        case Errc::RunawayFork: return "RunawayFork";
        case Errc::RowExhausted: return "RowExhausted";
        case Errc::BackendError: return "BackendError";
        case Errc::ScriptExhausted: return "ScriptExhausted";
        case Errc::UnknownSlot: return "UnknownSlot";
        case Errc::ContextTooLong: return "ContextTooLong";
        case Errc::MissingOracleLength: return "MissingOracleLength";
        case Errc::TooFewCandidates: return "TooFewCandidates";
        case Errc::DegeneratePair: return "DegeneratePair";
        case Errc::NonPositiveBeta: return "NonPositiveBeta";
        case Errc::Timeout: return "Timeout";
        case Errc::MalformedReply: return "MalformedReply";
        case Errc::QuotaExceeded: return "QuotaExceeded";
        case Errc::FileUnreadable: return "FileUnreadable";
        case Errc::MalformedRecord: return "MalformedRecord";
        case Errc::AttributeMissing: return "AttributeMissing";
    }
    return "UnknownError";
}

bool AnnotatedResponse::has_annotations() const {
    for (const auto& seg : segments) {
        if (!std::holds_alternative<TextRun>(seg)) return true;
    }
    return false;
}

int AnnotatedResponse::block_count() const {
    int n = 0;
    for (const auto& seg : segments) {
        if (std::holds_alternative<AsyncBlock>(seg)) ++n;
    }
    return n;
}

const Promise* AnnotatedResponse::promise_for(int block_id) const {
    for (const auto& seg : segments) {
        if (const auto* p = std::get_if<Promise>(&seg); p && p->block_id == block_id) return p;
    }
    return nullptr;
}

const AsyncBlock* AnnotatedResponse::block_for(int block_id) const {
    for (const auto& seg : segments) {
        if (const auto* b = std::get_if<AsyncBlock>(&seg); b && b->block_id == block_id) return b;
    }
    return nullptr;
}

int round_to_ten(int n) {
    return (n + 5) / 10 * 10;
}

namespace {

struct TagToken {
    enum class Kind { PromiseTag, AsyncOpen, AsyncClose, SyncTag };
    Kind kind;
    std::size_t length = 0;      // raw bytes consumed, including brackets
    std::string topic;           // PromiseTag / inline AsyncOpen
    std::optional<int> tokens;   // PromiseTag
    bool has_attributes = false; // AsyncOpen only
};

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.substr(0, prefix.size()) == prefix;
}

// Parses `name="value"` pairs (single or double quotes) between `pos` and the
// tag terminator. Returns the offset one past the terminator.
std::size_t scan_attributes(std::string_view text, std::size_t pos, std::string_view terminator,
                            TagToken& out) {
    while (true) {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        if (starts_with(text.substr(pos), terminator)) return pos + terminator.size();
        if (pos >= text.size() || text[pos] == '<' || text[pos] == '>')
            fail(Errc::MalformedAttribute, "unterminated tag");

        std::size_t name_start = pos;
        while (pos < text.size() && text[pos] != '=' &&
               !std::isspace(static_cast<unsigned char>(text[pos])))
            ++pos;
        std::string_view name = text.substr(name_start, pos - name_start);
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos >= text.size() || text[pos] != '=')
            fail(Errc::MalformedAttribute, "attribute '" + std::string(name) + "' missing value");
        ++pos;
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos >= text.size() || (text[pos] != '"' && text[pos] != '\''))
            fail(Errc::MalformedAttribute, "attribute '" + std::string(name) + "' not quoted");
        char quote = text[pos++];
        std::size_t value_start = pos;
        while (pos < text.size() && text[pos] != quote) ++pos;
        if (pos >= text.size())
            fail(Errc::MalformedAttribute, "unterminated attribute value");
        std::string value(text.substr(value_start, pos - value_start));
        ++pos;

        out.has_attributes = true;
        if (name == "topic") {
            out.topic = value;
        } else if (name == "tokens") {
            int parsed = 0;
            auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), parsed);
            if (ec != std::errc() || end != value.data() + value.size() || parsed < 0)
                fail(Errc::MalformedAttribute, "tokens attribute '" + value + "' is not a non-negative integer");
            out.tokens = parsed;
        } else {
            fail(Errc::MalformedAttribute, "unknown attribute '" + std::string(name) + "'");
        }
    }
}

// Attempts to lex a PASTA-LANG tag at text[pos] (which is '<').
// Returns nullopt when the bytes are not one of the three tags, in which case
// the caller treats them as literal text.
std::optional<TagToken> lex_tag(std::string_view text, std::size_t pos) {
    std::string_view rest = text.substr(pos);
    TagToken tag;

    if (starts_with(rest, "</async>")) {
        tag.kind = TagToken::Kind::AsyncClose;
        tag.length = 8;
        return tag;
    }
    if (starts_with(rest, "<sync/>")) {
        tag.kind = TagToken::Kind::SyncTag;
        tag.length = 7;
        return tag;
    }
    if (starts_with(rest, "<async>")) {
        tag.kind = TagToken::Kind::AsyncOpen;
        tag.length = 7;
        return tag;
    }
    if (starts_with(rest, "<async") && rest.size() > 6 &&
        std::isspace(static_cast<unsigned char>(rest[6]))) {
        tag.kind = TagToken::Kind::AsyncOpen;
        tag.length = scan_attributes(text, pos + 6, ">", tag) - pos;
        return tag;
    }
    if (starts_with(rest, "<promise") && rest.size() > 8 &&
        (std::isspace(static_cast<unsigned char>(rest[8])) || rest[8] == '/')) {
        tag.kind = TagToken::Kind::PromiseTag;
        tag.length = scan_attributes(text, pos + 8, "/>", tag) - pos;
        return tag;
    }
    return std::nullopt;
}

}  // namespace

AnnotatedResponse parse(std::string_view text) {
    AnnotatedResponse r;
    std::string pending_text;
    std::deque<int> unpaired;  // indices into r.segments of promises awaiting a block
    bool inside_async = false;
    std::string inner;
    int open_block_id = -1;
    int next_block_id = 0;

    auto flush_text = [&] {
        if (!pending_text.empty()) {
            r.segments.push_back(TextRun{std::move(pending_text)});
            pending_text.clear();
        }
    };

    std::size_t pos = 0;
    while (pos < text.size()) {
        if (text[pos] != '<') {
            (inside_async ? inner : pending_text) += text[pos++];
            continue;
        }
        auto tag = lex_tag(text, pos);
        if (!tag) {
            (inside_async ? inner : pending_text) += text[pos++];
            continue;
        }
        if (inside_async && tag->kind != TagToken::Kind::AsyncClose)
            fail(Errc::NestedAsync, "tag inside <async> block");

        switch (tag->kind) {
            case TagToken::Kind::PromiseTag: {
                if (tag->topic.empty() && !tag->has_attributes)
                    fail(Errc::MalformedAttribute, "promise tag missing attributes");
                if (tag->topic.empty())
                    fail(Errc::MalformedAttribute, "promise tag missing topic");
                if (!tag->tokens)
                    fail(Errc::MalformedAttribute, "promise tag missing tokens");
                flush_text();
                unpaired.push_back(static_cast<int>(r.segments.size()));
                r.segments.push_back(Promise{tag->topic, *tag->tokens, next_block_id++});
                break;
            }
            case TagToken::Kind::AsyncOpen: {
                if (tag->has_attributes)
                    fail(Errc::MalformedAttribute,
                         "canonical <async> takes no attributes (inline form? use from_inline)");
                if (unpaired.empty())
                    fail(Errc::OrphanAsync, "<async> block with no preceding <promise/>");
                flush_text();
                open_block_id = std::get<Promise>(r.segments[unpaired.front()]).block_id;
                unpaired.pop_front();
                inside_async = true;
                inner.clear();
                break;
            }
            case TagToken::Kind::AsyncClose: {
                if (!inside_async)
                    fail(Errc::UnbalancedAsync, "</async> without open <async>");
                r.segments.push_back(AsyncBlock{open_block_id, std::move(inner)});
                inner.clear();
                inside_async = false;
                open_block_id = -1;
                break;
            }
            case TagToken::Kind::SyncTag: {
                flush_text();
                r.segments.push_back(Sync{});
                break;
            }
        }
        pos += tag->length;
    }

    if (inside_async) fail(Errc::UnbalancedAsync, "<async> never closed");
    if (!unpaired.empty()) fail(Errc::PromiseWithoutBlock, "promise has no <async> block");
    flush_text();
    return r;
}

std::string serialize(const AnnotatedResponse& r) {
    std::string out;
    for (const auto& seg : r.segments) {
        if (const auto* t = std::get_if<TextRun>(&seg)) {
            out += t->text;
        } else if (const auto* p = std::get_if<Promise>(&seg)) {
            out += "<promise topic=\"" + p->topic + "\" tokens=\"" + std::to_string(p->tokens) + "\"/>";
        } else if (const auto* b = std::get_if<AsyncBlock>(&seg)) {
            out += "<async>" + b->inner + "</async>";
        } else {
            out += "<sync/>";
        }
    }
    return out;
}

std::string strip(const AnnotatedResponse& r) {
    std::string raw;
    for (const auto& seg : r.segments) {
        if (const auto* t = std::get_if<TextRun>(&seg)) raw += t->text;
        else if (const auto* b = std::get_if<AsyncBlock>(&seg)) raw += b->inner;
    }
    std::string out;
    bool gap = false;
    for (char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            gap = true;
            continue;
        }
        if (gap && !out.empty()) out += ' ';
        gap = false;
        out += c;
    }
    return out;
}

namespace {

int word_count(std::string_view s) {
    int n = 0;
    bool in_word = false;
    for (char c : s) {
        bool space = std::isspace(static_cast<unsigned char>(c));
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

bool whitespace_only(std::string_view s) {
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    return true;
}

}  // namespace

std::vector<Diagnostic> validate(const AnnotatedResponse& r) {
    std::vector<Diagnostic> out;
    auto add = [&](Diagnostic::Severity sev, std::string check, std::string msg) {
        out.push_back({sev, std::move(check), std::move(msg)});
    };

    for (std::size_t i = 0; i < r.segments.size(); ++i) {
        const auto* p = std::get_if<Promise>(&r.segments[i]);
        if (!p) continue;
        int words = word_count(p->topic);
        if (p->topic.empty())
            add(Diagnostic::Severity::Error, "topic", "empty topic attribute");
        else if (words > 8)
            add(Diagnostic::Severity::Error, "topic", "topic exceeds 8 words: '" + p->topic + "'");
        else if (words > 3)
            add(Diagnostic::Severity::Warning, "topic", "topic exceeds 3 words: '" + p->topic + "'");
        if (p->tokens <= 0 || p->tokens % 10 != 0)
            add(Diagnostic::Severity::Warning, "tokens",
                "tokens attribute " + std::to_string(p->tokens) + " is not a positive multiple of 10");

        // canonical placement: the block directly follows its promise
        bool adjacent = i + 1 < r.segments.size() &&
                        std::holds_alternative<AsyncBlock>(r.segments[i + 1]) &&
                        std::get<AsyncBlock>(r.segments[i + 1]).block_id == p->block_id;
        if (!adjacent)
            add(Diagnostic::Severity::Warning, "placement",
                "async block does not directly follow its promise (topic '" + p->topic + "')");
    }

    // content after the last block that never syncs cannot condition on it
    int last_block = -1, last_sync = -1;
    for (std::size_t i = 0; i < r.segments.size(); ++i) {
        if (std::holds_alternative<AsyncBlock>(r.segments[i])) last_block = static_cast<int>(i);
        if (std::holds_alternative<Sync>(r.segments[i])) last_sync = static_cast<int>(i);
    }
    if (last_block >= 0 && last_sync < last_block) {
        bool content_after = false;
        for (std::size_t i = last_block + 1; i < r.segments.size(); ++i) {
            const auto* t = std::get_if<TextRun>(&r.segments[i]);
            if (!t || !whitespace_only(t->text)) content_after = true;
        }
        if (content_after)
            add(Diagnostic::Severity::Warning, "sync",
                "content after the last async block without a <sync/>");
    }
    return out;
}

AnnotatedResponse from_inline(std::string_view text, const Tokenizer& tok) {
    AnnotatedResponse r;
    std::string pending_text;
    bool inside_async = false;
    std::string inner;
    std::string topic;
    int next_block_id = 0;

    auto flush_text = [&] {
        if (!pending_text.empty()) {
            r.segments.push_back(TextRun{std::move(pending_text)});
            pending_text.clear();
        }
    };

    std::size_t pos = 0;
    while (pos < text.size()) {
        if (text[pos] != '<') {
            (inside_async ? inner : pending_text) += text[pos++];
            continue;
        }
        auto tag = lex_tag(text, pos);
        if (!tag) {
            (inside_async ? inner : pending_text) += text[pos++];
            continue;
        }
        if (inside_async && tag->kind != TagToken::Kind::AsyncClose)
            fail(Errc::NestedAsync, "tag inside inline <async> block");

        switch (tag->kind) {
            case TagToken::Kind::AsyncOpen: {
                if (tag->topic.empty())
                    fail(Errc::MissingTopic, "inline <async> tag missing topic attribute");
                flush_text();
                topic = tag->topic;
                inside_async = true;
                inner.clear();
                break;
            }
            case TagToken::Kind::AsyncClose: {
                if (!inside_async)
                    fail(Errc::UnbalancedAsync, "</async> without open <async>");
                // estimate = inner tokens + the close tag the fork decodes
                int estimate = static_cast<int>(tok.tokenize_text(inner).size()) + 1;
                int attr = std::max(10, round_to_ten(estimate));
                int bid = next_block_id++;
                r.segments.push_back(Promise{topic, attr, bid});
                r.segments.push_back(AsyncBlock{bid, std::move(inner)});
                inner.clear();
                inside_async = false;
                break;
            }
            case TagToken::Kind::SyncTag: {
                flush_text();
                r.segments.push_back(Sync{});
                break;
            }
            case TagToken::Kind::PromiseTag:
                fail(Errc::MalformedAttribute, "promise tag is not part of the inline form");
        }
        pos += tag->length;
    }

    if (inside_async) fail(Errc::UnbalancedAsync, "inline <async> never closed");
    flush_text();
    return r;
}

}  // namespace pasta
