#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pasta/errors.hpp"

namespace pasta {

class Tokenizer;

// The three PASTA-LANG tags. AsyncOpen/AsyncClose exist as token-level kinds;
// at tree level an <async>...</async> pair is one AsyncBlock segment.
enum class TagKind { Promise, AsyncOpen, AsyncClose, Sync };

struct TextRun {
    std::string text;  // raw bytes, seams included
    bool operator==(const TextRun&) const = default;
};

struct Promise {
    std::string topic;
    int tokens = 0;  // estimated block length, multiples of 10 in canonical form
    int block_id = -1;
    bool operator==(const Promise&) const = default;
};

struct AsyncBlock {
    int block_id = -1;
    std::string inner;  // raw bytes; flat, no nested tags
    bool operator==(const AsyncBlock&) const = default;
};

struct Sync {
    bool operator==(const Sync&) const = default;
};

using Segment = std::variant<TextRun, Promise, AsyncBlock, Sync>;

struct AnnotatedResponse {
    std::vector<Segment> segments;

    bool operator==(const AnnotatedResponse&) const = default;

    bool has_annotations() const;
    int block_count() const;
    const Promise* promise_for(int block_id) const;
    const AsyncBlock* block_for(int block_id) const;
};

struct Diagnostic {
    enum class Severity { Warning, Error };
    Severity severity = Severity::Warning;
    std::string check;
    std::string message;
};

/// Parse canonical PASTA-LANG text into its segment tree.
/// Throws Error with one of: UnbalancedAsync, OrphanAsync, PromiseWithoutBlock,
/// MalformedAttribute, NestedAsync.
AnnotatedResponse parse(std::string_view text);

/// Byte-faithful inverse of parse: serialize(parse(s)) == s for any parseable s.
/// Promise tags are emitted with topic then tokens, double-quoted.
std::string serialize(const AnnotatedResponse& r);

/// Plain text with every tag removed and async content left inline at its
/// canonical position. Whitespace collapses to single spaces at the seams.
std::string strip(const AnnotatedResponse& r);

/// Non-fatal canonical-form checks: topic length, tokens granularity,
/// missing trailing sync.
std::vector<Diagnostic> validate(const AnnotatedResponse& r);

/// Convert the inline dataset form (<async topic='...'>...</async> + <sync/>)
/// into canonical form. Each inline block becomes a Promise/AsyncBlock pair;
/// the tokens attribute estimates the fork's decode length (inner + close tag),
/// rounded to the nearest multiple of ten (ties up, floor 10).
AnnotatedResponse from_inline(std::string_view text, const Tokenizer& tok);

/// Nearest multiple of ten, ties round up. round_to_ten(15) == 20.
int round_to_ten(int n);

}  // namespace pasta
