#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pasta {

enum class Errc {
    // language
    UnbalancedAsync,
    OrphanAsync,
    PromiseWithoutBlock,
    MalformedAttribute,
    NestedAsync,
    MissingTopic,
    // plan / stats
    NonPositiveValue,
    // interpreter
    PoolOverflow,
    MaxThreadsExceeded,
    RunawayFork,
    RowExhausted,
    BackendError,
    // backends
    ScriptExhausted,
    UnknownSlot,
    ContextTooLong,
    MissingOracleLength,
    // preference
    TooFewCandidates,
    DegeneratePair,
    NonPositiveBeta,
    Timeout,
    MalformedReply,
    QuotaExceeded,
    // io
    FileUnreadable,
    MalformedRecord,
    AttributeMissing,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace pasta
