#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pasta/interpreter.hpp"
#include "pasta/lang.hpp"
#include "pasta/tokenizer.hpp"

namespace pasta {

/// One next-token-prediction training example with the three asynchronous
/// decoding modifications: block-masked attention, estimated position ids
/// after promises, and promise-skip targets.
struct SftExample {
    static constexpr TokenId kIgnore = -100;

    std::vector<TokenId> input_ids;  // prompt + canonical response + EOS
    std::vector<int> position_ids;
    std::vector<TokenId> targets;
    // per row, sorted half-open [start, end) runs over input indices
    std::vector<std::vector<std::pair<int, int>>> visible_intervals;
    int prompt_len = 0;

    bool attends(int i, int j) const;
};

/// Builds the annotated training example. Position offsets after each promise
/// follow the given strategy, identical to the interpreter's arithmetic
/// (Oracle variants draw the realized length from the block itself).
SftExample build_sft_example(std::span<const TokenId> prompt, const AnnotatedResponse& r,
                             const Tokenizer& tok,
                             const PositionStrategy& strategy = PositionStrategy{});

/// Baseline example over the stripped response: plain causal mask,
/// shift-by-one targets.
SftExample build_baseline_example(std::span<const TokenId> prompt, const AnnotatedResponse& r,
                                  const Tokenizer& tok);

struct CorpusPair {
    int line = 0;
    std::string prompt;
    AnnotatedResponse response;
};

struct IngestStats {
    int records = 0;
    int parsed = 0;
    int skipped = 0;
    std::map<std::string, int> error_counts;                 // error class -> count
    std::vector<std::pair<int, std::string>> diagnostics;    // line -> message
};

/// Reads line-delimited conversation or prompt/response records. The chatbot
/// turn may be canonical or inline (Appendix-style) annotated text; inline
/// responses are converted. Records that fail to parse are skipped and
/// counted, never fatal.
std::vector<CorpusPair> ingest_corpus(const std::string& path, const Tokenizer& tok,
                                      IngestStats* stats = nullptr);

/// Parses one record's response text, converting from the inline form when
/// the tags carry topic attributes.
AnnotatedResponse parse_response_text(const std::string& text, const Tokenizer& tok);

}  // namespace pasta
