#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pasta/interpreter.hpp"
#include "pasta/plan.hpp"
#include "pasta/preference.hpp"

namespace pasta {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Every report embeds the full run configuration so a run can be reproduced
/// byte-identically from its own output.
struct RunConfig {
    std::string command;
    std::string corpus;
    std::string backend = "scripted";
    std::string strategy = "pred-10x";
    int fixed_tokens = 40;
    int max_sequence_length = 2048;
    int max_threads = 8;
    int fork_token_cap = 512;
    int max_decode_steps = 0;
    long latency_us = 0;
    std::string judge = "mock";
    std::optional<double> lambda = 1.0;  // nullopt = quality-only
    std::string efficiency = "speedup";
    std::string mean = "geometric";
    int num_candidates = 10;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);

    InterpreterConfig interpreter() const;
    PositionStrategy position_strategy() const;
};

/// One decode event per line: timestep, thread, token, slot, position.
void write_trace(const Transcript& transcript, const Tokenizer& tok, std::ostream& out);

struct DecodeRow {
    std::string id;
    SpeedupReport report;
    int timesteps = 0;
    int spawns = 0;
    int max_concurrent = 0;
};

void write_decode_csv(const RunConfig& config, const std::vector<DecodeRow>& rows,
                      std::ostream& out);
void write_decode_jsonl(const RunConfig& config, const std::vector<DecodeRow>& rows,
                        std::ostream& out);

struct BenchRow {
    std::string id;
    BenchResult result;
};

void write_bench_csv(const RunConfig& config, const std::vector<BenchRow>& rows,
                     std::ostream& out);

void write_preference_jsonl(const RunConfig& config, const std::vector<PreferenceRecord>& records,
                            std::ostream& out);

std::vector<std::string> read_lines(const std::string& path);

}  // namespace pasta
