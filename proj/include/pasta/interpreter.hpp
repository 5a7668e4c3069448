#pragma once

#include <chrono>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pasta/backends.hpp"
#include "pasta/plan.hpp"
#include "pasta/pool.hpp"

namespace pasta {

enum class StrategyKind { Fixed, Pred1X, Pred10X, Oracle1X, Oracle10X, OracleExact };

/// Rule for the position-id offset of main-thread tokens that follow a
/// promise before the block's true length is known.
struct PositionStrategy {
    StrategyKind kind = StrategyKind::Pred10X;
    int fixed_tokens = 40;

    static PositionStrategy from_name(std::string_view name);
    std::string name() const;
};

/// Offset applied to main-thread positions after a promise: the block-length
/// estimate plus one for the inserted <async> token. The estimate covers the
/// block's inner tokens and its closing tag. Oracle variants require the
/// realized length.
int assign_position(const PositionStrategy& strategy, const Promise& promise,
                    std::optional<int> actual_len = std::nullopt);

struct InterpreterConfig {
    int max_sequence_length = 2048;
    int max_threads = 8;       // concurrent decoding threads, main included
    int fork_token_cap = 512;  // decoded tokens per fork before RunawayFork
    int max_decode_steps = 0;  // 0 = unbounded; safety valve for free-running backends
    bool record_debug = false; // keep visible sets, logical contexts, logits per event
    // realized block lengths by spawn order, required by Oracle strategies
    std::vector<int> oracle_block_lengths;
};

struct ThreadState {
    enum class Status { Active, Done, WaitingAtSync };

    int thread_id = 0;
    int block_id = -1;    // fork threads: realized block index (spawn order)
    int spawn_slot = -1;  // pool index of the promise token (fork threads)
    Status status = Status::Active;
    std::vector<int> owned_slots;

    TokenId last_token = -1;
    int last_slot = -1;
    int last_position = 0;
    int next_position = 0;
    int decoded_tokens = 0;
};

/// Slot set the pending token of `t` may attend to, ascending by pool index.
/// Forks see their own slots plus main-thread slots up to their spawn point;
/// the main thread sees every slot it owns (synced content transfers to main
/// at release).
std::vector<int> visible_slots(const ThreadState& t, const KvPool& pool);

struct DecodeEvent {
    int timestep = 0;
    int thread_id = 0;
    TokenId token = -1;
    int slot = -1;  // -1 while a sync is deferred and for the terminal EOS
    int position_id = -1;
    bool inserted = false;
    bool post_sync = false;  // main-thread step with every prior fork released
    // populated when InterpreterConfig::record_debug is set
    std::vector<int> visible;
    std::vector<int> logical_context;
    Eigen::VectorXf logits;
};

struct PositionGap {
    int block_id = -1;
    int offset = 0;    // estimate + 1 applied at decode time
    int realized = 0;  // realized block length including the inserted <async>
    int gap() const { return offset - realized; }
};

struct TranscriptStats {
    int spawns = 0;
    int max_concurrent = 1;
    std::vector<int> sync_waits;  // release step minus sync decode step, per sync
    int stray_control_tokens = 0;
    long kv_entries_copied = 0;  // naive interpreter: cache rows moved at sync
};

struct Transcript {
    std::vector<DecodeEvent> events;
    KvPool pool{0};
    int prompt_len = 0;
    std::vector<int> logical_slots;          // finalized order, prompt included
    std::vector<int> logical_positions_all;  // position ids of logical_slots
    std::vector<TokenId> logical_tokens;     // response tokens in logical order
    std::string final_text;                  // canonical detokenization of the above
    std::optional<AnnotatedResponse> realized;  // parse of final_text when well formed
    int total_timesteps = 0;  // timestep of the last landed response token
    TranscriptStats stats;
    std::vector<PositionGap> gaps;  // per block, spawn order

    /// Position-id jumps along the finalized logical sequence; entry i is
    /// pos(i) - pos(i-1) - 1, zero everywhere under exact oracle offsets.
    std::vector<int> logical_position_gaps() const;
};

/// Lockstep asynchronous decoding over one interleaved KV pool: one batched
/// backend call per timestep, forks spawned at promise tags, visibility
/// masks per thread, synchronization at sync tags.
Transcript run(std::span<const TokenId> prompt, DecoderBackend& backend,
               const PositionStrategy& strategy, const InterpreterConfig& config,
               const Tokenizer& tok);

/// Batched-row interpreter: every thread is an independent row with a copied
/// prefix; fork rows merge into the main row at sync. Scheduling semantics
/// match run exactly; serves as the differential oracle.
Transcript naive_run(std::span<const TokenId> prompt, DecoderBackend& backend,
                     const PositionStrategy& strategy, const InterpreterConfig& config,
                     const Tokenizer& tok);

/// Realized block lengths (inner tokens + close tag) by spawn order, for the
/// Oracle position strategies.
std::vector<int> oracle_lengths(const AnnotatedResponse& r, const Tokenizer& tok);

struct BenchResult {
    double baseline_seconds = 0.0;
    double test_seconds = 0.0;
    double realized_speedup = 0.0;
    double theoretical_speedup = 0.0;
    int baseline_tokens = 0;
    int critical_path = 0;
};

/// Wall-clock comparison with a synthetic per-step latency: sequential decode
/// of the stripped baseline vs interpreted decode of the annotated program.
/// Each side runs twice and the second run is timed.
BenchResult bench(std::span<const TokenId> prompt, const AnnotatedResponse& program,
                  const Tokenizer& tok, const PositionStrategy& strategy,
                  const InterpreterConfig& config, std::chrono::microseconds step_latency,
                  const std::string& baseline_text = "");

}  // namespace pasta
