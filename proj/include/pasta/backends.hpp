#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "pasta/pool.hpp"
#include "pasta/tokenizer.hpp"

namespace pasta {

/// Per-thread view the interpreter hands the backend each timestep.
/// `visible` is the slot set the pending token may attend to; it always
/// contains `last_slot`, whose key/value the backend computes during the step.
struct ThreadView {
    int thread_id = 0;
    int block_id = -1;  // fork threads: async block being decoded
    TokenId last_token = -1;
    int last_slot = -1;
    int last_position = 0;
    int pending_position = 0;
    std::span<const int> visible;
};

struct ThreadStep {
    int thread_id = 0;
    TokenId token = -1;
    Eigen::VectorXf logits;  // empty unless the backend produces logits
};

/// Synchronous batched decoder contract. One step call per timestep covers
/// every active thread; outputs are ordered by ascending thread id.
class DecoderBackend {
public:
    virtual ~DecoderBackend() = default;

    /// Caches the prompt prefix. `slots` lists every prompt slot except the
    /// final one, which the first step call consumes as its last token.
    virtual void prefill(const KvPool& pool, std::span<const int> slots) = 0;

    virtual std::vector<ThreadStep> step(const KvPool& pool,
                                         std::span<const ThreadView> views) = 0;

    /// Re-encodes cache entries whose visibility widened at a sync release.
    /// `logical_order` is the finalized prefix in logical order; entries at
    /// index >= region_begin are recomputed under causal attention.
    virtual void refresh(const KvPool& pool, std::span<const int> logical_order,
                         std::size_t region_begin) {
        (void)pool;
        (void)logical_order;
        (void)region_begin;
    }
};

/// Token streams for replay: the main thread's decoded tokens (EOS-terminated)
/// and one stream per async block (inner tokens plus the closing tag).
struct Script {
    std::vector<TokenId> main;
    std::unordered_map<int, std::vector<TokenId>> forks;
};

Script build_script(const AnnotatedResponse& r, const Tokenizer& tok);

/// Deterministic replayer for scheduling tests and synthetic-latency benches.
class ScriptedBackend : public DecoderBackend {
public:
    explicit ScriptedBackend(Script script,
                             std::chrono::microseconds step_latency = std::chrono::microseconds(0));

    void prefill(const KvPool& pool, std::span<const int> slots) override;
    std::vector<ThreadStep> step(const KvPool& pool, std::span<const ThreadView> views) override;

private:
    const std::vector<TokenId>& stream_for(const ThreadView& view) const;

    Script script_;
    std::chrono::microseconds latency_;
    std::unordered_map<int, std::size_t> cursor_;  // thread_id -> offset in its stream
};

struct TinyTransformerConfig {
    int layers = 2;
    int heads = 4;
    int model_dim = 64;
    int content_vocab = 256;
    int max_specials = 64;
    int max_positions = 2048;
    std::uint64_t seed = 0x9a57a;
};

/// Seeded reference transformer with learned absolute position embeddings and
/// a per-slot KV cache, small enough to re-forward whole prefixes as an
/// oracle. Greedy decoding; optionally forced along a script so structured
/// programs can be driven while the model supplies the numerics.
class TinyTransformer : public DecoderBackend {
public:
    explicit TinyTransformer(const TinyTransformerConfig& config = {});

    void force(Script script);

    void prefill(const KvPool& pool, std::span<const int> slots) override;
    std::vector<ThreadStep> step(const KvPool& pool, std::span<const ThreadView> views) override;
    void refresh(const KvPool& pool, std::span<const int> logical_order,
                 std::size_t region_begin) override;

    /// Ground truth: a full re-forward with standard causal masking over
    /// exactly the given context; returns next-token logits.
    Eigen::VectorXf sequential_reference(std::span<const TokenId> tokens,
                                         std::span<const int> positions) const;

    const TinyTransformerConfig& config() const { return config_; }
    int vocab() const { return vocab_; }

private:
    struct Layer {
        Eigen::MatrixXf wq, wk, wv, wo, w_up, w_down;
        Eigen::VectorXf ln1_gain, ln1_bias, ln2_gain, ln2_bias, b_up, b_down;
    };

    Eigen::RowVectorXf embed(TokenId token, int position) const;
    // Runs `count` context rows starting at `begin` through the stack with
    // causal attention over rows [0, begin+count); earlier rows come from
    // gather of cached K/V. Returns final hidden states of the new rows and
    // writes fresh K/V through `store`.
    template <typename StoreFn>
    Eigen::MatrixXf encode_rows(const Eigen::MatrixXf& fresh_inputs,
                                const std::vector<Eigen::MatrixXf>& cached_k,
                                const std::vector<Eigen::MatrixXf>& cached_v,
                                StoreFn&& store) const;

    Eigen::VectorXf logits_from_hidden(const Eigen::RowVectorXf& hidden) const;
    TokenId greedy(const Eigen::VectorXf& logits) const;

    TinyTransformerConfig config_;
    int vocab_ = 0;
    int head_dim_ = 0;

    Eigen::MatrixXf token_embedding_;     // vocab x dim
    Eigen::MatrixXf position_embedding_;  // max_positions x dim
    std::vector<Layer> layers_;
    Eigen::VectorXf lnf_gain_, lnf_bias_;
    Eigen::MatrixXf unembed_;  // dim x vocab

    // per layer, row per pool slot
    std::vector<Eigen::MatrixXf> key_cache_, value_cache_;
    std::vector<bool> slot_cached_;

    bool forced_ = false;
    Script script_;
    std::unordered_map<int, std::size_t> cursor_;
};

}  // namespace pasta
