#include "pasta/backends.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

namespace pasta {

Script build_script(const AnnotatedResponse& r, const Tokenizer& tok) {
    Script script;
    for (const auto& seg : r.segments) {
        if (const auto* t = std::get_if<TextRun>(&seg)) {
            for (auto word : Tokenizer::split_words(t->text))
                script.main.push_back(tok.word_id(word));
        } else if (const auto* p = std::get_if<Promise>(&seg)) {
            script.main.push_back(tok.promise_id(*p));
        } else if (const auto* b = std::get_if<AsyncBlock>(&seg)) {
            auto& stream = script.forks[b->block_id];
            for (auto word : Tokenizer::split_words(b->inner))
                stream.push_back(tok.word_id(word));
            stream.push_back(tok.async_close_id());
        } else {
            script.main.push_back(tok.sync_id());
        }
    }
    script.main.push_back(tok.eos_id());
    return script;
}

ScriptedBackend::ScriptedBackend(Script script, std::chrono::microseconds step_latency)
    : script_(std::move(script)), latency_(step_latency) {}

void ScriptedBackend::prefill(const KvPool&, std::span<const int>) {}

const std::vector<TokenId>& ScriptedBackend::stream_for(const ThreadView& view) const {
    if (view.thread_id == 0) return script_.main;
    auto it = script_.forks.find(view.block_id);
    if (it == script_.forks.end())
        fail(Errc::ScriptExhausted, "no script for block " + std::to_string(view.block_id));
    return it->second;
}

std::vector<ThreadStep> ScriptedBackend::step(const KvPool&, std::span<const ThreadView> views) {
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
    std::vector<ThreadStep> out;
    out.reserve(views.size());
    for (const auto& view : views) {
        const auto& stream = stream_for(view);
        std::size_t& cursor = cursor_[view.thread_id];
        if (cursor >= stream.size())
            fail(Errc::ScriptExhausted,
                 "script for thread " + std::to_string(view.thread_id) + " exhausted");
        out.push_back(ThreadStep{view.thread_id, stream[cursor++], {}});
    }
    return out;
}

// ---------------------------------------------------------------------------
// TinyTransformer

namespace {

constexpr float kLnEps = 1e-5f;

Eigen::RowVectorXf layer_norm(const Eigen::RowVectorXf& x, const Eigen::VectorXf& gain,
                              const Eigen::VectorXf& bias) {
    float mean = x.mean();
    Eigen::RowVectorXf centered = x.array() - mean;
    float var = centered.squaredNorm() / static_cast<float>(x.size());
    Eigen::RowVectorXf normed = centered / std::sqrt(var + kLnEps);
    return (normed.array() * gain.transpose().array()) + bias.transpose().array();
}

Eigen::MatrixXf layer_norm_rows(const Eigen::MatrixXf& x, const Eigen::VectorXf& gain,
                                const Eigen::VectorXf& bias) {
    Eigen::MatrixXf out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out.row(i) = layer_norm(x.row(i), gain, bias);
    return out;
}

float gelu(float v) {
    constexpr float kSqrt2OverPi = 0.7978845608028654f;
    return 0.5f * v * (1.0f + std::tanh(kSqrt2OverPi * (v + 0.044715f * v * v * v)));
}

Eigen::MatrixXf random_matrix(std::mt19937_64& rng, int rows, int cols, float stddev) {
    std::normal_distribution<float> dist(0.0f, stddev);
    Eigen::MatrixXf m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

}  // namespace

TinyTransformer::TinyTransformer(const TinyTransformerConfig& config) : config_(config) {
    vocab_ = config_.content_vocab + config_.max_specials;
    head_dim_ = config_.model_dim / config_.heads;
    const int dim = config_.model_dim;

    std::mt19937_64 rng(config_.seed);
    const float scale = 0.08f;
    token_embedding_ = random_matrix(rng, vocab_, dim, scale);
    position_embedding_ = random_matrix(rng, config_.max_positions, dim, scale);
    layers_.resize(config_.layers);
    for (auto& layer : layers_) {
        layer.wq = random_matrix(rng, dim, dim, scale);
        layer.wk = random_matrix(rng, dim, dim, scale);
        layer.wv = random_matrix(rng, dim, dim, scale);
        layer.wo = random_matrix(rng, dim, dim, scale);
        layer.w_up = random_matrix(rng, dim, 4 * dim, scale);
        layer.w_down = random_matrix(rng, 4 * dim, dim, scale);
        layer.b_up = Eigen::VectorXf::Zero(4 * dim);
        layer.b_down = Eigen::VectorXf::Zero(dim);
        layer.ln1_gain = Eigen::VectorXf::Ones(dim);
        layer.ln1_bias = Eigen::VectorXf::Zero(dim);
        layer.ln2_gain = Eigen::VectorXf::Ones(dim);
        layer.ln2_bias = Eigen::VectorXf::Zero(dim);
    }
    lnf_gain_ = Eigen::VectorXf::Ones(dim);
    lnf_bias_ = Eigen::VectorXf::Zero(dim);
    unembed_ = random_matrix(rng, dim, vocab_, scale);

    key_cache_.assign(config_.layers, Eigen::MatrixXf::Zero(config_.max_positions, dim));
    value_cache_.assign(config_.layers, Eigen::MatrixXf::Zero(config_.max_positions, dim));
    slot_cached_.assign(config_.max_positions, false);
}

void TinyTransformer::force(Script script) {
    forced_ = true;
    script_ = std::move(script);
    cursor_.clear();
}

Eigen::RowVectorXf TinyTransformer::embed(TokenId token, int position) const {
    if (token < 0 || token >= vocab_)
        fail(Errc::BackendError, "token id " + std::to_string(token) + " outside vocabulary");
    if (position < 0 || position >= config_.max_positions)
        fail(Errc::ContextTooLong, "position id " + std::to_string(position) + " out of range");
    return token_embedding_.row(token) + position_embedding_.row(position);
}

template <typename StoreFn>
Eigen::MatrixXf TinyTransformer::encode_rows(const Eigen::MatrixXf& fresh_inputs,
                                             const std::vector<Eigen::MatrixXf>& cached_k,
                                             const std::vector<Eigen::MatrixXf>& cached_v,
                                             StoreFn&& store) const {
    const int dim = config_.model_dim;
    const Eigen::Index fresh = fresh_inputs.rows();
    const Eigen::Index cached = cached_k.empty() ? 0 : cached_k[0].rows();
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim_));

    Eigen::MatrixXf x = fresh_inputs;
    for (int l = 0; l < config_.layers; ++l) {
        const Layer& layer = layers_[l];
        Eigen::MatrixXf xn = layer_norm_rows(x, layer.ln1_gain, layer.ln1_bias);
        Eigen::MatrixXf q = xn * layer.wq;
        Eigen::MatrixXf k = xn * layer.wk;
        Eigen::MatrixXf v = xn * layer.wv;
        store(l, k, v);

        Eigen::MatrixXf attn = Eigen::MatrixXf::Zero(fresh, dim);
        for (int h = 0; h < config_.heads; ++h) {
            const auto cols = Eigen::seqN(h * head_dim_, head_dim_);
            for (Eigen::Index i = 0; i < fresh; ++i) {
                const Eigen::Index span = cached + i + 1;  // causal: rows [0, cached+i]
                Eigen::VectorXf scores(span);
                if (cached > 0)
                    scores.head(cached) =
                        cached_k[l](Eigen::all, cols) * q.row(i)(cols).transpose();
                scores.tail(i + 1) =
                    k.topRows(i + 1)(Eigen::all, cols) * q.row(i)(cols).transpose();
                scores *= inv_sqrt;
                Eigen::VectorXf weights = (scores.array() - scores.maxCoeff()).exp();
                weights /= weights.sum();
                Eigen::RowVectorXf ctx = Eigen::RowVectorXf::Zero(head_dim_);
                if (cached > 0)
                    ctx += weights.head(cached).transpose() * cached_v[l](Eigen::all, cols);
                ctx += weights.tail(i + 1).transpose() * v.topRows(i + 1)(Eigen::all, cols);
                attn.row(i)(cols) = ctx;
            }
        }
        x += attn * layer.wo;

        Eigen::MatrixXf x2 = layer_norm_rows(x, layer.ln2_gain, layer.ln2_bias);
        Eigen::MatrixXf up = (x2 * layer.w_up).rowwise() + layer.b_up.transpose();
        Eigen::MatrixXf activated = up.unaryExpr([](float f) { return gelu(f); });
        x += (activated * layer.w_down).rowwise() + layer.b_down.transpose();
    }
    return x;
}

Eigen::VectorXf TinyTransformer::logits_from_hidden(const Eigen::RowVectorXf& hidden) const {
    return (layer_norm(hidden, lnf_gain_, lnf_bias_) * unembed_).transpose();
}

TokenId TinyTransformer::greedy(const Eigen::VectorXf& logits) const {
    TokenId best = 0;
    float best_value = logits(0);
    for (Eigen::Index i = 1; i < logits.size(); ++i) {
        if (logits(i) > best_value) {
            best_value = logits(i);
            best = static_cast<TokenId>(i);
        }
    }
    return best;
}

void TinyTransformer::prefill(const KvPool& pool, std::span<const int> slots) {
    if (slots.empty()) return;
    Eigen::MatrixXf inputs(slots.size(), config_.model_dim);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const Slot& slot = pool[slots[i]];
        inputs.row(i) = embed(slot.token, slot.position_id);
    }
    encode_rows(inputs, {}, {}, [&](int l, const Eigen::MatrixXf& k, const Eigen::MatrixXf& v) {
        for (std::size_t i = 0; i < slots.size(); ++i) {
            key_cache_[l].row(slots[i]) = k.row(i);
            value_cache_[l].row(slots[i]) = v.row(i);
        }
    });
    for (int s : slots) slot_cached_[s] = true;
}

std::vector<ThreadStep> TinyTransformer::step(const KvPool& pool,
                                              std::span<const ThreadView> views) {
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim_));
    std::vector<ThreadStep> out;
    out.reserve(views.size());

    for (const auto& view : views) {
        for (int s : view.visible)
            if (s != view.last_slot && !slot_cached_[s])
                fail(Errc::UnknownSlot, "visible slot " + std::to_string(s) + " has no cache entry");

        Eigen::RowVectorXf x = embed(view.last_token, view.last_position);
        for (int l = 0; l < config_.layers; ++l) {
            const Layer& layer = layers_[l];
            Eigen::RowVectorXf xn = layer_norm(x, layer.ln1_gain, layer.ln1_bias);
            Eigen::RowVectorXf q = xn * layer.wq;
            key_cache_[l].row(view.last_slot) = xn * layer.wk;
            value_cache_[l].row(view.last_slot) = xn * layer.wv;

            Eigen::RowVectorXf attn(config_.model_dim);
            for (int h = 0; h < config_.heads; ++h) {
                const auto cols = Eigen::seqN(h * head_dim_, head_dim_);
                Eigen::VectorXf scores(view.visible.size());
                for (std::size_t i = 0; i < view.visible.size(); ++i)
                    scores(i) = key_cache_[l].row(view.visible[i])(cols).dot(q(cols)) * inv_sqrt;
                Eigen::VectorXf weights = (scores.array() - scores.maxCoeff()).exp();
                weights /= weights.sum();
                Eigen::RowVectorXf ctx = Eigen::RowVectorXf::Zero(head_dim_);
                for (std::size_t i = 0; i < view.visible.size(); ++i)
                    ctx += weights(i) * value_cache_[l].row(view.visible[i])(cols);
                attn(cols) = ctx;
            }
            x += attn * layer.wo;

            Eigen::RowVectorXf x2 = layer_norm(x, layer.ln2_gain, layer.ln2_bias);
            Eigen::RowVectorXf up = x2 * layer.w_up + layer.b_up.transpose();
            Eigen::RowVectorXf activated = up.unaryExpr([](float f) { return gelu(f); });
            x += activated * layer.w_down + layer.b_down.transpose();
        }
        slot_cached_[view.last_slot] = true;

        ThreadStep result;
        result.thread_id = view.thread_id;
        result.logits = logits_from_hidden(x);
        if (forced_) {
            const std::vector<TokenId>* stream = nullptr;
            if (view.thread_id == 0) {
                stream = &script_.main;
            } else {
                auto it = script_.forks.find(view.block_id);
                if (it == script_.forks.end())
                    fail(Errc::ScriptExhausted, "no script for block " + std::to_string(view.block_id));
                stream = &it->second;
            }
            std::size_t& cursor = cursor_[view.thread_id];
            if (cursor >= stream->size())
                fail(Errc::ScriptExhausted,
                     "script for thread " + std::to_string(view.thread_id) + " exhausted");
            result.token = (*stream)[cursor++];
        } else {
            result.token = greedy(result.logits);
        }
        out.push_back(std::move(result));
    }
    return out;
}

void TinyTransformer::refresh(const KvPool& pool, std::span<const int> logical_order,
                              std::size_t region_begin) {
    if (region_begin >= logical_order.size()) return;
    const int dim = config_.model_dim;

    std::vector<Eigen::MatrixXf> cached_k(config_.layers), cached_v(config_.layers);
    for (int l = 0; l < config_.layers; ++l) {
        cached_k[l].resize(region_begin, dim);
        cached_v[l].resize(region_begin, dim);
        for (std::size_t i = 0; i < region_begin; ++i) {
            if (!slot_cached_[logical_order[i]])
                fail(Errc::UnknownSlot, "refresh prefix slot " + std::to_string(logical_order[i]) +
                                            " has no cache entry");
            cached_k[l].row(i) = key_cache_[l].row(logical_order[i]);
            cached_v[l].row(i) = value_cache_[l].row(logical_order[i]);
        }
    }

    const std::size_t fresh = logical_order.size() - region_begin;
    Eigen::MatrixXf inputs(fresh, dim);
    for (std::size_t i = 0; i < fresh; ++i) {
        const Slot& slot = pool[logical_order[region_begin + i]];
        inputs.row(i) = embed(slot.token, slot.position_id);
    }
    encode_rows(inputs, cached_k, cached_v,
                [&](int l, const Eigen::MatrixXf& k, const Eigen::MatrixXf& v) {
                    for (std::size_t i = 0; i < fresh; ++i) {
                        key_cache_[l].row(logical_order[region_begin + i]) = k.row(i);
                        value_cache_[l].row(logical_order[region_begin + i]) = v.row(i);
                    }
                });
    for (std::size_t i = 0; i < fresh; ++i) slot_cached_[logical_order[region_begin + i]] = true;
}

Eigen::VectorXf TinyTransformer::sequential_reference(std::span<const TokenId> tokens,
                                                      std::span<const int> positions) const {
    if (tokens.empty()) fail(Errc::ContextTooLong, "empty context");
    if (tokens.size() != positions.size())
        fail(Errc::BackendError, "token/position length mismatch");
    if (static_cast<int>(tokens.size()) > config_.max_positions)
        fail(Errc::ContextTooLong, "context length " + std::to_string(tokens.size()) +
                                       " exceeds max positions");
    Eigen::MatrixXf inputs(tokens.size(), config_.model_dim);
    for (std::size_t i = 0; i < tokens.size(); ++i)
        inputs.row(i) = embed(tokens[i], positions[i]);
    Eigen::MatrixXf hidden = encode_rows(inputs, {}, {}, [](int, const Eigen::MatrixXf&,
                                                            const Eigen::MatrixXf&) {});
    return logits_from_hidden(hidden.row(hidden.rows() - 1));
}

}  // namespace pasta
