#include "pasta/interpreter.hpp"

#include <algorithm>

namespace pasta {

PositionStrategy PositionStrategy::from_name(std::string_view name) {
    PositionStrategy s;
    if (name == "fixed") s.kind = StrategyKind::Fixed;
    else if (name == "pred-1x") s.kind = StrategyKind::Pred1X;
    else if (name == "pred-10x") s.kind = StrategyKind::Pred10X;
    else if (name == "oracle-1x") s.kind = StrategyKind::Oracle1X;
    else if (name == "oracle-10x") s.kind = StrategyKind::Oracle10X;
    else if (name == "oracle-exact") s.kind = StrategyKind::OracleExact;
    else fail(Errc::BackendError, "unknown position strategy '" + std::string(name) + "'");
    return s;
}

std::string PositionStrategy::name() const {
    switch (kind) {
        case StrategyKind::Fixed: return "fixed";
        case StrategyKind::Pred1X: return "pred-1x";
        case StrategyKind::Pred10X: return "pred-10x";
        case StrategyKind::Oracle1X: return "oracle-1x";
        case StrategyKind::Oracle10X: return "oracle-10x";
        case StrategyKind::OracleExact: return "oracle-exact";
    }
    return "unknown";
}

int assign_position(const PositionStrategy& strategy, const Promise& promise,
                    std::optional<int> actual_len) {
    auto need_actual = [&]() -> int {
        if (!actual_len)
            fail(Errc::MissingOracleLength,
                 "strategy " + strategy.name() + " requires the realized block length");
        return *actual_len;
    };
    int estimate = 0;
    switch (strategy.kind) {
        case StrategyKind::Fixed: estimate = strategy.fixed_tokens; break;
        case StrategyKind::Pred1X:
        case StrategyKind::Pred10X: estimate = promise.tokens; break;
        case StrategyKind::Oracle1X: estimate = need_actual(); break;
        case StrategyKind::Oracle10X: estimate = round_to_ten(need_actual()); break;
        case StrategyKind::OracleExact: estimate = need_actual(); break;
    }
    return estimate + 1;  // +1 covers the inserted <async> prefix token
}

std::vector<int> visible_slots(const ThreadState& t, const KvPool& pool) {
    std::vector<int> out;
    if (t.thread_id == 0) {
        for (int i = 0; i < pool.size(); ++i)
            if (pool[i].owner == 0) out.push_back(i);
        return out;
    }
    for (int i = 0; i <= t.spawn_slot; ++i)
        if (pool[i].owner == 0) out.push_back(i);
    out.insert(out.end(), t.owned_slots.begin(), t.owned_slots.end());
    return out;
}

std::vector<int> oracle_lengths(const AnnotatedResponse& r, const Tokenizer& tok) {
    std::vector<int> out;
    for (const auto& seg : r.segments) {
        if (const auto* b = std::get_if<AsyncBlock>(&seg))
            out.push_back(static_cast<int>(tok.count_text_tokens(b->inner)) + 1);
    }
    return out;
}

std::vector<int> Transcript::logical_position_gaps() const {
    std::vector<int> out;
    for (std::size_t i = prompt_len == 0 ? 1 : static_cast<std::size_t>(prompt_len);
         i < logical_positions_all.size(); ++i)
        out.push_back(logical_positions_all[i] - logical_positions_all[i - 1] - 1);
    return out;
}

namespace {

// --------------------------------------------------------------------------
// Interleaved-pool interpreter

class RunEngine {
public:
    RunEngine(std::span<const TokenId> prompt, DecoderBackend& backend,
              const PositionStrategy& strategy, const InterpreterConfig& config,
              const Tokenizer& tok)
        : backend_(backend),
          strategy_(strategy),
          config_(config),
          tok_(tok),
          pool_(config.max_sequence_length),
          prompt_(prompt.begin(), prompt.end()) {}

    Transcript execute() {
        seed_prompt();
        int timestep = 1;
        while (true) {
            std::vector<int> active;
            for (std::size_t i = 0; i < threads_.size(); ++i)
                if (threads_[i].status == ThreadState::Status::Active)
                    active.push_back(static_cast<int>(i));
            if (active.empty()) break;
            if (config_.max_decode_steps > 0 && timestep > config_.max_decode_steps)
                fail(Errc::BackendError,
                     "exceeded max_decode_steps " + std::to_string(config_.max_decode_steps));
            step_once(timestep, active);
            ++timestep;
        }
        finalize_trailing();
        return build_transcript();
    }

private:
    void seed_prompt() {
        threads_.push_back(ThreadState{});
        ThreadState& main = threads_[0];
        if (prompt_.empty()) fail(Errc::BackendError, "prompt must be non-empty");
        std::vector<int> prefill_slots;
        for (std::size_t i = 0; i < prompt_.size(); ++i) {
            int slot = pool_.append(prompt_[i], 0, static_cast<int>(i), true);
            logical_.push_back(slot);
            main.owned_slots.push_back(slot);
            if (i + 1 < prompt_.size()) prefill_slots.push_back(slot);
        }
        backend_.prefill(pool_, prefill_slots);
        main.last_token = prompt_.back();
        main.last_slot = static_cast<int>(prompt_.size()) - 1;
        main.last_position = main.last_slot;
        main.next_position = static_cast<int>(prompt_.size());
    }

    void step_once(int timestep, const std::vector<int>& active) {
        std::vector<std::vector<int>> visible(active.size());
        std::vector<ThreadView> views(active.size());
        for (std::size_t i = 0; i < active.size(); ++i) {
            const ThreadState& t = threads_[active[i]];
            visible[i] = visible_slots(t, pool_);
            views[i] = ThreadView{t.thread_id, t.block_id,       t.last_token,
                                  t.last_slot, t.last_position,  t.next_position,
                                  visible[i]};
        }
        stats_.max_concurrent = std::max(stats_.max_concurrent, static_cast<int>(active.size()));

        auto results = backend_.step(pool_, views);
        if (results.size() != views.size())
            fail(Errc::BackendError, "backend returned wrong number of steps");
        for (std::size_t i = 0; i < results.size(); ++i) {
            ThreadState& t = threads_[active[i]];
            if (results[i].thread_id != t.thread_id)
                fail(Errc::BackendError, "backend step order mismatch");
            if (t.thread_id == 0)
                handle_main(timestep, results[i], visible[i]);
            else
                handle_fork(timestep, active[i], results[i], visible[i]);
        }
    }

    DecodeEvent& record_event(int timestep, int thread_id, TokenId token, int slot, int position,
                              bool inserted) {
        DecodeEvent ev;
        ev.timestep = timestep;
        ev.thread_id = thread_id;
        ev.token = token;
        ev.slot = slot;
        ev.position_id = position;
        ev.inserted = inserted;
        ev.post_sync = thread_id == 0 && releases_ > 0 && pending_blocks_.empty();
        events_.push_back(std::move(ev));
        return events_.back();
    }

    void attach_debug(DecodeEvent& ev, const std::vector<int>& visible,
                      std::vector<int> context, Eigen::VectorXf logits) {
        if (!config_.record_debug) return;
        ev.visible = visible;
        ev.logical_context = std::move(context);
        ev.logits = std::move(logits);
    }

    void handle_main(int timestep, ThreadStep& result, const std::vector<int>& visible) {
        ThreadState& main = threads_[0];
        TokenId token = result.token;

        if (token == tok_.eos_id()) {
            auto& ev = record_event(timestep, 0, token, -1, main.next_position, false);
            attach_debug(ev, visible, logical_, std::move(result.logits));
            main.status = ThreadState::Status::Done;
            return;
        }

        if (tok_.is_promise(token)) {
            int promise_slot = land_main(timestep, token, result, visible);
            spawn_fork(timestep, promise_slot, token);
            return;
        }

        if (token == tok_.sync_id()) {
            auto& ev = record_event(timestep, 0, token, -1, -1, false);
            attach_debug(ev, visible, logical_, std::move(result.logits));
            sync_event_ = static_cast<int>(events_.size()) - 1;
            sync_decode_step_ = timestep;
            if (all_pending_done())
                release(timestep);
            else
                main.status = ThreadState::Status::WaitingAtSync;
            return;
        }

        if (tok_.is_control(token)) ++stats_.stray_control_tokens;
        land_main(timestep, token, result, visible);
    }

    // Lands a main-thread token at the current position; returns its slot.
    int land_main(int timestep, TokenId token, ThreadStep& result,
                  const std::vector<int>& visible) {
        ThreadState& main = threads_[0];
        auto& ev = record_event(timestep, 0, token, -1, main.next_position, false);
        attach_debug(ev, visible, logical_, std::move(result.logits));
        int slot = pool_.append(token, 0, main.next_position, false);
        ev.slot = slot;
        main.owned_slots.push_back(slot);
        logical_.push_back(slot);
        main.last_token = token;
        main.last_slot = slot;
        main.last_position = main.next_position;
        ++main.next_position;
        ++main.decoded_tokens;
        return slot;
    }

    void spawn_fork(int timestep, int promise_slot, TokenId promise_token) {
        int live = 0;
        for (const auto& t : threads_)
            if (t.status != ThreadState::Status::Done) ++live;
        if (live + 1 > config_.max_threads)
            fail(Errc::MaxThreadsExceeded,
                 "spawning fork would exceed max_threads " + std::to_string(config_.max_threads));

        const Promise* info = tok_.promise_info(promise_token);
        int block_index = stats_.spawns;

        std::optional<int> actual;
        if (block_index < static_cast<int>(config_.oracle_block_lengths.size()))
            actual = config_.oracle_block_lengths[block_index];
        int offset = assign_position(strategy_, *info, actual);

        ThreadState fork;
        fork.thread_id = static_cast<int>(threads_.size());
        fork.block_id = block_index;
        fork.spawn_slot = promise_slot;
        int open_position = pool_[promise_slot].position_id + 1;
        int open_slot = pool_.append(tok_.async_open_id(), fork.thread_id, open_position, true);
        fork.owned_slots.push_back(open_slot);
        fork.last_token = tok_.async_open_id();
        fork.last_slot = open_slot;
        fork.last_position = open_position;
        fork.next_position = open_position + 1;
        record_event(timestep, fork.thread_id, tok_.async_open_id(), open_slot, open_position,
                     true);

        if (config_.record_debug) spawn_context_.push_back(logical_);
        else spawn_context_.emplace_back();

        // main continues past the block at the estimated offset
        threads_[0].next_position = pool_[promise_slot].position_id + offset + 1;

        gaps_.push_back(PositionGap{block_index, offset, 0});
        pending_blocks_.push_back(block_index);
        block_thread_.push_back(static_cast<int>(threads_.size()));
        threads_.push_back(std::move(fork));
        ++stats_.spawns;
    }

    void handle_fork(int timestep, int thread_index, ThreadStep& result,
                     const std::vector<int>& visible) {
        ThreadState& fork = threads_[thread_index];
        TokenId token = result.token;

        auto& ev = record_event(timestep, fork.thread_id, token, -1, fork.next_position, false);
        if (config_.record_debug) {
            std::vector<int> context = spawn_context_[fork.block_id];
            context.insert(context.end(), fork.owned_slots.begin(), fork.owned_slots.end());
            attach_debug(ev, visible, std::move(context), std::move(result.logits));
        }

        int slot = pool_.append(token, fork.thread_id, fork.next_position, false);
        ev.slot = slot;
        fork.owned_slots.push_back(slot);
        fork.last_token = token;
        fork.last_slot = slot;
        fork.last_position = fork.next_position;
        ++fork.next_position;
        ++fork.decoded_tokens;

        if (token == tok_.async_close_id()) {
            fork.status = ThreadState::Status::Done;
            gaps_[fork.block_id].realized = static_cast<int>(fork.owned_slots.size());
            if (threads_[0].status == ThreadState::Status::WaitingAtSync && all_pending_done())
                release(timestep);
            return;
        }
        // stray tags inside a fork are plain text, never nested spawns
        if (tok_.is_control(token)) ++stats_.stray_control_tokens;
        if (fork.decoded_tokens > config_.fork_token_cap)
            fail(Errc::RunawayFork, "fork " + std::to_string(fork.thread_id) + " exceeded " +
                                        std::to_string(config_.fork_token_cap) +
                                        " tokens without </async>");
    }

    bool all_pending_done() const {
        for (int block : pending_blocks_)
            if (threads_[block_thread_[block]].status != ThreadState::Status::Done) return false;
        return true;
    }

    void merge_pending_into_logical(std::size_t* region_begin_out) {
        std::vector<int> merged;
        merged.reserve(logical_.size() + 64);
        int first_promise_slot = pending_blocks_.empty()
                                     ? -1
                                     : threads_[block_thread_[pending_blocks_.front()]].spawn_slot;
        std::size_t region_begin = logical_.size();
        for (int slot : logical_) {
            merged.push_back(slot);
            if (slot == first_promise_slot) region_begin = merged.size();
            for (int block : pending_blocks_) {
                const ThreadState& fork = threads_[block_thread_[block]];
                if (fork.spawn_slot == slot) {
                    for (int s : fork.owned_slots) {
                        pool_[s].owner = 0;
                        merged.push_back(s);
                    }
                }
            }
        }
        logical_ = std::move(merged);
        if (region_begin_out) *region_begin_out = region_begin;
    }

    void release(int timestep) {
        ThreadState& main = threads_[0];
        int merged_max_position = -1;
        for (int block : pending_blocks_) {
            const ThreadState& fork = threads_[block_thread_[block]];
            for (int s : fork.owned_slots)
                merged_max_position = std::max(merged_max_position, pool_[s].position_id);
        }

        std::size_t region_begin = logical_.size();
        if (!pending_blocks_.empty()) {
            merge_pending_into_logical(&region_begin);
            // re-encode everything whose visibility just widened
            backend_.refresh(pool_, logical_, region_begin);
        }

        // the sync token finally enters the pool, placed after the last
        // finalized block position
        int sync_position = std::max(main.next_position, merged_max_position + 1);
        int sync_slot = pool_.append(tok_.sync_id(), 0, sync_position, true);
        logical_.push_back(sync_slot);
        main.owned_slots.push_back(sync_slot);
        events_[sync_event_].slot = sync_slot;
        events_[sync_event_].position_id = sync_position;

        main.last_token = tok_.sync_id();
        main.last_slot = sync_slot;
        main.last_position = sync_position;
        main.next_position = sync_position + 1;
        main.status = ThreadState::Status::Active;

        stats_.sync_waits.push_back(timestep - sync_decode_step_);
        assign_ranks();
        pending_blocks_.clear();
        ++releases_;
    }

    void finalize_trailing() {
        if (!pending_blocks_.empty()) {
            merge_pending_into_logical(nullptr);
            pending_blocks_.clear();
        }
        assign_ranks();
    }

    void assign_ranks() {
        for (std::size_t i = 0; i < logical_.size(); ++i)
            pool_[logical_[i]].logical_rank = static_cast<int>(i);
    }

    Transcript build_transcript() {
        Transcript out;
        out.events = std::move(events_);
        out.prompt_len = static_cast<int>(prompt_.size());
        out.logical_slots = logical_;
        for (std::size_t i = prompt_.size(); i < logical_.size(); ++i)
            out.logical_tokens.push_back(pool_[logical_[i]].token);
        for (int slot : logical_) out.logical_positions_all.push_back(pool_[slot].position_id);
        out.final_text = tok_.detokenize(out.logical_tokens);
        try {
            out.realized = parse(out.final_text);
        } catch (const Error&) {
            out.realized = std::nullopt;
        }
        int total = 0;
        for (const auto& ev : out.events)
            if (!ev.inserted && ev.token != tok_.eos_id()) total = std::max(total, ev.timestep);
        out.total_timesteps = total;
        out.stats = stats_;
        out.gaps = gaps_;
        out.pool = std::move(pool_);
        return out;
    }

    DecoderBackend& backend_;
    PositionStrategy strategy_;
    InterpreterConfig config_;
    const Tokenizer& tok_;

    KvPool pool_;
    std::vector<TokenId> prompt_;
    std::vector<ThreadState> threads_;
    std::vector<int> logical_;          // finalized + main tail, logical order
    std::vector<int> pending_blocks_;   // blocks spawned since the last release
    std::vector<int> block_thread_;     // block index -> thread index
    std::vector<std::vector<int>> spawn_context_;  // block index -> logical prefix at spawn
    std::vector<DecodeEvent> events_;
    std::vector<PositionGap> gaps_;
    TranscriptStats stats_;
    int sync_event_ = -1;
    int sync_decode_step_ = 0;
    int releases_ = 0;
};

// --------------------------------------------------------------------------
// Naive batched-row interpreter (differential oracle)

struct NaiveEntry {
    TokenId token;
    int position;
    int id;  // synthetic slot id, decode order
};

struct NaiveThread {
    int thread_id = 0;
    int block_id = -1;
    int row = -1;
    ThreadState::Status status = ThreadState::Status::Active;
    std::size_t prefix_len = 0;  // copied prefix length (fork rows)
    TokenId last_token = -1;
    int last_id = -1;
    int last_position = 0;
    int next_position = 0;
    int decoded_tokens = 0;
};

class NaiveEngine {
public:
    NaiveEngine(std::span<const TokenId> prompt, DecoderBackend& backend,
                const PositionStrategy& strategy, const InterpreterConfig& config,
                const Tokenizer& tok)
        : backend_(backend), strategy_(strategy), config_(config), tok_(tok),
          prompt_(prompt.begin(), prompt.end()) {
        rows_.resize(std::max(1, config.max_threads));
    }

    Transcript execute() {
        seed();
        int timestep = 1;
        while (true) {
            std::vector<int> active;
            for (std::size_t i = 0; i < threads_.size(); ++i)
                if (threads_[i].status == ThreadState::Status::Active)
                    active.push_back(static_cast<int>(i));
            if (active.empty()) break;
            if (config_.max_decode_steps > 0 && timestep > config_.max_decode_steps)
                fail(Errc::BackendError, "exceeded max_decode_steps");
            step_once(timestep, active);
            ++timestep;
        }
        if (!pending_blocks_.empty()) {
            merge_blocks();
            pending_blocks_.clear();
        }
        return build_transcript();
    }

private:
    struct Row {
        bool in_use = false;
        std::vector<NaiveEntry> entries;
    };

    void seed() {
        if (prompt_.empty()) fail(Errc::BackendError, "prompt must be non-empty");
        NaiveThread main;
        main.thread_id = 0;
        main.row = 0;
        rows_[0].in_use = true;
        std::vector<int> prefill_ids;
        for (std::size_t i = 0; i < prompt_.size(); ++i) {
            rows_[0].entries.push_back(NaiveEntry{prompt_[i], static_cast<int>(i), next_id_++});
            if (i + 1 < prompt_.size()) prefill_ids.push_back(rows_[0].entries.back().id);
        }
        // the scripted differential backend ignores cache state; a pool is
        // still passed for contract parity
        backend_.prefill(scratch_pool_, prefill_ids);
        main.last_token = prompt_.back();
        main.last_id = rows_[0].entries.back().id;
        main.last_position = static_cast<int>(prompt_.size()) - 1;
        main.next_position = static_cast<int>(prompt_.size());
        threads_.push_back(main);
    }

    void step_once(int timestep, const std::vector<int>& active) {
        std::vector<std::vector<int>> visible(active.size());
        std::vector<ThreadView> views(active.size());
        for (std::size_t i = 0; i < active.size(); ++i) {
            const NaiveThread& t = threads_[active[i]];
            visible[i].reserve(rows_[t.row].entries.size());
            for (const auto& e : rows_[t.row].entries) visible[i].push_back(e.id);
            views[i] = ThreadView{t.thread_id, t.block_id,      t.last_token,
                                  t.last_id,   t.last_position, t.next_position,
                                  visible[i]};
        }
        stats_.max_concurrent = std::max(stats_.max_concurrent, static_cast<int>(active.size()));
        auto results = backend_.step(scratch_pool_, views);
        if (results.size() != views.size())
            fail(Errc::BackendError, "backend returned wrong number of steps");
        for (std::size_t i = 0; i < results.size(); ++i) {
            NaiveThread& t = threads_[active[i]];
            if (t.thread_id == 0)
                handle_main(timestep, results[i].token);
            else
                handle_fork(timestep, active[i], results[i].token);
        }
    }

    void record(int timestep, int thread_id, TokenId token, int id, int position, bool inserted) {
        DecodeEvent ev;
        ev.timestep = timestep;
        ev.thread_id = thread_id;
        ev.token = token;
        ev.slot = id;
        ev.position_id = position;
        ev.inserted = inserted;
        ev.post_sync = thread_id == 0 && releases_ > 0 && pending_blocks_.empty();
        events_.push_back(std::move(ev));
    }

    void land(NaiveThread& t, int timestep, TokenId token) {
        record(timestep, t.thread_id, token, next_id_, t.next_position, false);
        rows_[t.row].entries.push_back(NaiveEntry{token, t.next_position, next_id_++});
        t.last_token = token;
        t.last_id = rows_[t.row].entries.back().id;
        t.last_position = t.next_position;
        ++t.next_position;
        ++t.decoded_tokens;
    }

    void handle_main(int timestep, TokenId token) {
        NaiveThread& main = threads_[0];
        if (token == tok_.eos_id()) {
            record(timestep, 0, token, -1, main.next_position, false);
            main.status = ThreadState::Status::Done;
            return;
        }
        if (tok_.is_promise(token)) {
            land(main, timestep, token);
            spawn(timestep, token);
            return;
        }
        if (token == tok_.sync_id()) {
            record(timestep, 0, token, -1, -1, false);
            sync_event_ = static_cast<int>(events_.size()) - 1;
            sync_decode_step_ = timestep;
            if (all_pending_done())
                release(timestep);
            else
                main.status = ThreadState::Status::WaitingAtSync;
            return;
        }
        if (tok_.is_control(token)) ++stats_.stray_control_tokens;
        land(main, timestep, token);
    }

    void spawn(int timestep, TokenId promise_token) {
        int free_row = -1;
        for (std::size_t r = 1; r < rows_.size(); ++r)
            if (!rows_[r].in_use) {
                free_row = static_cast<int>(r);
                break;
            }
        if (free_row < 0)
            fail(Errc::RowExhausted, "no free batch row for a new decoding thread (" +
                                         std::to_string(rows_.size()) + " preallocated)");

        NaiveThread& main = threads_[0];
        const Promise* info = tok_.promise_info(promise_token);
        int block_index = stats_.spawns;
        std::optional<int> actual;
        if (block_index < static_cast<int>(config_.oracle_block_lengths.size()))
            actual = config_.oracle_block_lengths[block_index];
        int offset = assign_position(strategy_, *info, actual);

        // duplicate the whole prefix into the fork's row
        Row& row = rows_[free_row];
        row.in_use = true;
        row.entries.clear();
        for (const auto& e : rows_[0].entries)
            row.entries.push_back(NaiveEntry{e.token, e.position, next_id_++});
        stats_.kv_entries_copied += static_cast<long>(rows_[0].entries.size());

        NaiveThread fork;
        fork.thread_id = static_cast<int>(threads_.size());
        fork.block_id = block_index;
        fork.row = free_row;
        fork.prefix_len = row.entries.size();
        int promise_position = main.last_position;
        int open_position = promise_position + 1;
        row.entries.push_back(NaiveEntry{tok_.async_open_id(), open_position, next_id_++});
        record(timestep, fork.thread_id, tok_.async_open_id(), row.entries.back().id,
               open_position, true);
        fork.last_token = tok_.async_open_id();
        fork.last_id = row.entries.back().id;
        fork.last_position = open_position;
        fork.next_position = open_position + 1;

        main.next_position = promise_position + offset + 1;

        gaps_.push_back(PositionGap{block_index, offset, 0});
        pending_blocks_.push_back(block_index);
        block_thread_.push_back(static_cast<int>(threads_.size()));
        block_promise_id_.push_back(main.last_id);
        threads_.push_back(fork);
        ++stats_.spawns;
    }

    void handle_fork(int timestep, int thread_index, TokenId token) {
        NaiveThread& fork = threads_[thread_index];
        land(fork, timestep, token);
        if (token == tok_.async_close_id()) {
            fork.status = ThreadState::Status::Done;
            gaps_[fork.block_id].realized =
                static_cast<int>(rows_[fork.row].entries.size() - fork.prefix_len);
            if (threads_[0].status == ThreadState::Status::WaitingAtSync && all_pending_done())
                release(timestep);
            return;
        }
        if (tok_.is_control(token)) ++stats_.stray_control_tokens;
        if (fork.decoded_tokens > config_.fork_token_cap)
            fail(Errc::RunawayFork, "fork exceeded token cap without </async>");
    }

    bool all_pending_done() const {
        for (int block : pending_blocks_)
            if (threads_[block_thread_[block]].status != ThreadState::Status::Done) return false;
        return true;
    }

    int merge_blocks() {
        // copy each fork's continuation into the main row after its promise
        int merged_max_position = -1;
        auto& main_entries = rows_[0].entries;
        for (int block : pending_blocks_) {
            NaiveThread& fork = threads_[block_thread_[block]];
            Row& row = rows_[fork.row];
            auto promise_it = std::find_if(
                main_entries.begin(), main_entries.end(),
                [&](const NaiveEntry& e) { return e.id == block_promise_id_[block]; });
            std::vector<NaiveEntry> continuation(row.entries.begin() + fork.prefix_len,
                                                 row.entries.end());
            for (const auto& e : continuation)
                merged_max_position = std::max(merged_max_position, e.position);
            stats_.kv_entries_copied += static_cast<long>(continuation.size());
            main_entries.insert(promise_it + 1, continuation.begin(), continuation.end());
            row.in_use = false;  // terminated thread's row becomes uninitialized
            row.entries.clear();
        }
        return merged_max_position;
    }

    void release(int timestep) {
        NaiveThread& main = threads_[0];
        int merged_max_position = merge_blocks();
        int sync_position = std::max(main.next_position, merged_max_position + 1);
        rows_[0].entries.push_back(NaiveEntry{tok_.sync_id(), sync_position, next_id_++});
        events_[sync_event_].slot = rows_[0].entries.back().id;
        events_[sync_event_].position_id = sync_position;
        main.last_token = tok_.sync_id();
        main.last_id = rows_[0].entries.back().id;
        main.last_position = sync_position;
        main.next_position = sync_position + 1;
        main.status = ThreadState::Status::Active;
        stats_.sync_waits.push_back(timestep - sync_decode_step_);
        pending_blocks_.clear();
        ++releases_;
    }

    Transcript build_transcript() {
        Transcript out;
        out.events = std::move(events_);
        out.prompt_len = static_cast<int>(prompt_.size());
        for (const auto& e : rows_[0].entries) {
            out.logical_slots.push_back(e.id);
            out.logical_positions_all.push_back(e.position);
        }
        for (std::size_t i = prompt_.size(); i < rows_[0].entries.size(); ++i)
            out.logical_tokens.push_back(rows_[0].entries[i].token);
        out.final_text = tok_.detokenize(out.logical_tokens);
        try {
            out.realized = parse(out.final_text);
        } catch (const Error&) {
            out.realized = std::nullopt;
        }
        int total = 0;
        for (const auto& ev : out.events)
            if (!ev.inserted && ev.token != tok_.eos_id()) total = std::max(total, ev.timestep);
        out.total_timesteps = total;
        out.stats = stats_;
        out.gaps = gaps_;
        return out;
    }

    DecoderBackend& backend_;
    PositionStrategy strategy_;
    InterpreterConfig config_;
    const Tokenizer& tok_;

    std::vector<TokenId> prompt_;
    std::vector<Row> rows_;
    std::vector<NaiveThread> threads_;
    std::vector<int> pending_blocks_;
    std::vector<int> block_thread_;
    std::vector<int> block_promise_id_;
    std::vector<DecodeEvent> events_;
    std::vector<PositionGap> gaps_;
    TranscriptStats stats_;
    KvPool scratch_pool_{0};
    int next_id_ = 0;
    int sync_event_ = -1;
    int sync_decode_step_ = 0;
    int releases_ = 0;
};

}  // namespace

Transcript run(std::span<const TokenId> prompt, DecoderBackend& backend,
               const PositionStrategy& strategy, const InterpreterConfig& config,
               const Tokenizer& tok) {
    return RunEngine(prompt, backend, strategy, config, tok).execute();
}

Transcript naive_run(std::span<const TokenId> prompt, DecoderBackend& backend,
                     const PositionStrategy& strategy, const InterpreterConfig& config,
                     const Tokenizer& tok) {
    return NaiveEngine(prompt, backend, strategy, config, tok).execute();
}

BenchResult bench(std::span<const TokenId> prompt, const AnnotatedResponse& program,
                  const Tokenizer& tok, const PositionStrategy& strategy,
                  const InterpreterConfig& config, std::chrono::microseconds step_latency,
                  const std::string& baseline_text) {
    using clock = std::chrono::steady_clock;

    std::string baseline = baseline_text.empty() ? strip(program) : baseline_text;
    Script baseline_script;
    for (TokenId id : tok.tokenize_text(baseline)) baseline_script.main.push_back(id);
    baseline_script.main.push_back(tok.eos_id());
    Script test_script = build_script(program, tok);

    InterpreterConfig cfg = config;
    if (cfg.oracle_block_lengths.empty()) cfg.oracle_block_lengths = oracle_lengths(program, tok);

    auto time_run = [&](const Script& script) {
        // decode twice, time the second run only
        double seconds = 0.0;
        for (int pass = 0; pass < 2; ++pass) {
            ScriptedBackend backend(script, step_latency);
            auto start = clock::now();
            run(prompt, backend, strategy, cfg, tok);
            auto stop = clock::now();
            seconds = std::chrono::duration<double>(stop - start).count();
        }
        return seconds;
    };

    BenchResult result;
    result.baseline_tokens = static_cast<int>(baseline_script.main.size()) - 1;
    result.baseline_seconds = time_run(baseline_script);
    result.test_seconds = time_run(test_script);
    result.realized_speedup = result.baseline_seconds / result.test_seconds;

    DependencyGraph graph = build_graph(program, tok);
    result.critical_path = critical_path(graph);
    result.theoretical_speedup = theoretical_speedup(result.baseline_tokens, graph);
    return result;
}

}  // namespace pasta
