#include <doctest.h>

#include <random>
#include <set>

#include "pasta/interpreter.hpp"

#include "fixtures.hpp"
#include "testutil.hpp"

using namespace pasta;

namespace {

struct Setup {
    Tokenizer tok = Tokenizer::whitespace();
    std::vector<TokenId> prompt;
    InterpreterConfig config;

    Setup() { prompt = tok.tokenize_text("user query ?"); }

    Transcript run_program(const AnnotatedResponse& program,
                           PositionStrategy strategy = PositionStrategy{},
                           bool debug = false) {
        InterpreterConfig cfg = config;
        cfg.record_debug = debug;
        cfg.oracle_block_lengths = oracle_lengths(program, tok);
        ScriptedBackend backend(build_script(program, tok));
        return run(prompt, backend, strategy, cfg, tok);
    }

    Transcript naive_program(const AnnotatedResponse& program,
                             PositionStrategy strategy = PositionStrategy{}) {
        InterpreterConfig cfg = config;
        cfg.oracle_block_lengths = oracle_lengths(program, tok);
        ScriptedBackend backend(build_script(program, tok));
        return naive_run(prompt, backend, strategy, cfg, tok);
    }
};

bool streams_equal(const Transcript& a, const Transcript& b) {
    if (a.events.size() != b.events.size()) return false;
    for (std::size_t i = 0; i < a.events.size(); ++i) {
        const auto& x = a.events[i];
        const auto& y = b.events[i];
        if (x.timestep != y.timestep || x.thread_id != y.thread_id || x.token != y.token ||
            x.position_id != y.position_id || x.inserted != y.inserted)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("run: unannotated replay is sequential") {
    Setup s;
    auto t = s.run_program(parse("A B"));
    CHECK(t.total_timesteps == 2);
    CHECK(t.final_text == "A B");
    CHECK(t.stats.spawns == 0);
    CHECK(t.stats.max_concurrent == 1);
}

TEST_CASE("run: single-fork worked example") {
    Setup s;
    auto t = s.run_program(parse(fixtures::kSingleFork));

    CHECK(t.total_timesteps == 8);
    CHECK(t.final_text == fixtures::kSingleFork);
    REQUIRE(t.realized.has_value());
    CHECK(*t.realized == parse(fixtures::kSingleFork));
    CHECK(t.stats.spawns == 1);
    CHECK(t.stats.max_concurrent == 2);

    // the fork's first decoded token lands one step after its promise
    int promise_step = -1, first_fork_step = -1;
    for (const auto& ev : t.events) {
        if (ev.thread_id == 0 && s.tok.is_promise(ev.token)) promise_step = ev.timestep;
        if (ev.thread_id == 1 && !ev.inserted && first_fork_step < 0)
            first_fork_step = ev.timestep;
    }
    CHECK(promise_step == 3);
    CHECK(first_fork_step == 4);

    // main decodes F in parallel at t4, the sync at t5, resumes with G at t8
    std::vector<std::pair<int, std::string>> main_events;
    for (const auto& ev : t.events)
        if (ev.thread_id == 0) main_events.emplace_back(ev.timestep, s.tok.surface(ev.token));
    CHECK(main_events[3] == std::pair<int, std::string>{4, "F"});
    CHECK(main_events[4] == std::pair<int, std::string>{5, "<sync/>"});
    CHECK(main_events[5] == std::pair<int, std::string>{8, "G"});
    CHECK(t.stats.sync_waits == std::vector<int>{2});
}

TEST_CASE("run: overlapping forks wait for the later close") {
    Setup s;
    auto t = s.run_program(parse(fixtures::kTwoFork));
    CHECK(t.total_timesteps == 15);
    CHECK(t.final_text == fixtures::kTwoFork);
    CHECK(t.stats.max_concurrent == 3);

    int close1 = -1, close2 = -1, resume = -1, sync_step = -1;
    for (const auto& ev : t.events) {
        if (ev.token == s.tok.async_close_id()) (ev.thread_id == 1 ? close1 : close2) = ev.timestep;
        if (ev.thread_id == 0 && ev.token == s.tok.sync_id()) sync_step = ev.timestep;
        if (ev.thread_id == 0 && s.tok.surface(ev.token) == "T") resume = ev.timestep;
    }
    CHECK(close1 == 13);
    CHECK(close2 == 14);
    CHECK(sync_step == 4);
    // main resumes exactly one step after the last close
    CHECK(resume == std::max(close1, close2) + 1);
}

TEST_CASE("run: total timesteps equal the dependency-graph critical path") {
    Setup s;
    std::mt19937_64 rng(41);
    for (int i = 0; i < 100; ++i) {
        auto program = testutil::random_program(rng);
        auto t = s.run_program(program.tree);
        auto g = build_graph(program.tree, s.tok);
        CHECK(t.total_timesteps == critical_path(g));
    }
}

TEST_CASE("run: logical finalization reproduces the serialized program") {
    Setup s;
    std::mt19937_64 rng(43);
    for (int i = 0; i < 60; ++i) {
        auto program = testutil::random_program(rng);
        auto t = s.run_program(program.tree);
        CHECK(t.final_text == program.text);
        REQUIRE(t.realized.has_value());
        CHECK(*t.realized == program.tree);
        // logical ranks cover the pool as a permutation
        std::set<int> ranks;
        for (int slot = 0; slot < t.pool.size(); ++slot) ranks.insert(t.pool[slot].logical_rank);
        CHECK(static_cast<int>(ranks.size()) == t.pool.size());
        CHECK(*ranks.begin() == 0);
        CHECK(*ranks.rbegin() == t.pool.size() - 1);
    }
}

TEST_CASE("run: pool slots append in decode order, one per thread per step") {
    Setup s;
    auto t = s.run_program(parse(fixtures::kTwoFork));

    int last_slot = -1;
    std::set<std::pair<int, int>> seen;
    for (const auto& ev : t.events) {
        if (ev.slot < 0) continue;
        if (ev.thread_id == 0 && ev.token == s.tok.sync_id()) continue;  // lands at release
        CHECK(ev.slot > last_slot);
        last_slot = ev.slot;
        if (!ev.inserted) CHECK(!seen.contains({ev.thread_id, ev.timestep}));
        seen.insert({ev.thread_id, ev.timestep});
    }

    // interleaving: while both forks run, their slots alternate
    std::vector<int> owners;
    for (int slot = 0; slot < t.pool.size(); ++slot)
        if (t.pool[slot].thread_id != 0 && !t.pool[slot].inserted)
            owners.push_back(t.pool[slot].thread_id);
    int alternations = 0;
    for (std::size_t i = 1; i < owners.size(); ++i)
        if (owners[i] != owners[i - 1]) ++alternations;
    CHECK(alternations >= 18);  // forks 1 and 2 interleave through t4..t13
}

TEST_CASE("run: sync with no open forks is a zero-wait no-op") {
    Setup s;
    auto t = s.run_program(parse("a <sync/> b"));
    CHECK(t.total_timesteps == 3);
    CHECK(t.final_text == "a <sync/> b");
    CHECK(t.stats.sync_waits == std::vector<int>{0});
    // positions stay contiguous
    for (int gap : t.logical_position_gaps()) CHECK(gap == 0);
}

TEST_CASE("run: trailing forks finish under an implicit sync") {
    Setup s;
    auto program = parse("lead <promise topic=\"x\" tokens=\"10\"/><async>c1 c2 c3 c4</async>");
    auto t = s.run_program(program);
    // main: lead t1, promise t2, EOS t3; fork: t3..t7
    CHECK(t.total_timesteps == 7);
    CHECK(t.final_text == serialize(program));
    REQUIRE(t.realized.has_value());
    CHECK(*t.realized == program);
}

TEST_CASE("visible_slots: fork sees own slots and pre-spawn main only") {
    Setup s;
    auto t = s.run_program(parse(fixtures::kTwoFork), PositionStrategy{}, /*debug=*/true);

    // fork1's second decoded token: the analog of the worked attention figure
    const DecodeEvent* target = nullptr;
    int fork1_decodes = 0;
    for (const auto& ev : t.events) {
        if (ev.thread_id == 1 && !ev.inserted) {
            if (++fork1_decodes == 2) {
                target = &ev;
                break;
            }
        }
    }
    REQUIRE(target != nullptr);

    int promise1_slot = -1, promise2_slot = -1, open2_slot = -1, sync_slot = -1;
    for (const auto& ev : t.events) {
        if (ev.thread_id == 0 && s.tok.is_promise(ev.token)) {
            if (promise1_slot < 0) promise1_slot = ev.slot;
            else promise2_slot = ev.slot;
        }
        if (ev.thread_id == 2 && ev.inserted) open2_slot = ev.slot;
        if (ev.thread_id == 0 && ev.token == s.tok.sync_id()) sync_slot = ev.slot;
    }
    std::set<int> visible(target->visible.begin(), target->visible.end());
    CHECK(visible.contains(promise1_slot));       // its own promise
    CHECK(!visible.contains(promise2_slot));      // main token after spawn
    CHECK(!visible.contains(open2_slot));         // sibling fork's prefix token
    CHECK(!visible.contains(sync_slot));          // deferred sync
    for (int slot : visible) {
        bool own = t.pool[slot].thread_id == 1;
        bool pre_spawn = slot <= promise1_slot && t.pool[slot].thread_id == 0;
        CHECK((own || pre_spawn));
    }

    // main between promise and sync sees no fork slot
    for (const auto& ev : t.events) {
        if (ev.thread_id == 0 && !ev.post_sync && ev.timestep > 1)
            for (int slot : ev.visible) CHECK(t.pool[slot].thread_id == 0);
    }

    // the first token after the release sees every prior slot
    for (const auto& ev : t.events) {
        if (ev.thread_id == 0 && ev.post_sync && !ev.visible.empty()) {
            CHECK(ev.visible.size() == static_cast<std::size_t>(ev.slot));
            break;
        }
    }
}

TEST_CASE("mask soundness: instrumented backend sees no forbidden slots") {
    Setup s;
    std::mt19937_64 rng(47);
    for (int i = 0; i < 50; ++i) {
        auto program = testutil::random_program(rng);
        InterpreterConfig cfg = s.config;
        cfg.oracle_block_lengths = oracle_lengths(program.tree, s.tok);
        testutil::MaskCheckingBackend<ScriptedBackend> backend(
            ScriptedBackend(build_script(program.tree, s.tok)), s.tok);
        run(s.prompt, backend, PositionStrategy{}, cfg, s.tok);
        CHECK(backend.ok());
        CHECK(backend.steps_checked() > 0);
    }
}

TEST_CASE("assign_position: offsets per strategy") {
    Promise promise{"x", 10, 0};

    CHECK(assign_position(PositionStrategy{StrategyKind::Fixed, 40}, promise) == 41);
    CHECK(assign_position(PositionStrategy{StrategyKind::Pred1X}, promise) == 11);
    CHECK(assign_position(PositionStrategy{StrategyKind::Pred10X}, promise) == 11);
    CHECK(assign_position(PositionStrategy{StrategyKind::Oracle1X}, promise, 9) == 10);
    CHECK(assign_position(PositionStrategy{StrategyKind::Oracle10X}, promise, 9) == 11);
    CHECK(assign_position(PositionStrategy{StrategyKind::OracleExact}, promise, 9) == 10);
    CHECK_THROWS_AS(assign_position(PositionStrategy{StrategyKind::OracleExact}, promise), Error);

    CHECK(PositionStrategy::from_name("pred-10x").kind == StrategyKind::Pred10X);
    CHECK(PositionStrategy::from_name("oracle-exact").name() == "oracle-exact");
}

TEST_CASE("positions: oracle-exact leaves no gaps, estimates gap by arithmetic") {
    Setup s;

    SUBCASE("oracle-exact is contiguous") {
        std::mt19937_64 rng(53);
        for (int i = 0; i < 30; ++i) {
            auto program = testutil::random_program(rng);
            auto t = s.run_program(program.tree, PositionStrategy{StrategyKind::OracleExact});
            for (int gap : t.logical_position_gaps()) CHECK(gap == 0);
            for (const auto& gap : t.gaps) CHECK(gap.gap() == 0);
        }
    }

    SUBCASE("pred-10x gap equals estimate+1 minus realized") {
        // tokens="10", realized block of 8 inner + close (+ inserted open)
        auto program = parse(
            "A <promise topic=\"x\" tokens=\"10\"/><async>i1 i2 i3 i4 i5 i6 i7 i8</async> "
            "next <sync/> end");
        auto t = s.run_program(program, PositionStrategy{StrategyKind::Pred10X});
        REQUIRE(t.gaps.size() == 1);
        CHECK(t.gaps[0].offset == 11);
        CHECK(t.gaps[0].realized == 10);
        CHECK(t.gaps[0].gap() == 1);

        auto fixed = s.run_program(program, PositionStrategy{StrategyKind::Fixed, 40});
        CHECK(fixed.gaps[0].offset == 41);
        CHECK(fixed.gaps[0].gap() == 31);

        // the realized seam in the logical sequence matches the block gap
        auto gaps = t.logical_position_gaps();
        int seam_total = 0;
        for (int gap : gaps) seam_total += gap;
        CHECK(seam_total == t.gaps[0].gap());
    }
}

TEST_CASE("differential: run and naive_run produce identical streams") {
    Setup s;
    std::mt19937_64 rng(59);
    for (int i = 0; i < 100; ++i) {
        auto program = testutil::random_program(rng);
        auto strategy = PositionStrategy{};
        switch (rng() % 3) {
            case 0: strategy.kind = StrategyKind::Pred10X; break;
            case 1: strategy.kind = StrategyKind::OracleExact; break;
            default: strategy.kind = StrategyKind::Fixed; break;
        }
        auto fast = s.run_program(program.tree, strategy);
        auto naive = s.naive_program(program.tree, strategy);
        CHECK(streams_equal(fast, naive));
        CHECK(fast.final_text == naive.final_text);
        CHECK(fast.total_timesteps == naive.total_timesteps);
        CHECK(fast.stats.sync_waits == naive.stats.sync_waits);
    }
}

TEST_CASE("differential: the naive interpreter pays for prefix copies") {
    Setup s;
    auto fast = s.run_program(parse(fixtures::kTwoFork));
    auto naive = s.naive_program(parse(fixtures::kTwoFork));
    CHECK(fast.stats.kv_entries_copied == 0);
    CHECK(naive.stats.kv_entries_copied > 0);
}

TEST_CASE("sync correctness on random programs") {
    Setup s;
    std::mt19937_64 rng(61);
    for (int i = 0; i < 50; ++i) {
        auto program = testutil::random_program(rng);
        auto t = s.run_program(program.tree);

        std::map<int, int> close_step;  // thread -> close timestep
        int spawned_before_sync = 0;
        std::vector<int> spawn_order_threads;
        for (const auto& ev : t.events)
            if (ev.inserted && ev.thread_id != 0) spawn_order_threads.push_back(ev.thread_id);
        for (const auto& ev : t.events)
            if (ev.token == s.tok.async_close_id() && ev.thread_id != 0)
                close_step[ev.thread_id] = ev.timestep;

        int released_through = 0;
        for (std::size_t e = 0; e < t.events.size(); ++e) {
            const auto& ev = t.events[e];
            if (ev.thread_id == 0 && ev.token == s.tok.sync_id()) {
                int barrier = ev.timestep;
                while (released_through < spawned_before_sync) ++released_through;
                // every fork spawned before this sync must close before main resumes
                int relevant_max = ev.timestep;
                for (int i2 = 0; i2 < spawned_before_sync; ++i2)
                    relevant_max = std::max(relevant_max, close_step[spawn_order_threads[i2]]);
                // find main's next decoded token
                for (std::size_t k = e + 1; k < t.events.size(); ++k) {
                    const auto& next = t.events[k];
                    if (next.thread_id == 0 && !next.inserted) {
                        CHECK(next.timestep == relevant_max + 1);
                        break;
                    }
                }
                (void)barrier;
            }
            if (ev.inserted && ev.thread_id != 0) ++spawned_before_sync;
        }
    }
}

TEST_CASE("errors: pool overflow, thread caps, runaway forks") {
    Setup s;

    SUBCASE("pool overflow") {
        InterpreterConfig cfg = s.config;
        cfg.max_sequence_length = 8;
        ScriptedBackend backend(build_script(parse("a b c d e f g h i j"), s.tok));
        CHECK_THROWS_WITH_AS(run(s.prompt, backend, PositionStrategy{}, cfg, s.tok),
                             doctest::Contains("max_sequence_length"), Error);
    }

    SUBCASE("max threads exceeded") {
        auto program = parse(
            "a <promise topic=\"p\" tokens=\"10\"/><async>x1 x2 x3 x4 x5 x6</async>"
            "<promise topic=\"q\" tokens=\"10\"/><async>y1 y2 y3 y4 y5 y6</async>"
            "<promise topic=\"r\" tokens=\"10\"/><async>z1 z2 z3 z4 z5 z6</async> <sync/> b");
        InterpreterConfig cfg = s.config;
        cfg.max_threads = 3;  // main + two forks
        ScriptedBackend backend(build_script(program, s.tok));
        try {
            run(s.prompt, backend, PositionStrategy{}, cfg, s.tok);
            FAIL("expected MaxThreadsExceeded");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::MaxThreadsExceeded);
        }

        ScriptedBackend naive_backend(build_script(program, s.tok));
        try {
            naive_run(s.prompt, naive_backend, PositionStrategy{}, cfg, s.tok);
            FAIL("expected RowExhausted");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::RowExhausted);
        }
    }

    SUBCASE("runaway fork") {
        auto program = parse(
            "a <promise topic=\"p\" tokens=\"10\"/><async>x1 x2 x3 x4 x5 x6 x7 x8</async> "
            "<sync/> b");
        InterpreterConfig cfg = s.config;
        cfg.fork_token_cap = 4;
        ScriptedBackend backend(build_script(program, s.tok));
        try {
            run(s.prompt, backend, PositionStrategy{}, cfg, s.tok);
            FAIL("expected RunawayFork");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::RunawayFork);
        }
    }

    SUBCASE("exhausted script") {
        Script script;
        script.main = {s.tok.word_id("a")};  // no EOS
        ScriptedBackend backend(script);
        try {
            run(s.prompt, backend, PositionStrategy{}, s.config, s.tok);
            FAIL("expected ScriptExhausted");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::ScriptExhausted);
        }
    }
}

TEST_CASE("determinism: identical scripts produce identical transcripts") {
    Setup s;
    auto a = s.run_program(parse(fixtures::kTwoFork));
    auto b = s.run_program(parse(fixtures::kTwoFork));
    CHECK(streams_equal(a, b));
    CHECK(a.final_text == b.final_text);
    CHECK(a.logical_positions_all == b.logical_positions_all);
}

TEST_CASE("bench: realized speedup tracks theoretical within 10%") {
    Setup s;

    auto check_program = [&](const char* text) {
        auto program = parse(text);
        auto result = bench(s.prompt, program, s.tok, PositionStrategy{}, s.config,
                            std::chrono::microseconds(1500));
        CHECK(result.baseline_seconds > 0.0);
        CHECK(result.test_seconds > 0.0);
        CHECK(result.realized_speedup ==
              doctest::Approx(result.theoretical_speedup).epsilon(0.10));
    };

    check_program(fixtures::kSingleFork);
    check_program(fixtures::kTwoFork);

    // unannotated response against itself sits at 1.0
    auto plain = parse("p1 p2 p3 p4 p5 p6 p7 p8 p9 p10 p11 p12");
    auto result = bench(s.prompt, plain, s.tok, PositionStrategy{}, s.config,
                        std::chrono::microseconds(1500));
    CHECK(result.realized_speedup == doctest::Approx(1.0).epsilon(0.10));
}
