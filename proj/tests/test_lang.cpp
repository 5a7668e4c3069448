#include <doctest.h>

#include <random>

#include "pasta/lang.hpp"
#include "pasta/tokenizer.hpp"

#include "fixtures.hpp"
#include "testutil.hpp"

using namespace pasta;

TEST_CASE("parse: plain text") {
    auto r = parse("hi");
    REQUIRE(r.segments.size() == 1);
    CHECK(std::get<TextRun>(r.segments[0]).text == "hi");
    CHECK(!r.has_annotations());
}

TEST_CASE("parse: promise/async/sync structure") {
    auto r = parse(fixtures::kSingleFork);
    REQUIRE(r.segments.size() == 6);
    CHECK(std::get<TextRun>(r.segments[0]).text == "A B ");
    const auto& p = std::get<Promise>(r.segments[1]);
    CHECK(p.topic == "x");
    CHECK(p.tokens == 10);
    const auto& b = std::get<AsyncBlock>(r.segments[2]);
    CHECK(b.block_id == p.block_id);
    CHECK(b.inner == "C D E");
    CHECK(std::get<TextRun>(r.segments[3]).text == " F ");
    CHECK(std::holds_alternative<Sync>(r.segments[4]));
    CHECK(std::get<TextRun>(r.segments[5]).text == " G");
}

TEST_CASE("parse: attribute forms") {
    // single quotes and swapped order are accepted
    auto r = parse("<promise tokens='20' topic='two words'/><async>x</async>");
    const auto& p = std::get<Promise>(r.segments[0]);
    CHECK(p.topic == "two words");
    CHECK(p.tokens == 20);

    // unknown tags stay text
    auto t = parse("a <b> c </b>");
    REQUIRE(t.segments.size() == 1);
    CHECK(std::get<TextRun>(t.segments[0]).text == "a <b> c </b>");
}

TEST_CASE("parse: errors") {
    auto code_of = [](const char* text) {
        try {
            parse(text);
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::BackendError;
    };
    CHECK(code_of("<async>C</async>") == Errc::OrphanAsync);
    CHECK(code_of("<promise topic=\"x\" tokens=\"10\"/><async>C") == Errc::UnbalancedAsync);
    CHECK(code_of("a </async>") == Errc::UnbalancedAsync);
    CHECK(code_of("<promise topic=\"x\" tokens=\"10\"/> no block") == Errc::PromiseWithoutBlock);
    CHECK(code_of("<promise topic=\"x\"/><async>C</async>") == Errc::MalformedAttribute);
    CHECK(code_of("<promise tokens=\"10\"/><async>C</async>") == Errc::MalformedAttribute);
    CHECK(code_of("<promise topic=\"x\" tokens=\"ten\"/><async>C</async>") ==
          Errc::MalformedAttribute);
    CHECK(code_of("<promise topic=\"x\" tokens=\"10\"/><async>a <sync/> b</async>") ==
          Errc::NestedAsync);
    CHECK(code_of("<promise topic=\"x\" tokens=\"10\"/><async>a <async>b</async></async>") ==
          Errc::NestedAsync);
}

TEST_CASE("serialize: inverse of parse") {
    CHECK(serialize(parse("hi")) == "hi");
    CHECK(serialize(parse(fixtures::kSingleFork)) == fixtures::kSingleFork);

    // zero tokens emitted verbatim
    AnnotatedResponse r;
    r.segments.push_back(Promise{"x", 0, 0});
    r.segments.push_back(AsyncBlock{0, "y"});
    CHECK(serialize(r) == "<promise topic=\"x\" tokens=\"0\"/><async>y</async>");
}

TEST_CASE("round-trip: 200-program canonical corpus, byte-exact") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i) {
        auto program = testutil::random_program(rng);
        CHECK(serialize(parse(program.text)) == program.text);
        // parse of serialize is the identity on the tree
        CHECK(parse(serialize(program.tree)) == program.tree);
    }
}

TEST_CASE("strip: tags removed, async content inline") {
    CHECK(strip(parse(fixtures::kSingleFork)) == "A B C D E F G");
    CHECK(strip(parse("hi")) == "hi");

    auto two = parse(
        "s <promise topic=\"p\" tokens=\"10\"/><async>x y</async> mid "
        "<promise topic=\"q\" tokens=\"10\"/><async>z</async> <sync/> end");
    CHECK(strip(two) == "s x y mid z end");
}

TEST_CASE("strip: removes exactly the control tokens") {
    std::mt19937_64 rng(11);
    Tokenizer tok = Tokenizer::whitespace();
    for (int i = 0; i < 50; ++i) {
        auto program = testutil::random_program(rng);
        std::size_t stripped = tok.count_text_tokens(strip(program.tree));
        auto ids = tok.tokenize(program.tree);
        std::size_t non_control = 0;
        for (TokenId id : ids)
            if (!tok.is_control(id)) ++non_control;
        CHECK(stripped == non_control);
    }
}

TEST_CASE("from_inline: token estimates round to ten, floor ten") {
    Tokenizer tok = Tokenizer::whitespace();

    auto small = from_inline("<async topic='x'>a b c</async> done", tok);
    REQUIRE(small.segments.size() == 3);
    const auto& p = std::get<Promise>(small.segments[0]);
    CHECK(p.topic == "x");
    CHECK(p.tokens == 10);  // 3 + close = 4, floored to the minimum
    CHECK(std::get<AsyncBlock>(small.segments[1]).inner == "a b c");

    // 14 inner tokens: 14 + 1 = 15, ties round up
    std::string inner14 = "a a a a a a a a a a a a a a";
    auto mid = from_inline("<async topic='x'>" + inner14 + "</async>", tok);
    CHECK(std::get<Promise>(mid.segments[0]).tokens == 20);

    // 10 inner tokens: 11 rounds down
    std::string inner10 = "a a a a a a a a a a";
    auto low = from_inline("<async topic='x'>" + inner10 + "</async>", tok);
    CHECK(std::get<Promise>(low.segments[0]).tokens == 10);

    CHECK_THROWS_AS(from_inline("<async>missing</async>", tok), Error);
}

TEST_CASE("from_inline: estimates are always positive multiples of ten") {
    std::mt19937_64 rng(13);
    Tokenizer tok = Tokenizer::whitespace();
    for (int i = 0; i < 50; ++i) {
        int len = 1 + static_cast<int>(rng() % 60);
        std::string text =
            "intro <async topic='t'>" + testutil::make_words(rng, len) + "</async> out";
        auto r = from_inline(text, tok);
        const auto& p = std::get<Promise>(r.segments[1]);
        CHECK(p.tokens > 0);
        CHECK(p.tokens % 10 == 0);
    }
}

TEST_CASE("from_inline: sample record with three blocks") {
    Tokenizer tok = Tokenizer::whitespace();
    auto r = from_inline(fixtures::kInlineSample, tok);
    CHECK(r.block_count() == 3);

    int promises = 0;
    for (const auto& seg : r.segments)
        if (std::holds_alternative<Promise>(seg)) ++promises;
    CHECK(promises == 3);

    // converts to well-formed canonical text
    auto reparsed = parse(serialize(r));
    CHECK(reparsed == r);

    // no error-severity diagnostics
    for (const auto& diag : validate(r))
        CHECK(diag.severity == Diagnostic::Severity::Warning);
}

TEST_CASE("validate: canonical-form diagnostics") {
    auto ok = parse(fixtures::kSingleFork);
    CHECK(validate(ok).empty());

    // topic over three words warns
    auto wordy = parse(
        "<promise topic=\"one two three four\" tokens=\"10\"/><async>x</async> t <sync/>");
    auto diags = validate(wordy);
    REQUIRE(!diags.empty());
    CHECK(diags[0].check == "topic");
    CHECK(diags[0].severity == Diagnostic::Severity::Warning);

    // tokens not a multiple of ten warns
    auto odd = parse("<promise topic=\"x\" tokens=\"15\"/><async>x</async> t <sync/>");
    bool tokens_flagged = false;
    for (const auto& d : validate(odd)) tokens_flagged |= d.check == "tokens";
    CHECK(tokens_flagged);

    // content after the last block without a sync warns
    auto unsynced = parse("<promise topic=\"x\" tokens=\"10\"/><async>x</async> trailing text");
    bool sync_flagged = false;
    for (const auto& d : validate(unsynced)) sync_flagged |= d.check == "sync";
    CHECK(sync_flagged);

    // trailing block with nothing after it is fine
    auto tail = parse("lead <promise topic=\"x\" tokens=\"10\"/><async>x</async>");
    bool tail_sync_flagged = false;
    for (const auto& d : validate(tail)) tail_sync_flagged |= d.check == "sync";
    CHECK(!tail_sync_flagged);
}

TEST_CASE("round_to_ten: nearest multiple, ties up") {
    CHECK(round_to_ten(0) == 0);
    CHECK(round_to_ten(4) == 0);
    CHECK(round_to_ten(5) == 10);
    CHECK(round_to_ten(11) == 10);
    CHECK(round_to_ten(15) == 20);
    CHECK(round_to_ten(104) == 100);
}

TEST_CASE("tokenizer: tags are atomic control tokens") {
    Tokenizer tok = Tokenizer::whitespace();
    auto r = parse(fixtures::kSingleFork);
    auto ids = tok.tokenize(r);
    // A B <promise/> <async> C D E </async> F <sync/> G
    REQUIRE(ids.size() == 11);
    CHECK(tok.is_control(ids[2]));
    CHECK(tok.is_promise(ids[2]));
    const Promise* info = tok.promise_info(ids[2]);
    REQUIRE(info != nullptr);
    CHECK(info->topic == "x");
    CHECK(info->tokens == 10);
    CHECK(ids[3] == tok.async_open_id());
    CHECK(ids[7] == tok.async_close_id());
    CHECK(ids[9] == tok.sync_id());
    int control = 0;
    for (TokenId id : ids)
        if (tok.is_control(id)) ++control;
    CHECK(control == 4);
}

TEST_CASE("tokenizer: detokenize(tokenize(s)) == s on canonical corpus") {
    std::mt19937_64 rng(17);
    Tokenizer tok = Tokenizer::whitespace();
    for (int i = 0; i < 200; ++i) {
        auto program = testutil::random_program(rng);
        auto ids = tok.tokenize(program.tree);
        CHECK(tok.detokenize(ids) == program.text);
    }
}

TEST_CASE("tokenizer: provided mode keeps ids inside the table") {
    Tokenizer tok = Tokenizer::provided(256, 64);
    auto r = parse(fixtures::kTwoFork);
    for (TokenId id : tok.tokenize(r)) {
        CHECK(id >= 0);
        CHECK(id < tok.vocab_capacity());
    }
    CHECK(tok.async_open_id() >= 256);
    // distinct promise tags get distinct control ids
    Tokenizer fresh = Tokenizer::provided(256, 64);
    TokenId a = fresh.promise_id(Promise{"alpha", 10, 0});
    TokenId b = fresh.promise_id(Promise{"alpha", 20, 1});
    TokenId c = fresh.promise_id(Promise{"alpha", 10, 2});
    CHECK(a != b);
    CHECK(a == c);
}
