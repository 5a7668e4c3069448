#pragma once

// Shared corpus fixtures.

namespace pasta::fixtures {

// Single-fork worked example: critical path 8, 7 non-control tokens.
inline constexpr const char* kSingleFork =
    "A B <promise topic=\"x\" tokens=\"10\"/><async>C D E</async> F <sync/> G";

// Two overlapping forks: one lead-in token, two 10-token blocks, one sync,
// one trailing token. Critical path 15, 22 non-control tokens.
inline constexpr const char* kTwoFork =
    "I <promise topic=\"a\" tokens=\"10\"/><async>a1 a2 a3 a4 a5 a6 a7 a8 a9 a10</async> "
    "<promise topic=\"b\" tokens=\"10\"/><async>b1 b2 b3 b4 b5 b6 b7 b8 b9 b10</async> "
    "<sync/> T";

// Inline-form sample record: a chatbot answer with three parallel segments.
inline constexpr const char* kInlineSample =
    "CDs (Compact Discs) came to the American market in 1983. <async topic='joint venture'>This "
    "was made possible through a joint venture between CBS and Sony, named CBS/Sony Records, "
    "which was formed in March 1968.</async> <async topic='japan production plant'>As Sony was "
    "one of the developers behind the compact disc digital music media, they built a compact "
    "disc production plant in Japan under this joint collaboration. This plant enabled CBS to "
    "supply some of the first compact disc releases for the American market in 1983.</async> "
    "<async topic='impact'> The introduction of CDs revolutionized the music industry as they "
    "provided a new and improved way to store and listen to music, providing higher sound "
    "quality and durability compared to the earlier vinyl records and cassette tapes.</async>";

}  // namespace pasta::fixtures
