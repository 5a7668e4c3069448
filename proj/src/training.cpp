#include "pasta/training.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace pasta {

bool SftExample::attends(int i, int j) const {
    for (const auto& [start, end] : visible_intervals[i])
        if (j >= start && j < end) return true;
    return false;
}

namespace {

enum class TokKind { Prompt, Word, PromiseTag, Open, Inner, Close, SyncTag, Eos };

struct LaidToken {
    TokenId id;
    TokKind kind;
    int block = -1;  // block index for PromiseTag/Open/Inner/Close
    int position = 0;
};

struct BlockSpan {
    int open = -1;
    int close = -1;
    int release = -1;  // index of the first sync after close, or INT_MAX
};

}  // namespace

SftExample build_sft_example(std::span<const TokenId> prompt, const AnnotatedResponse& r,
                             const Tokenizer& tok, const PositionStrategy& strategy) {
    std::vector<LaidToken> laid;
    for (std::size_t i = 0; i < prompt.size(); ++i)
        laid.push_back({prompt[i], TokKind::Prompt, -1, static_cast<int>(i)});

    int cursor = static_cast<int>(prompt.size());
    int block_index = -1;
    std::vector<int> block_max_position;  // per block, for the sync placement rule
    std::vector<int> unsynced_blocks;

    for (const auto& seg : r.segments) {
        if (const auto* t = std::get_if<TextRun>(&seg)) {
            for (auto word : Tokenizer::split_words(t->text))
                laid.push_back({tok.word_id(word), TokKind::Word, -1, cursor++});
        } else if (const auto* p = std::get_if<Promise>(&seg)) {
            ++block_index;
            int promise_position = cursor;
            laid.push_back({tok.promise_id(*p), TokKind::PromiseTag, block_index, promise_position});

            const AsyncBlock* block = r.block_for(p->block_id);
            if (!block) fail(Errc::AttributeMissing, "promise without async block");
            auto inner_words = Tokenizer::split_words(block->inner);
            int actual = static_cast<int>(inner_words.size()) + 1;  // inner + close tag

            int position = promise_position + 1;
            laid.push_back({tok.async_open_id(), TokKind::Open, block_index, position++});
            for (auto word : inner_words)
                laid.push_back({tok.word_id(word), TokKind::Inner, block_index, position++});
            laid.push_back({tok.async_close_id(), TokKind::Close, block_index, position});
            block_max_position.push_back(position);
            unsynced_blocks.push_back(block_index);

            cursor = promise_position + assign_position(strategy, *p, actual) + 1;
        } else if (std::holds_alternative<Sync>(seg)) {
            int sync_position = cursor;
            for (int b : unsynced_blocks)
                sync_position = std::max(sync_position, block_max_position[b] + 1);
            unsynced_blocks.clear();
            laid.push_back({tok.sync_id(), TokKind::SyncTag, -1, sync_position});
            cursor = sync_position + 1;
        }
        // AsyncBlock segments were laid out at their promise
    }
    laid.push_back({tok.eos_id(), TokKind::Eos, -1, cursor});

    const int n = static_cast<int>(laid.size());
    const int block_count = block_index + 1;
    std::vector<BlockSpan> spans(block_count);
    for (int i = 0; i < n; ++i) {
        if (laid[i].kind == TokKind::Open) spans[laid[i].block].open = i;
        if (laid[i].kind == TokKind::Close) spans[laid[i].block].close = i;
    }
    for (auto& span : spans) {
        span.release = n;  // never released
        for (int i = span.close + 1; i < n; ++i) {
            if (laid[i].kind == TokKind::SyncTag) {
                span.release = i;
                break;
            }
        }
    }

    SftExample ex;
    ex.prompt_len = static_cast<int>(prompt.size());
    for (const auto& t : laid) {
        ex.input_ids.push_back(t.id);
        ex.position_ids.push_back(t.position);
    }

    // targets: shift-by-one, promise-skip at promise tags, ignore on prompt,
    // fork ends (close) and the final EOS
    ex.targets.assign(n, SftExample::kIgnore);
    for (int i = 0; i < n; ++i) {
        switch (laid[i].kind) {
            case TokKind::Prompt:
            case TokKind::Close:
            case TokKind::Eos:
                break;
            case TokKind::PromiseTag: {
                int after = spans[laid[i].block].close + 1;
                ex.targets[i] = after < n ? laid[after].id : tok.eos_id();
                break;
            }
            default:
                if (i + 1 < n) ex.targets[i] = laid[i + 1].id;
                break;
        }
    }

    // mask: causal, except tokens outside a block cannot see into it until
    // the sync that releases it
    ex.visible_intervals.resize(n);
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<int, int>> holes;
        for (int b = 0; b < block_count; ++b) {
            const BlockSpan& span = spans[b];
            bool inside = laid[i].block == b &&
                          (laid[i].kind == TokKind::Open || laid[i].kind == TokKind::Inner ||
                           laid[i].kind == TokKind::Close);
            if (inside) continue;
            if (span.open > i) continue;        // block entirely after i: causal handles it
            if (span.release < i) continue;     // released before i: fully visible
            holes.emplace_back(span.open, std::min(span.close, i) + 1);
        }
        std::sort(holes.begin(), holes.end());
        auto& rows = ex.visible_intervals[i];
        int at = 0;
        for (const auto& [open, end] : holes) {
            if (open > at) rows.emplace_back(at, open);
            at = std::max(at, end);
        }
        if (at <= i) rows.emplace_back(at, i + 1);
    }
    return ex;
}

SftExample build_baseline_example(std::span<const TokenId> prompt, const AnnotatedResponse& r,
                                  const Tokenizer& tok) {
    AnnotatedResponse plain;
    plain.segments.push_back(TextRun{strip(r)});
    return build_sft_example(prompt, plain, tok);
}

AnnotatedResponse parse_response_text(const std::string& text, const Tokenizer& tok) {
    // inline-form blocks carry a topic attribute on the async tag
    bool looks_inline = text.find("<async topic=") != std::string::npos ||
                        text.find("<async  topic=") != std::string::npos;
    bool has_promise = text.find("<promise") != std::string::npos;
    if (looks_inline && !has_promise) return from_inline(text, tok);
    return parse(text);
}

std::vector<CorpusPair> ingest_corpus(const std::string& path, const Tokenizer& tok,
                                      IngestStats* stats) {
    std::ifstream in(path);
    if (!in) fail(Errc::FileUnreadable, "cannot open corpus '" + path + "'");

    IngestStats local;
    IngestStats& st = stats ? *stats : local;
    std::vector<CorpusPair> out;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        ++st.records;
        try {
            auto record = nlohmann::json::parse(line);
            std::string prompt, response;
            const nlohmann::json* turns = nullptr;
            if (record.is_array()) turns = &record;
            else if (record.contains("conversations")) turns = &record["conversations"];

            if (turns) {
                for (const auto& turn : *turns) {
                    std::string from = turn.value("from", "");
                    if (from == "human") prompt = turn.value("value", "");
                    else if (from == "chatbot" || from == "gpt" || from == "assistant")
                        response = turn.value("value", "");
                }
                if (response.empty())
                    fail(Errc::MalformedRecord, "conversation has no chatbot turn");
            } else if (record.contains("response")) {
                prompt = record.value("prompt", "");
                response = record["response"].get<std::string>();
            } else {
                fail(Errc::MalformedRecord, "record has neither conversations nor response");
            }

            CorpusPair pair;
            pair.line = line_no;
            pair.prompt = std::move(prompt);
            pair.response = parse_response_text(response, tok);
            out.push_back(std::move(pair));
            ++st.parsed;
        } catch (const Error& e) {
            ++st.skipped;
            ++st.error_counts[std::string(errc_name(e.code()))];
            st.diagnostics.emplace_back(line_no, e.what());
        } catch (const nlohmann::json::exception& e) {
            ++st.skipped;
            ++st.error_counts["MalformedRecord"];
            st.diagnostics.emplace_back(line_no, e.what());
        }
    }
    return out;
}

}  // namespace pasta
