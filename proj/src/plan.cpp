#include "pasta/plan.hpp"

#include <algorithm>
#include <cmath>

namespace pasta {

int DependencyGraph::non_control_tokens() const {
    int n = 0;
    for (const auto& node : nodes)
        if (!node.is_control && !node.is_inserted) ++n;
    return n;
}

int DependencyGraph::decoded_tokens() const {
    int n = 0;
    for (const auto& node : nodes)
        if (!node.is_inserted) ++n;
    return n;
}

namespace {

int add_node(DependencyGraph& g, TokenId token, int thread, bool control, bool inserted,
             std::vector<int> preds) {
    GraphNode node;
    node.token = token;
    node.thread_id = thread;
    node.is_control = control;
    node.is_inserted = inserted;
    node.preds = std::move(preds);
    int earliest = 0;
    for (int p : node.preds) earliest = std::max(earliest, g.nodes[p].earliest_timestep);
    node.earliest_timestep = inserted ? earliest : earliest + 1;
    g.nodes.push_back(std::move(node));
    return static_cast<int>(g.nodes.size()) - 1;
}

}  // namespace

DependencyGraph build_graph(const AnnotatedResponse& r, const Tokenizer& tok) {
    DependencyGraph g;
    int main_tail = -1;              // last main-thread node
    std::vector<int> pending_closes; // AsyncClose nodes of forks not yet released
    std::vector<int> sync_release;   // extra preds for the next main node
    int next_thread = 1;

    auto add_main = [&](TokenId token, bool control) {
        std::vector<int> preds;
        if (main_tail >= 0) preds.push_back(main_tail);
        preds.insert(preds.end(), sync_release.begin(), sync_release.end());
        sync_release.clear();
        main_tail = add_node(g, token, 0, control, false, std::move(preds));
        return main_tail;
    };

    for (const auto& seg : r.segments) {
        if (const auto* t = std::get_if<TextRun>(&seg)) {
            for (auto word : Tokenizer::split_words(t->text))
                add_main(tok.word_id(word), false);
        } else if (const auto* p = std::get_if<Promise>(&seg)) {
            int promise_node = add_main(tok.promise_id(*p), true);
            const AsyncBlock* block = r.block_for(p->block_id);
            if (!block) continue;
            int thread = next_thread++;
            // inserted <async> prefix token: transparent, costs no step
            int tail = add_node(g, tok.async_open_id(), thread, true, true, {promise_node});
            for (auto word : Tokenizer::split_words(block->inner))
                tail = add_node(g, tok.word_id(word), thread, false, false, {tail});
            tail = add_node(g, tok.async_close_id(), thread, true, false, {tail});
            pending_closes.push_back(tail);
        } else if (std::holds_alternative<Sync>(seg)) {
            add_main(tok.sync_id(), true);
            sync_release = std::move(pending_closes);
            pending_closes.clear();
        }
        // AsyncBlock segments are handled at their promise
    }
    return g;
}

int critical_path(const DependencyGraph& g) {
    int path = 0;
    for (const auto& node : g.nodes) path = std::max(path, node.earliest_timestep);
    return path;
}

double theoretical_speedup(int baseline_tokens, const DependencyGraph& g) {
    int path = critical_path(g);
    if (baseline_tokens < 1) fail(Errc::NonPositiveValue, "baseline_tokens must be >= 1");
    if (path < 1) fail(Errc::NonPositiveValue, "critical path is empty");
    return static_cast<double>(baseline_tokens) / static_cast<double>(path);
}

double theoretical_parallelism(const DependencyGraph& g) {
    int path = critical_path(g);
    if (path < 1) fail(Errc::NonPositiveValue, "critical path is empty");
    return static_cast<double>(g.non_control_tokens()) / static_cast<double>(path);
}

SpeedupReport make_report(int baseline_tokens, const DependencyGraph& g) {
    SpeedupReport report;
    report.baseline_tokens = baseline_tokens;
    report.non_control_tokens = g.non_control_tokens();
    report.critical_path = critical_path(g);
    report.theoretical_speedup = theoretical_speedup(baseline_tokens, g);
    report.theoretical_parallelism = theoretical_parallelism(g);
    return report;
}

double aggregate(std::span<const double> values, MeanKind kind) {
    if (values.empty()) fail(Errc::NonPositiveValue, "aggregate of empty list");
    double acc = 0.0;
    for (double v : values) {
        if (v <= 0.0) fail(Errc::NonPositiveValue, "aggregate requires positive values");
        acc += kind == MeanKind::Geometric ? std::log(v) : v;
    }
    acc /= static_cast<double>(values.size());
    return kind == MeanKind::Geometric ? std::exp(acc) : acc;
}

}  // namespace pasta
