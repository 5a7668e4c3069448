#pragma once

#include <span>
#include <vector>

#include "pasta/lang.hpp"
#include "pasta/tokenizer.hpp"

namespace pasta {

/// One decode event in the dependency model. Inserted nodes (the fork's
/// <async> prefix token, the deferred <sync/> placement) consume no decode
/// timestep; decoded control tokens cost one step like any other token.
struct GraphNode {
    TokenId token = -1;
    int thread_id = 0;
    bool is_control = false;
    bool is_inserted = false;
    std::vector<int> preds;
    int earliest_timestep = 0;  // 1-based for decoded nodes; inserted nodes are transparent
};

struct DependencyGraph {
    std::vector<GraphNode> nodes;

    int non_control_tokens() const;
    int decoded_tokens() const;
};

struct SpeedupReport {
    int baseline_tokens = 0;
    int non_control_tokens = 0;
    int critical_path = 0;
    double theoretical_speedup = 0.0;
    double theoretical_parallelism = 0.0;
};

/// Builds the decode-dependency graph of a response: within-thread order,
/// promise -> fork start, fork close -> sync release. The prompt and the EOS
/// are not part of the graph; it models response decoding only.
DependencyGraph build_graph(const AnnotatedResponse& r, const Tokenizer& tok);

/// Length of the longest chain that must be decoded sequentially; equals the
/// completion timestep of a lockstep simulation with one token per active
/// thread per step.
int critical_path(const DependencyGraph& g);

double theoretical_speedup(int baseline_tokens, const DependencyGraph& g);
double theoretical_parallelism(const DependencyGraph& g);

SpeedupReport make_report(int baseline_tokens, const DependencyGraph& g);

enum class MeanKind { Geometric, Arithmetic };

/// Aggregates per-prompt ratios. Geometric is the right mean for normalized
/// ratios; arithmetic is kept for comparison with prevailing practice.
/// Throws NonPositiveValue for empty input or values <= 0.
double aggregate(std::span<const double> values, MeanKind kind);

}  // namespace pasta
