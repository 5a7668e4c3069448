#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pasta/errors.hpp"
#include "pasta/plan.hpp"

namespace pasta {

/// One pairwise verdict from the judge: which presented response won and how
/// confident the judge is, in [0, 1].
struct Judgment {
    enum class Winner { A, B };
    Winner winner = Winner::A;
    double confidence = 0.0;
};

/// A judgment mapped onto one candidate: did the candidate win, regardless of
/// which side it was presented on.
struct ScoredJudgment {
    bool candidate_won = false;
    double confidence = 0.0;
};

/// Confidence-weighted win/loss ratio: (sum of winning confidences + eps) /
/// (sum of losing confidences + eps). eps defines the all-wins case.
double quality_ratio(std::span<const ScoredJudgment> judgments);

inline constexpr double kQualityRatioEpsilon = 1e-6;

enum class EfficiencyVariant { SpeedupOnly, HarmonicMean, ArithmeticMean, ParallelismOnly };

EfficiencyVariant efficiency_variant_from_name(std::string_view name);
std::string_view efficiency_variant_name(EfficiencyVariant variant);

double efficiency_metric(const SpeedupReport& report, EfficiencyVariant variant);

/// The quality weight: a finite lambda, or quality-only ranking (the paper's
/// lambda = infinity models).
struct QualityWeight {
    static QualityWeight lambda(double value) { return QualityWeight{value, false}; }
    static QualityWeight quality_only() { return QualityWeight{0.0, true}; }

    double value = 1.0;
    bool is_quality_only = false;
};

/// score = efficiency + lambda * quality; in quality-only mode the quality
/// itself is the ranking key.
double score(double efficiency, double quality, const QualityWeight& weight);

struct Candidate {
    std::string response;
    SpeedupReport report;
    double efficiency = 0.0;
    double quality = 0.0;
    double score = 0.0;
};

struct PreferenceRecord {
    std::string prompt;
    std::vector<Candidate> candidates;
    QualityWeight weight;
    int best_index = -1;
    int worst_index = -1;
};

/// Best/worst-of-N selection with deterministic tie-breaks (lowest index).
/// Throws TooFewCandidates for N < 2 and DegeneratePair when every score ties
/// (best == worst); degenerate prompts are excluded from the dataset.
PreferenceRecord select_pair(std::string prompt, std::vector<Candidate> candidates,
                             const QualityWeight& weight);

/// Combined SFT + squared-margin preference objective over the best/worst
/// pair: -alpha * logp_best + (1 - alpha) * ((logp_best - logp_worst) -
/// (logp_best_init - logp_worst_init) - 1/beta)^2.
double bonbon_loss(double logp_best, double logp_worst, double logp_best_init,
                   double logp_worst_init, double alpha, double beta);

class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    virtual Judgment compare(const std::string& prompt, const std::string& response_a,
                             const std::string& response_b) = 0;
};

/// Deterministic stand-in for the judge model: verdicts are a pure function
/// of (prompt, a, b) so pipelines replay byte-identically.
class MockJudge : public JudgeClient {
public:
    explicit MockJudge(std::uint64_t seed = 0) : seed_(seed) {}
    static MockJudge fixed(Judgment j);

    Judgment compare(const std::string& prompt, const std::string& response_a,
                     const std::string& response_b) override;

private:
    std::uint64_t seed_ = 0;
    std::optional<Judgment> fixed_;
};

struct HttpJudgeConfig {
    std::string url;      // e.g. http://host:port/compare
    std::string api_key;  // sent as a bearer token when non-empty
    int max_retries = 3;
    std::chrono::milliseconds base_backoff{100};
    std::chrono::milliseconds timeout{5000};

    static HttpJudgeConfig from_env();  // PASTA_JUDGE_URL / PASTA_JUDGE_KEY
};

/// HTTP judge endpoint client. Transient failures (connection errors, 5xx,
/// 429) retry with exponential backoff; after retries they surface as
/// Timeout / QuotaExceeded. Replies without a parsable winner/confidence are
/// MalformedReply and never retried.
class HttpJudgeClient : public JudgeClient {
public:
    explicit HttpJudgeClient(HttpJudgeConfig config);

    Judgment compare(const std::string& prompt, const std::string& response_a,
                     const std::string& response_b) override;

private:
    HttpJudgeConfig config_;
};

/// The four comparisons behind one candidate's quality ratio: against the
/// baseline response and the reference response, each in both presentation
/// orders.
std::vector<ScoredJudgment> judge_candidate(JudgeClient& judge, const std::string& prompt,
                                            const std::string& candidate,
                                            const std::string& baseline,
                                            const std::string& reference);

struct ComparisonTask {
    std::string prompt;
    std::string first;
    std::string second;
};

/// Runs comparisons with at most `max_in_flight` concurrent judge calls.
/// Results land at their task's index, so output order is input order no
/// matter how calls interleave. A failed call is reported through `on_error`
/// and leaves its slot empty.
std::vector<std::optional<Judgment>> judge_all(
    JudgeClient& judge, std::span<const ComparisonTask> tasks, int max_in_flight,
    const std::function<void(std::size_t, const Error&)>& on_error = {});

}  // namespace pasta
