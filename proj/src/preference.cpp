#include "pasta/preference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace pasta {

double quality_ratio(std::span<const ScoredJudgment> judgments) {
    double wins = 0.0, losses = 0.0;
    for (const auto& j : judgments) (j.candidate_won ? wins : losses) += j.confidence;
    return (wins + kQualityRatioEpsilon) / (losses + kQualityRatioEpsilon);
}

EfficiencyVariant efficiency_variant_from_name(std::string_view name) {
    if (name == "speedup") return EfficiencyVariant::SpeedupOnly;
    if (name == "harmonic") return EfficiencyVariant::HarmonicMean;
    if (name == "arithmetic") return EfficiencyVariant::ArithmeticMean;
    if (name == "parallelism") return EfficiencyVariant::ParallelismOnly;
    fail(Errc::MalformedRecord, "unknown efficiency variant '" + std::string(name) + "'");
}

std::string_view efficiency_variant_name(EfficiencyVariant variant) {
    switch (variant) {
        case EfficiencyVariant::SpeedupOnly: return "speedup";
        case EfficiencyVariant::HarmonicMean: return "harmonic";
        case EfficiencyVariant::ArithmeticMean: return "arithmetic";
        case EfficiencyVariant::ParallelismOnly: return "parallelism";
    }
    return "unknown";
}

double efficiency_metric(const SpeedupReport& report, EfficiencyVariant variant) {
    double s = report.theoretical_speedup;
    double p = report.theoretical_parallelism;
    switch (variant) {
        case EfficiencyVariant::SpeedupOnly: return s;
        case EfficiencyVariant::ParallelismOnly: return p;
        case EfficiencyVariant::ArithmeticMean: return (s + p) / 2.0;
        case EfficiencyVariant::HarmonicMean: return 2.0 * s * p / (s + p);
    }
    return s;
}

double score(double efficiency, double quality, const QualityWeight& weight) {
    if (weight.is_quality_only) return quality;
    return efficiency + weight.value * quality;
}

PreferenceRecord select_pair(std::string prompt, std::vector<Candidate> candidates,
                             const QualityWeight& weight) {
    if (candidates.size() < 2)
        fail(Errc::TooFewCandidates,
             "need at least 2 candidates, got " + std::to_string(candidates.size()));

    int best = 0, worst = 0;
    for (int i = 1; i < static_cast<int>(candidates.size()); ++i) {
        if (candidates[i].score > candidates[best].score) best = i;
        if (candidates[i].score < candidates[worst].score) worst = i;
    }
    if (best == worst)
        fail(Errc::DegeneratePair, "all candidate scores tie; prompt excluded");

    PreferenceRecord record;
    record.prompt = std::move(prompt);
    record.candidates = std::move(candidates);
    record.weight = weight;
    record.best_index = best;
    record.worst_index = worst;
    return record;
}

double bonbon_loss(double logp_best, double logp_worst, double logp_best_init,
                   double logp_worst_init, double alpha, double beta) {
    if (beta <= 0.0) fail(Errc::NonPositiveBeta, "beta must be positive");
    if (alpha < 0.0 || alpha > 1.0)
        fail(Errc::NonPositiveValue, "alpha must lie in [0, 1]");
    double margin = (logp_best - logp_worst) - (logp_best_init - logp_worst_init) - 1.0 / beta;
    return -alpha * logp_best + (1.0 - alpha) * margin * margin;
}

// ---------------------------------------------------------------------------
// judges

namespace {
std::uint64_t mix64(std::uint64_t h) {
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ull;
    h ^= h >> 33;
    return h;
}

std::uint64_t hash_strings(std::uint64_t seed, std::initializer_list<const std::string*> parts) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
    for (const auto* s : parts) {
        for (unsigned char c : *s) h = mix64(h ^ c);
        h = mix64(h ^ 0x1f);
    }
    return h;
}
}  // namespace

MockJudge MockJudge::fixed(Judgment j) {
    MockJudge judge;
    judge.fixed_ = j;
    return judge;
}

Judgment MockJudge::compare(const std::string& prompt, const std::string& response_a,
                            const std::string& response_b) {
    if (fixed_) return *fixed_;
    std::uint64_t h = hash_strings(seed_, {&prompt, &response_a, &response_b});
    Judgment j;
    j.winner = (h & 1) ? Judgment::Winner::A : Judgment::Winner::B;
    j.confidence = 0.5 + static_cast<double>((h >> 1) % 1000) / 2000.0;
    return j;
}

HttpJudgeConfig HttpJudgeConfig::from_env() {
    HttpJudgeConfig config;
    if (const char* url = std::getenv("PASTA_JUDGE_URL")) config.url = url;
    if (const char* key = std::getenv("PASTA_JUDGE_KEY")) config.api_key = key;
    return config;
}

HttpJudgeClient::HttpJudgeClient(HttpJudgeConfig config) : config_(std::move(config)) {
    if (config_.url.empty())
        fail(Errc::Timeout, "judge endpoint not configured (set PASTA_JUDGE_URL)");
}

Judgment HttpJudgeClient::compare(const std::string& prompt, const std::string& response_a,
                                  const std::string& response_b) {
    // split scheme://host:port from the path
    std::string base = config_.url, path = "/";
    auto scheme = base.find("://");
    auto slash = base.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
        path = base.substr(slash);
        base = base.substr(0, slash);
    }

    nlohmann::json body = {
        {"prompt", prompt}, {"response_a", response_a}, {"response_b", response_b}};
    std::string payload = body.dump();

    int attempts = config_.max_retries + 1;
    auto backoff = config_.base_backoff;
    int last_status = 0;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        httplib::Client client(base);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(
                                          config_.timeout).count(),
                                      (config_.timeout.count() % 1000) * 1000);
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(
                config_.timeout).count(), 0);
        httplib::Headers headers;
        if (!config_.api_key.empty())
            headers.emplace("Authorization", "Bearer " + config_.api_key);

        auto result = client.Post(path, headers, payload, "application/json");
        if (!result) {
            last_status = 0;
            continue;  // connection failure: transient
        }
        if (result->status == 429 || result->status >= 500) {
            last_status = result->status;
            continue;
        }
        if (result->status != 200)
            fail(Errc::MalformedReply,
                 "judge returned status " + std::to_string(result->status));

        try {
            auto reply = nlohmann::json::parse(result->body);
            std::string winner = reply.at("winner").get<std::string>();
            double confidence = reply.at("confidence").get<double>();
            if (winner != "A" && winner != "B")
                fail(Errc::MalformedReply, "winner must be 'A' or 'B', got '" + winner + "'");
            if (confidence < 0.0 || confidence > 1.0)
                fail(Errc::MalformedReply,
                     "confidence " + std::to_string(confidence) + " outside [0, 1]");
            return Judgment{winner == "A" ? Judgment::Winner::A : Judgment::Winner::B,
                            confidence};
        } catch (const nlohmann::json::exception& e) {
            fail(Errc::MalformedReply, std::string("unparsable judge reply: ") + e.what());
        }
    }
    if (last_status == 429) fail(Errc::QuotaExceeded, "judge quota exhausted after retries");
    fail(Errc::Timeout, "judge unreachable after " + std::to_string(attempts) + " attempts");
}

std::vector<ScoredJudgment> judge_candidate(JudgeClient& judge, const std::string& prompt,
                                            const std::string& candidate,
                                            const std::string& baseline,
                                            const std::string& reference) {
    std::vector<ScoredJudgment> out;
    auto run = [&](const std::string& other) {
        // each comparison appears in both presentation orders
        Judgment forward = judge.compare(prompt, candidate, other);
        out.push_back({forward.winner == Judgment::Winner::A, forward.confidence});
        Judgment reverse = judge.compare(prompt, other, candidate);
        out.push_back({reverse.winner == Judgment::Winner::B, reverse.confidence});
    };
    run(baseline);
    run(reference);
    return out;
}

std::vector<std::optional<Judgment>> judge_all(
    JudgeClient& judge, std::span<const ComparisonTask> tasks, int max_in_flight,
    const std::function<void(std::size_t, const Error&)>& on_error) {
    std::vector<std::optional<Judgment>> results(tasks.size());
    if (tasks.empty()) return results;

    std::mutex mu;
    std::size_t next = 0;
    int workers = std::clamp<int>(max_in_flight, 1, static_cast<int>(tasks.size()));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                std::size_t index;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= tasks.size()) return;
                    index = next++;
                }
                try {
                    Judgment j = judge.compare(tasks[index].prompt, tasks[index].first,
                                               tasks[index].second);
                    std::lock_guard<std::mutex> lock(mu);
                    results[index] = j;
                } catch (const Error& e) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (on_error) on_error(index, e);
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    return results;
}

}  // namespace pasta
