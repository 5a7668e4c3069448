#include "pasta/io.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace pasta {

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j{
        {"command", command},
        {"corpus", corpus},
        {"backend", backend},
        {"strategy", strategy},
        {"fixed_tokens", fixed_tokens},
        {"max_sequence_length", max_sequence_length},
        {"max_threads", max_threads},
        {"fork_token_cap", fork_token_cap},
        {"max_decode_steps", max_decode_steps},
        {"latency_us", latency_us},
        {"judge", judge},
        {"efficiency", efficiency},
        {"mean", mean},
        {"num_candidates", num_candidates},
        {"seed", seed},
    };
    if (lambda) j["lambda"] = *lambda;
    else j["lambda"] = "quality-only";
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    c.command = j.value("command", c.command);
    c.corpus = j.value("corpus", c.corpus);
    c.backend = j.value("backend", c.backend);
    c.strategy = j.value("strategy", c.strategy);
    c.fixed_tokens = j.value("fixed_tokens", c.fixed_tokens);
    c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
    c.max_threads = j.value("max_threads", c.max_threads);
    c.fork_token_cap = j.value("fork_token_cap", c.fork_token_cap);
    c.max_decode_steps = j.value("max_decode_steps", c.max_decode_steps);
    c.latency_us = j.value("latency_us", c.latency_us);
    c.judge = j.value("judge", c.judge);
    if (j.contains("lambda")) {
        if (j["lambda"].is_string()) c.lambda = std::nullopt;
        else c.lambda = j["lambda"].get<double>();
    }
    c.efficiency = j.value("efficiency", c.efficiency);
    c.mean = j.value("mean", c.mean);
    c.num_candidates = j.value("num_candidates", c.num_candidates);
    c.seed = j.value("seed", c.seed);
    return c;
}

InterpreterConfig RunConfig::interpreter() const {
    InterpreterConfig cfg;
    cfg.max_sequence_length = max_sequence_length;
    cfg.max_threads = max_threads;
    cfg.fork_token_cap = fork_token_cap;
    cfg.max_decode_steps = max_decode_steps;
    return cfg;
}

PositionStrategy RunConfig::position_strategy() const {
    PositionStrategy s = PositionStrategy::from_name(strategy);
    s.fixed_tokens = fixed_tokens;
    return s;
}

void write_trace(const Transcript& transcript, const Tokenizer& tok, std::ostream& out) {
    for (const auto& ev : transcript.events) {
        nlohmann::json j{
            {"timestep", ev.timestep}, {"thread", ev.thread_id},
            {"token", ev.token},       {"surface", tok.surface(ev.token)},
            {"slot", ev.slot},         {"position", ev.position_id},
            {"inserted", ev.inserted},
        };
        out << j.dump() << "\n";
    }
}

namespace {

void write_header(const RunConfig& config, std::ostream& out) {
    out << "# pasta-version: " << kToolVersion << "\n";
    out << "# config: " << config.to_json().dump() << "\n";
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

void append_aggregates(const std::vector<DecodeRow>& rows,
                       const std::function<void(const std::string&, double, double)>& emit) {
    std::vector<double> speedups, parallelisms;
    for (const auto& row : rows) {
        speedups.push_back(row.report.theoretical_speedup);
        parallelisms.push_back(row.report.theoretical_parallelism);
    }
    if (rows.empty()) return;
    emit("geomean", aggregate(speedups, MeanKind::Geometric),
         aggregate(parallelisms, MeanKind::Geometric));
    emit("arithmean", aggregate(speedups, MeanKind::Arithmetic),
         aggregate(parallelisms, MeanKind::Arithmetic));
}

}  // namespace

void write_decode_csv(const RunConfig& config, const std::vector<DecodeRow>& rows,
                      std::ostream& out) {
    write_header(config, out);
    out << "id,baseline_tokens,non_control_tokens,critical_path,theoretical_speedup,"
           "theoretical_parallelism,timesteps,spawns,max_concurrent\n";
    for (const auto& row : rows) {
        out << row.id << ',' << row.report.baseline_tokens << ','
            << row.report.non_control_tokens << ',' << row.report.critical_path << ','
            << fmt(row.report.theoretical_speedup) << ','
            << fmt(row.report.theoretical_parallelism) << ',' << row.timesteps << ','
            << row.spawns << ',' << row.max_concurrent << "\n";
    }
    append_aggregates(rows, [&](const std::string& kind, double speedup, double parallelism) {
        out << kind << ",,,," << fmt(speedup) << ',' << fmt(parallelism) << ",,,\n";
    });
}

void write_decode_jsonl(const RunConfig& config, const std::vector<DecodeRow>& rows,
                        std::ostream& out) {
    out << nlohmann::json{{"version", kToolVersion}, {"config", config.to_json()}}.dump() << "\n";
    for (const auto& row : rows) {
        nlohmann::json j{
            {"id", row.id},
            {"baseline_tokens", row.report.baseline_tokens},
            {"non_control_tokens", row.report.non_control_tokens},
            {"critical_path", row.report.critical_path},
            {"theoretical_speedup", row.report.theoretical_speedup},
            {"theoretical_parallelism", row.report.theoretical_parallelism},
            {"timesteps", row.timesteps},
            {"spawns", row.spawns},
            {"max_concurrent", row.max_concurrent},
        };
        out << j.dump() << "\n";
    }
    append_aggregates(rows, [&](const std::string& kind, double speedup, double parallelism) {
        out << nlohmann::json{{"aggregate", kind},
                              {"theoretical_speedup", speedup},
                              {"theoretical_parallelism", parallelism}}
                   .dump()
            << "\n";
    });
}

void write_bench_csv(const RunConfig& config, const std::vector<BenchRow>& rows,
                     std::ostream& out) {
    write_header(config, out);
    out << "id,baseline_tokens,critical_path,baseline_seconds,test_seconds,realized_speedup,"
           "theoretical_speedup\n";
    for (const auto& row : rows) {
        out << row.id << ',' << row.result.baseline_tokens << ',' << row.result.critical_path
            << ',' << fmt(row.result.baseline_seconds) << ',' << fmt(row.result.test_seconds)
            << ',' << fmt(row.result.realized_speedup) << ','
            << fmt(row.result.theoretical_speedup) << "\n";
    }
}

void write_preference_jsonl(const RunConfig& config, const std::vector<PreferenceRecord>& records,
                            std::ostream& out) {
    out << nlohmann::json{{"version", kToolVersion}, {"config", config.to_json()}}.dump() << "\n";
    for (const auto& record : records) {
        const Candidate& best = record.candidates[record.best_index];
        const Candidate& worst = record.candidates[record.worst_index];
        nlohmann::json j{
            {"prompt", record.prompt},
            {"best", best.response},
            {"worst", worst.response},
            {"best_score", best.score},
            {"worst_score", worst.score},
            {"best_quality", best.quality},
            {"worst_quality", worst.quality},
            {"best_efficiency", best.efficiency},
            {"worst_efficiency", worst.efficiency},
        };
        if (record.weight.is_quality_only) j["lambda"] = "quality-only";
        else j["lambda"] = record.weight.value;
        out << j.dump() << "\n";
    }
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::FileUnreadable, "cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

}  // namespace pasta
