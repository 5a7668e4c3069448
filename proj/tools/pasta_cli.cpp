// Batch front end for the PASTA-LANG toolchain: corpus validation and
// conversion, interpreted decoding with speedup reports, synthetic-latency
// benches, preference-pair construction, and loss evaluation.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pasta/backends.hpp"
#include "pasta/interpreter.hpp"
#include "pasta/io.hpp"
#include "pasta/plan.hpp"
#include "pasta/preference.hpp"
#include "pasta/training.hpp"

using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    pasta::RunConfig config;
};

void apply_config_file(CLI::App& app, pasta::RunConfig& config, const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) pasta::fail(pasta::Errc::FileUnreadable, "cannot open config '" + path + "'");
    json j = json::parse(in);
    pasta::RunConfig file = pasta::RunConfig::from_json(j);
    // flags win over the config file: only fill values the user left untouched
    auto keep = [&](const std::string& flag) { return app.count(flag) == 0; };
    if (keep("--backend")) config.backend = file.backend;
    if (keep("--strategy")) config.strategy = file.strategy;
    if (keep("--fixed-tokens")) config.fixed_tokens = file.fixed_tokens;
    if (keep("--max-seq")) config.max_sequence_length = file.max_sequence_length;
    if (keep("--max-threads")) config.max_threads = file.max_threads;
    if (keep("--fork-cap")) config.fork_token_cap = file.fork_token_cap;
    if (keep("--max-steps")) config.max_decode_steps = file.max_decode_steps;
    if (keep("--latency-us")) config.latency_us = file.latency_us;
    if (keep("--judge")) config.judge = file.judge;
    if (keep("--lambda") && app.count("--quality-only") == 0) config.lambda = file.lambda;
    if (keep("--efficiency")) config.efficiency = file.efficiency;
    if (keep("--mean")) config.mean = file.mean;
    if (keep("--candidates")) config.num_candidates = file.num_candidates;
    if (keep("--seed")) config.seed = file.seed;
}

void add_interpreter_flags(CLI::App* cmd, pasta::RunConfig& config) {
    cmd->add_option("--backend", config.backend, "scripted | transformer")
        ->check(CLI::IsMember({"scripted", "transformer"}));
    cmd->add_option("--strategy", config.strategy,
                    "fixed | pred-1x | pred-10x | oracle-1x | oracle-10x | oracle-exact");
    cmd->add_option("--fixed-tokens", config.fixed_tokens, "block estimate for --strategy fixed");
    cmd->add_option("--max-seq", config.max_sequence_length, "KV pool capacity");
    cmd->add_option("--max-threads", config.max_threads, "concurrent decoding threads");
    cmd->add_option("--fork-cap", config.fork_token_cap, "per-fork runaway token cap");
    cmd->add_option("--max-steps", config.max_decode_steps, "decode step cap (0 = unbounded)");
    cmd->add_option("--seed", config.seed, "seed for all randomness");
}

std::ostream& open_or_stdout(const std::string& path, std::ofstream& file) {
    if (path.empty() || path == "-") return std::cout;
    file.open(path);
    if (!file) pasta::fail(pasta::Errc::FileUnreadable, "cannot write '" + path + "'");
    return file;
}

std::vector<pasta::TokenId> prompt_tokens(const std::string& prompt, const pasta::Tokenizer& tok) {
    auto ids = tok.tokenize_text(prompt.empty() ? "<bos>" : prompt);
    if (ids.empty()) ids.push_back(tok.word_id("<bos>"));
    return ids;
}

int cmd_validate(const std::string& corpus, bool strict_warnings) {
    pasta::Tokenizer tok = pasta::Tokenizer::whitespace();
    pasta::IngestStats stats;
    auto pairs = pasta::ingest_corpus(corpus, tok, &stats);

    int warnings = 0;
    for (const auto& pair : pairs) {
        for (const auto& diag : pasta::validate(pair.response)) {
            ++warnings;
            std::cout << "line " << pair.line << " [" << diag.check << "] " << diag.message
                      << "\n";
        }
    }
    std::cout << "records: " << stats.records << "\nparsed: " << stats.parsed
              << "\nskipped: " << stats.skipped << "\nwarnings: " << warnings << "\n";
    for (const auto& [cls, count] : stats.error_counts)
        std::cout << "error." << cls << ": " << count << "\n";
    for (const auto& [line, message] : stats.diagnostics)
        std::cout << "line " << line << ": " << message << "\n";
    if (stats.skipped > 0) return 1;
    if (strict_warnings && warnings > 0) return 1;
    return 0;
}

int cmd_convert(const std::string& in_path, const std::string& out_path) {
    pasta::Tokenizer tok = pasta::Tokenizer::whitespace();
    std::ofstream out_file;
    std::ostream& out = open_or_stdout(out_path, out_file);

    int converted = 0, failed = 0;
    int line_no = 0;
    for (const auto& line : pasta::read_lines(in_path)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        try {
            json record = json::parse(line);
            auto convert_value = [&](std::string& value) {
                auto tree = pasta::parse_response_text(value, tok);
                value = pasta::serialize(tree);
            };
            if (record.is_array() || record.contains("conversations")) {
                json& turns = record.is_array() ? record : record["conversations"];
                for (auto& turn : turns) {
                    std::string from = turn.value("from", "");
                    if (from == "chatbot" || from == "gpt" || from == "assistant") {
                        std::string value = turn.value("value", "");
                        convert_value(value);
                        turn["value"] = value;
                    }
                }
            } else if (record.contains("response")) {
                std::string value = record["response"].get<std::string>();
                convert_value(value);
                record["response"] = value;
            } else {
                throw pasta::Error(pasta::Errc::MalformedRecord, "no response field");
            }
            out << record.dump() << "\n";
            ++converted;
        } catch (const std::exception& e) {
            ++failed;
            std::cerr << "line " << line_no << ": " << e.what() << "\n";
        }
    }
    std::cerr << "converted: " << converted << " failed: " << failed << "\n";
    return failed == 0 ? 0 : 1;
}

int cmd_decode(pasta::RunConfig config, const std::string& csv_path,
               const std::string& jsonl_path, const std::string& trace_path, bool differential) {
    pasta::Tokenizer tok = config.backend == "transformer" ? pasta::Tokenizer::provided()
                                                           : pasta::Tokenizer::whitespace();
    pasta::IngestStats stats;
    auto pairs = pasta::ingest_corpus(config.corpus, tok, &stats);

    std::ofstream trace_file;
    std::ostream* trace = nullptr;
    if (!trace_path.empty()) {
        trace = &open_or_stdout(trace_path, trace_file);
    }

    std::vector<pasta::DecodeRow> rows;
    int mismatches = 0;
    for (const auto& pair : pairs) {
        auto prompt = prompt_tokens(pair.prompt, tok);
        pasta::InterpreterConfig icfg = config.interpreter();
        icfg.oracle_block_lengths = pasta::oracle_lengths(pair.response, tok);
        pasta::PositionStrategy strategy = config.position_strategy();

        pasta::Script script = pasta::build_script(pair.response, tok);
        pasta::Transcript transcript;
        if (config.backend == "transformer") {
            pasta::TinyTransformerConfig tcfg;
            tcfg.seed = config.seed ? config.seed : tcfg.seed;
            tcfg.max_positions = config.max_sequence_length;
            pasta::TinyTransformer backend(tcfg);
            backend.force(script);
            transcript = pasta::run(prompt, backend, strategy, icfg, tok);
        } else {
            pasta::ScriptedBackend backend(script);
            transcript = pasta::run(prompt, backend, strategy, icfg, tok);
        }

        if (differential) {
            pasta::ScriptedBackend naive_backend(script);
            pasta::Transcript naive = pasta::naive_run(prompt, naive_backend, strategy, icfg, tok);
            bool same = naive.final_text == transcript.final_text &&
                        naive.events.size() == transcript.events.size();
            if (same) {
                for (std::size_t i = 0; i < naive.events.size(); ++i) {
                    const auto& a = transcript.events[i];
                    const auto& b = naive.events[i];
                    if (a.timestep != b.timestep || a.thread_id != b.thread_id ||
                        a.token != b.token || a.position_id != b.position_id) {
                        same = false;
                        break;
                    }
                }
            }
            if (!same) {
                ++mismatches;
                std::cerr << "line " << pair.line << ": run/naive_run streams diverge\n";
            }
        }

        int baseline_tokens = static_cast<int>(tok.count_text_tokens(pasta::strip(pair.response)));
        auto graph = pasta::build_graph(pair.response, tok);
        pasta::DecodeRow row;
        row.id = std::to_string(pair.line);
        row.report = pasta::make_report(baseline_tokens, graph);
        row.timesteps = transcript.total_timesteps;
        row.spawns = transcript.stats.spawns;
        row.max_concurrent = transcript.stats.max_concurrent;
        rows.push_back(row);

        if (trace) pasta::write_trace(transcript, tok, *trace);
    }

    if (!csv_path.empty()) {
        std::ofstream csv_file;
        pasta::write_decode_csv(config, rows, open_or_stdout(csv_path, csv_file));
    }
    if (!jsonl_path.empty()) {
        std::ofstream jsonl_file;
        pasta::write_decode_jsonl(config, rows, open_or_stdout(jsonl_path, jsonl_file));
    }
    if (csv_path.empty() && jsonl_path.empty()) pasta::write_decode_csv(config, rows, std::cout);

    if (stats.skipped > 0)
        std::cerr << "skipped " << stats.skipped << " unparsable records\n";
    return mismatches == 0 ? 0 : 2;
}

int cmd_bench(pasta::RunConfig config, const std::string& csv_path) {
    pasta::Tokenizer tok = pasta::Tokenizer::whitespace();
    pasta::IngestStats stats;
    auto pairs = pasta::ingest_corpus(config.corpus, tok, &stats);

    std::vector<pasta::BenchRow> rows;
    for (const auto& pair : pairs) {
        auto prompt = prompt_tokens(pair.prompt, tok);
        pasta::BenchRow row;
        row.id = std::to_string(pair.line);
        row.result = pasta::bench(prompt, pair.response, tok, config.position_strategy(),
                                  config.interpreter(),
                                  std::chrono::microseconds(config.latency_us));
        rows.push_back(row);
    }
    std::ofstream csv_file;
    pasta::write_bench_csv(config, rows, open_or_stdout(csv_path, csv_file));
    return 0;
}

int cmd_prefs(pasta::RunConfig config, const std::string& out_path) {
    pasta::Tokenizer tok = pasta::Tokenizer::whitespace();

    std::unique_ptr<pasta::JudgeClient> judge;
    if (config.judge == "mock") {
        judge = std::make_unique<pasta::MockJudge>(config.seed);
    } else {
        judge = std::make_unique<pasta::HttpJudgeClient>(pasta::HttpJudgeConfig::from_env());
    }

    pasta::EfficiencyVariant variant = pasta::efficiency_variant_from_name(config.efficiency);
    pasta::QualityWeight weight = config.lambda
                                      ? pasta::QualityWeight::lambda(*config.lambda)
                                      : pasta::QualityWeight::quality_only();

    std::vector<pasta::PreferenceRecord> records;
    int degenerate = 0, failed = 0;
    int line_no = 0;
    for (const auto& line : pasta::read_lines(config.corpus)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        try {
            json record = json::parse(line);
            std::string prompt = record.at("prompt").get<std::string>();
            std::string baseline = record.value("baseline_response", "");
            std::string reference = record.value("reference_response", baseline);

            std::vector<pasta::Candidate> candidates;
            for (const auto& raw : record.at("candidates")) {
                pasta::Candidate candidate;
                candidate.response = raw.get<std::string>();
                auto tree = pasta::parse_response_text(candidate.response, tok);
                // the baseline response's length is the speedup numerator;
                // fall back to the candidate's own stripped length
                std::string base = baseline.empty() ? pasta::strip(tree) : baseline;
                int baseline_tokens = static_cast<int>(tok.count_text_tokens(base));
                candidate.report =
                    pasta::make_report(baseline_tokens, pasta::build_graph(tree, tok));
                candidate.efficiency = pasta::efficiency_metric(candidate.report, variant);
                auto judgments = pasta::judge_candidate(*judge, prompt, candidate.response,
                                                        baseline.empty() ? pasta::strip(tree)
                                                                         : baseline,
                                                        reference.empty() ? pasta::strip(tree)
                                                                          : reference);
                candidate.quality = pasta::quality_ratio(judgments);
                candidate.score = pasta::score(candidate.efficiency, candidate.quality, weight);
                candidates.push_back(std::move(candidate));
            }
            records.push_back(pasta::select_pair(prompt, std::move(candidates), weight));
        } catch (const pasta::Error& e) {
            if (e.code() == pasta::Errc::DegeneratePair) {
                ++degenerate;
            } else {
                ++failed;
                std::cerr << "line " << line_no << ": " << e.what() << "\n";
            }
        } catch (const json::exception& e) {
            ++failed;
            std::cerr << "line " << line_no << ": " << e.what() << "\n";
        }
    }

    std::ofstream out_file;
    pasta::write_preference_jsonl(config, records, open_or_stdout(out_path, out_file));
    std::cerr << "pairs: " << records.size() << " degenerate-skips: " << degenerate
              << " failures: " << failed;
    if (config.lambda) std::cerr << " lambda: " << *config.lambda;
    else std::cerr << " lambda: quality-only";
    std::cerr << " efficiency: " << config.efficiency << "\n";
    return failed == 0 ? 0 : 1;
}

int cmd_loss_eval(const std::string& path, double alpha, double beta) {
    if (path.empty()) return 0;
    int line_no = 0;
    std::vector<double> losses;
    for (const auto& line : pasta::read_lines(path)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        json j = json::parse(line);
        double loss = pasta::bonbon_loss(
            j.at("logp_best").get<double>(), j.at("logp_worst").get<double>(),
            j.at("logp_best_init").get<double>(), j.at("logp_worst_init").get<double>(),
            j.value("alpha", alpha), j.value("beta", beta));
        losses.push_back(loss);
        std::cout << json{{"line", line_no}, {"loss", loss}}.dump() << "\n";
    }
    if (!losses.empty()) {
        double mean = 0.0;
        for (double l : losses) mean += l;
        mean /= static_cast<double>(losses.size());
        std::cout << json{{"mean_loss", mean}, {"count", losses.size()}}.dump() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PASTA-LANG toolchain"};
    app.require_subcommand(1);

    pasta::RunConfig config;
    std::string config_path;

    // validate
    auto* validate = app.add_subcommand("validate", "parse every record, report diagnostics");
    std::string validate_corpus;
    bool strict_warnings = false;
    validate->add_option("corpus", validate_corpus, "line-delimited corpus")->required();
    validate->add_flag("--strict", strict_warnings, "treat warnings as failures");

    // convert
    auto* convert = app.add_subcommand("convert", "inline annotations to canonical form");
    std::string convert_in, convert_out;
    convert->add_option("input", convert_in)->required();
    convert->add_option("--out", convert_out, "output path (default stdout)");

    // decode
    auto* decode = app.add_subcommand("decode", "interpret a corpus, emit speedup reports");
    std::string decode_csv, decode_jsonl, decode_trace;
    bool differential = false;
    decode->add_option("corpus", config.corpus)->required();
    add_interpreter_flags(decode, config);
    decode->add_option("--csv", decode_csv, "CSV report path");
    decode->add_option("--jsonl", decode_jsonl, "JSONL report path");
    decode->add_option("--trace", decode_trace, "per-event trace path");
    decode->add_flag("--differential", differential, "also run the naive interpreter and compare");
    decode->add_option("--config", config_path, "JSON config file (flags win)");

    // bench
    auto* bench = app.add_subcommand("bench", "synthetic-latency wall-clock comparison");
    std::string bench_csv;
    bench->add_option("corpus", config.corpus)->required();
    add_interpreter_flags(bench, config);
    bench->add_option("--latency-us", config.latency_us, "per-step latency in microseconds")
        ->default_val(2000);
    bench->add_option("--csv", bench_csv, "CSV report path");
    bench->add_option("--config", config_path, "JSON config file (flags win)");

    // prefs
    auto* prefs = app.add_subcommand("prefs", "score candidates, build preference pairs");
    std::string prefs_out;
    double lambda_value = 1.0;
    bool quality_only = false;
    prefs->add_option("corpus", config.corpus)->required();
    prefs->add_option("--lambda", lambda_value, "quality weight");
    prefs->add_flag("--quality-only", quality_only, "rank purely by quality");
    prefs->add_option("--efficiency", config.efficiency,
                      "speedup | harmonic | arithmetic | parallelism");
    prefs->add_option("--judge", config.judge, "mock | http")
        ->check(CLI::IsMember({"mock", "http"}));
    prefs->add_option("--candidates", config.num_candidates, "expected candidates per prompt");
    prefs->add_option("--seed", config.seed, "mock judge seed");
    prefs->add_option("--out", prefs_out, "output path (default stdout)");
    prefs->add_option("--config", config_path, "JSON config file (flags win)");

    // loss-eval
    auto* loss = app.add_subcommand("loss-eval", "evaluate the preference objective");
    std::string loss_path;
    double alpha = 0.005, beta = 1.0;
    bool loss_single = false;
    double lp_best = 0, lp_worst = 0, lp_best_init = 0, lp_worst_init = 0;
    loss->add_option("input", loss_path, "JSONL of log-probability records");
    loss->add_option("--alpha", alpha);
    loss->add_option("--beta", beta);
    loss->add_flag("--single", loss_single, "evaluate one tuple from flags");
    loss->add_option("--logp-best", lp_best);
    loss->add_option("--logp-worst", lp_worst);
    loss->add_option("--logp-best-init", lp_best_init);
    loss->add_option("--logp-worst-init", lp_worst_init);

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) return cmd_validate(validate_corpus, strict_warnings);
        if (convert->parsed()) return cmd_convert(convert_in, convert_out);
        if (decode->parsed()) {
            config.command = "decode";
            apply_config_file(*decode, config, config_path);
            return cmd_decode(config, decode_csv, decode_jsonl, decode_trace, differential);
        }
        if (bench->parsed()) {
            config.command = "bench";
            config.backend = "scripted";
            apply_config_file(*bench, config, config_path);
            return cmd_bench(config, bench_csv);
        }
        if (prefs->parsed()) {
            config.command = "prefs";
            config.lambda = quality_only ? std::nullopt : std::optional<double>(lambda_value);
            apply_config_file(*prefs, config, config_path);
            return cmd_prefs(config, prefs_out);
        }
        if (loss->parsed()) {
            if (loss_single) {
                double value =
                    pasta::bonbon_loss(lp_best, lp_worst, lp_best_init, lp_worst_init, alpha, beta);
                std::cout << nlohmann::json{{"loss", value}}.dump() << "\n";
                return 0;
            }
            return cmd_loss_eval(loss_path, alpha, beta);
        }
    } catch (const pasta::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
