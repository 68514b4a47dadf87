#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latoracle/batch.hpp"
#include "latoracle/error.hpp"
#include "latoracle/eval.hpp"
#include "latoracle/il/aggrevate.hpp"
#include "latoracle/lattice_io.hpp"
#include "latoracle/parallel.hpp"
#include "latoracle/tuner.hpp"

namespace latoracle::cli {

enum ExitCode : int { kOk = 0, kInputError = 1, kInternalError = 2 };

/// Verbosity from ORACLE_LOG: quiet|warn|info|debug or 0..3. Default warn.
enum class LogLevel : int { Quiet = 0, Warn = 1, Info = 2, Debug = 3 };

inline LogLevel log_level_from_env() {
    const char* v = std::getenv("ORACLE_LOG");
    if (!v) return LogLevel::Warn;
    const std::string s(v);
    if (s == "quiet" || s == "0") return LogLevel::Quiet;
    if (s == "info" || s == "2") return LogLevel::Info;
    if (s == "debug" || s == "3") return LogLevel::Debug;
    return LogLevel::Warn;
}

class Logger {
public:
    Logger(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
    void info(const std::string& msg) const { emit(LogLevel::Info, msg); }
    void debug(const std::string& msg) const { emit(LogLevel::Debug, msg); }
    void warn(const std::string& msg) const { emit(LogLevel::Warn, "warning: " + msg); }

private:
    void emit(LogLevel at, const std::string& msg) const {
        if (static_cast<int>(level_) >= static_cast<int>(at)) err_ << msg << '\n';
    }
    std::ostream& err_;
    LogLevel level_;
};

/// Every setting a subcommand may read. Defaults reproduce the synthetic
/// positive-control experiment.
struct CliConfig {
    std::string subcommand;
    std::string config;
    std::string lattices;
    std::string refs;
    std::string prefixes;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool force = false;
    unsigned jobs = default_jobs();
    double p = 0.25;
    double r = 0.5;
    std::vector<double> b_values{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double beta = 0.1;
    std::vector<double> beta_values{0.0, 0.1, 0.5, 1.0};
    int iterations = 20;

    // Synthetic task.
    std::uint32_t source_vocab = 8;
    std::uint32_t target_vocab = 32;
    double noise = 0.3;
    double coverage = 1.0;
    std::uint32_t candidates = 3;
    std::uint32_t min_length = 4;
    std::uint32_t max_length = 8;
    std::uint64_t map_seed = 1;
    std::size_t train = 2000;
    std::size_t heldout = 500;

    // Student training.
    int bc_epochs = 20;
    double bc_lr = 1.0;
    double lr = 1.0;
    std::string strategy = "mixture";
    int passes = 1;
    bool per_step = false;

    // tune
    std::vector<double> p_values;
    std::vector<double> r_values;
    std::vector<double> fractions{0.0, 0.2, 0.4, 0.6, 0.8};
    std::string prefix_source = "reference";
    // Pruning thresholds for tune; empty tunes on the unpruned lattices.
    std::vector<double> tune_b_values;

    // bench
    int repeats = 5;
    std::size_t dense = 200;

    // ppl
    std::size_t max_pos = 10;
    std::string policy = "bc";

    il::SyntheticTask task() const {
        il::SyntheticTask t;
        t.source_vocab = source_vocab;
        t.target_vocab = target_vocab;
        t.noise_rate = noise;
        t.coverage = coverage;
        t.candidates = candidates;
        t.min_length = min_length;
        t.max_length = max_length;
        t.map_seed = map_seed;
        return t;
    }
};

namespace detail {

/// Registers options on one subcommand and remembers how to print each
/// resolved value for the provenance header.
class Flags {
public:
    explicit Flags(CLI::App* app) : app_(app) {}

    template <class T>
    CLI::Option* opt(const std::string& name, T& field, const std::string& help) {
        auto* o = app_->add_option("--" + name, field, help)->capture_default_str();
        fields_.emplace_back(name, [&field] { return nlohmann::json(field); });
        return o;
    }

    template <class T>
    CLI::Option* list(const std::string& name, std::vector<T>& field, const std::string& help) {
        return opt(name, field, help)->delimiter(',');
    }

    CLI::Option* flag(const std::string& name, bool& field, const std::string& help) {
        auto* o = app_->add_flag("--" + name, field, help);
        fields_.emplace_back(name, [&field] { return nlohmann::json(field); });
        return o;
    }

    nlohmann::json resolved() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [name, get] : fields_) j[name] = get();
        return j;
    }

    CLI::App* app() const { return app_; }

private:
    CLI::App* app_;
    std::vector<std::pair<std::string, std::function<nlohmann::json()>>> fields_;
};

/// Feeds keys of a flat JSON object to options not given on the command line.
inline void apply_json_config(CLI::App* app, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
    if (!j.is_object()) throw InputError(path + ": config must be a JSON object");
    auto as_string = [&](const std::string& key, const nlohmann::json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
        if (v.is_number()) return v.dump();
        throw InputError(path + ": value of '" + key + "' must be a string, number or boolean");
    };
    for (const auto& [key, value] : j.items()) {
        if (key == "config") throw InputError(path + ": config files cannot include other config files");
        CLI::Option* opt = app->get_option_no_throw("--" + key);
        if (!opt) throw InputError(path + ": unknown key '" + key + "' for " + app->get_name());
        if (opt->count() > 0) continue;
        std::vector<std::string> values;
        if (value.is_array()) {
            for (const auto& v : value) values.push_back(as_string(key, v));
        } else {
            values.push_back(as_string(key, value));
        }
        try {
            opt->add_result(values);
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw InputError(path + ": " + key + ": " + e.what());
        }
    }
}

/// Creates `dir` and refuses to overwrite any of `names` without --force.
inline std::vector<std::filesystem::path> prepare_outputs(const std::string& dir,
                                                          const std::vector<std::string>& names, bool force) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory '" + dir + "': " + ec.message());
    std::vector<fs::path> paths;
    for (const auto& n : names) {
        auto p = fs::path(dir) / n;
        if (fs::exists(p) && !force)
            throw InputError("refusing to overwrite '" + p.string() + "' (use --force)");
        paths.push_back(std::move(p));
    }
    return paths;
}

template <class Fn>
void write_file(const std::filesystem::path& path, Fn&& fn) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    fn(out);
    if (!out) throw InputError("error while writing '" + path.string() + "'");
}

inline il::ExplorationStrategy parse_strategy(const std::string& name, double beta) {
    if (name == "uniform") return il::ExplorationStrategy::uniform();
    if (name == "argmax") return il::ExplorationStrategy::student_argmax();
    if (name == "mixture") return il::ExplorationStrategy::mixture(beta);
    throw InputError("strategy must be uniform, argmax or mixture, got '" + name + "'");
}

struct Corpora {
    std::vector<il::Example> train;
    std::vector<il::Example> heldout;
};

// Held-out examples come from seed + 1000 so they never share a stream with
// the training draws.
inline Corpora make_corpora(const CliConfig& c) {
    const auto task = c.task();
    if (c.train < 1 || c.heldout < 1) throw InputError("train and heldout sizes must be >= 1");
    return {il::generate_task(task, c.train, c.seed), il::generate_task(task, c.heldout, c.seed + 1000)};
}

inline il::TabularPolicy train_bc(const CliConfig& c, std::span<const il::Example> train, const Logger& log) {
    if (c.bc_epochs < 0) throw InputError("bc-epochs must be >= 0");
    il::TabularPolicy policy(c.task().num_actions(), c.bc_lr);
    const auto nll = il::behavioral_cloning(policy, train, c.bc_epochs);
    log.info("bc: " + std::to_string(c.bc_epochs) + " epochs, train NLL " + format_fixed(nll.front()) +
             " -> " + format_fixed(nll.back()));
    return policy;
}

inline il::AggrevateConfig aggrevate_config(const CliConfig& c) {
    if (c.iterations < 0) throw InputError("iterations must be >= 0");
    il::AggrevateConfig ac;
    ac.iterations = c.iterations;
    ac.strategy = parse_strategy(c.strategy, c.beta);
    ac.theta = ThetaParams(c.p, c.r);
    ac.passes = c.passes;
    ac.per_step = c.per_step;
    ac.seed = c.seed;
    ac.jobs = c.jobs;
    return ac;
}

struct Inputs {
    SymbolTable symtab;
    std::vector<Lattice> lattices;
    std::vector<TokenSeq> refs;
    std::vector<TokenSeq> prefixes;
};

inline Inputs read_inputs(const CliConfig& c, bool with_prefixes) {
    if (c.lattices.empty()) throw InputError("--lattices is required");
    if (c.refs.empty()) throw InputError("--refs is required");
    Inputs in;
    in.lattices = read_lattice_file(c.lattices, in.symtab);
    in.refs = read_token_lines(c.refs, in.symtab);
    if (with_prefixes) {
        if (c.prefixes.empty()) throw InputError("--prefixes is required");
        in.prefixes = read_token_lines(c.prefixes, in.symtab);
    }
    return in;
}

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_oracle(const CliConfig& c, bool with_prefixes, std::ostream& out) {
    const auto in = read_inputs(c, with_prefixes);
    const auto results = run_oracle_batch(in.lattices, in.refs, with_prefixes ? &in.prefixes : nullptr,
                                          ThetaParams(c.p, c.r), c.jobs);
    write_oracle_tsv(out, results, in.symtab);
}

inline void cmd_tune(const CliConfig& c, std::ostream& out) {
    const auto source = parse_prefix_source(c.prefix_source);
    const auto in = read_inputs(c, source == PrefixSource::Imperfect);
    if (in.refs.size() != in.lattices.size())
        throw InputError("got " + std::to_string(in.lattices.size()) + " lattices but " +
                         std::to_string(in.refs.size()) + " references");
    if (source == PrefixSource::Imperfect && in.prefixes.size() != in.lattices.size())
        throw InputError("got " + std::to_string(in.lattices.size()) + " lattices but " +
                         std::to_string(in.prefixes.size()) + " prefixes");
    std::vector<DevExample> dev;
    for (std::size_t i = 0; i < in.lattices.size(); ++i)
        dev.push_back(
            {in.lattices[i], in.refs[i], source == PrefixSource::Imperfect ? in.prefixes[i] : in.refs[i]});
    auto grid = GridSpec::standard();
    if (!c.p_values.empty()) grid.p_values = c.p_values;
    if (!c.r_values.empty()) grid.r_values = c.r_values;
    grid.prefix_fractions = c.fractions;
    grid.b_values = c.tune_b_values;
    const auto paths = prepare_outputs(c.out_dir, {"tune.csv"}, c.force);
    const auto res = grid_search(dev, grid, c.seed, c.jobs);
    write_file(paths[0], [&](std::ostream& f) { write_grid_csv(f, res, source); });
    out << "best\tb=" << (res.best.b ? format_fixed(*res.best.b, 4) : "")
        << "\tp=" << format_fixed(res.best.p, 4) << "\tr=" << format_fixed(res.best.r, 4)
        << "\tcorpus_bleu=" << format_fixed(res.best.corpus_bleu) << "\tskipped=" << res.best.skipped << '\n';
}

inline void cmd_simulate(const CliConfig& c, std::ostream& out, const Logger& log) {
    const auto paths = prepare_outputs(c.out_dir, {"curves.csv", "records.csv", "summary.json"}, c.force);
    const auto data = make_corpora(c);
    auto policy = train_bc(c, data.train, log);
    const double bc_bleu = il::student_bleu(policy, data.heldout);
    log.info("bc held-out BLEU " + format_fixed(100.0 * bc_bleu, 2));
    policy.set_learning_rate(c.lr);
    const auto oracles = il::make_oracles(data.train);
    const auto res = il::aggrevate_train(policy, data.train, oracles, aggrevate_config(c), data.heldout);
    for (const auto& it : res.iterations)
        log.debug("iteration " + std::to_string(it.iteration) + ": B_s " + format_fixed(it.b_s) + " B_o " +
                  format_fixed(it.b_o) + " B_oe " + format_fixed(it.b_oe) + " ratio " +
                  format_fixed(it.ratio) + " held-out " + format_fixed(it.heldout_bleu));
    const auto curve = eval::curve_log(res.iterations);
    write_file(paths[0], [&](std::ostream& f) { eval::write_curves_csv(f, curve); });
    write_file(paths[1], [&](std::ostream& f) { eval::write_records_csv(f, res.iterations); });

    const double final_bleu = res.iterations.empty() ? bc_bleu : res.iterations.back().heldout_bleu;
    nlohmann::ordered_json summary;
    summary["bc_heldout_bleu"] = bc_bleu;
    summary["final_heldout_bleu"] = final_bleu;
    summary["gain_bleu_x100"] = 100.0 * (final_bleu - bc_bleu);
    summary["calibration"] = {{"scale", res.calibration.scale}, {"offset", res.calibration.offset}};
    summary["iterations"] = res.iterations.size();
    write_file(paths[2], [&](std::ostream& f) { f << summary.dump(2) << '\n'; });
    out << "bc_heldout_bleu\t" << format_fixed(100.0 * bc_bleu, 4) << "\nfinal_heldout_bleu\t"
        << format_fixed(100.0 * final_bleu, 4) << '\n';
}

inline void cmd_sweep(const CliConfig& c, std::ostream& out, const Logger& log) {
    const auto paths = prepare_outputs(c.out_dir, {"sweep.csv"}, c.force);
    const auto data = make_corpora(c);
    const auto policy = train_bc(c, data.train, log);
    const auto rows = eval::sweep_table(data.heldout, c.b_values, c.beta_values, policy,
                                        ThetaParams(c.p, c.r), c.seed, c.jobs);
    write_file(paths[0], [&](std::ostream& f) { eval::write_sweep_csv(f, rows); });
    out << "rows\t" << rows.size() << '\n';
}

inline void cmd_bench(const CliConfig& c, std::ostream& out) {
    std::vector<eval::BenchQuery> corpus;
    if (c.lattices.empty()) {
        corpus = eval::dense_bench_corpus(c.dense, c.seed);
    } else {
        const auto in = read_inputs(c, !c.prefixes.empty());
        if (in.refs.size() != in.lattices.size()) throw InputError("lattice and reference counts differ");
        if (!in.prefixes.empty() && in.prefixes.size() != in.lattices.size())
            throw InputError("lattice and prefix counts differ");
        for (std::size_t i = 0; i < in.lattices.size(); ++i) {
            TokenSeq prefix;
            if (!in.prefixes.empty()) {
                prefix = in.prefixes[i];
            } else {
                const auto best = best_model_path(in.lattices[i]).tokens;
                prefix.assign(best.begin(), best.begin() + static_cast<long>(best.size() / 2));
            }
            corpus.push_back({in.lattices[i], in.refs[i], std::move(prefix)});
        }
    }
    const auto paths = prepare_outputs(c.out_dir, {"bench.csv"}, c.force);
    const auto rows = eval::bench_oracle(corpus, c.b_values, c.repeats, ThetaParams(c.p, c.r));
    write_file(paths[0], [&](std::ostream& f) { eval::write_bench_csv(f, rows); });
    out << "rows\t" << rows.size() << '\n';
}

inline void cmd_ppl(const CliConfig& c, std::ostream& out, const Logger& log) {
    if (c.policy != "bc" && c.policy != "aggrevate") throw InputError("policy must be bc or aggrevate");
    const auto paths = prepare_outputs(c.out_dir, {"ppl.csv"}, c.force);
    const auto data = make_corpora(c);
    auto policy = train_bc(c, data.train, log);
    if (c.policy == "aggrevate") {
        policy.set_learning_rate(c.lr);
        il::aggrevate_train(policy, data.train, il::make_oracles(data.train), aggrevate_config(c));
    }
    const auto rows = eval::perplexity_by_position(policy, data.heldout, c.max_pos);
    write_file(paths[0], [&](std::ostream& f) { eval::write_ppl_csv(f, rows); });
    out << "rows\t" << rows.size() << '\n';
}

inline void add_common(Flags& f, CliConfig& c, bool stochastic, bool writes_files) {
    f.app()->add_option("--config", c.config, "JSON file of option values; flags override it");
    f.opt("jobs", c.jobs, "Concurrent oracle calls")->check(CLI::PositiveNumber);
    f.opt("p", c.p, "Linear-BLEU unigram precision p");
    f.opt("r", c.r, "Linear-BLEU n-gram precision ratio r");
    if (stochastic) f.opt("seed", c.seed, "Random seed (required)");
    if (writes_files) {
        f.opt("out", c.out_dir, "Output directory");
        f.flag("force", c.force, "Overwrite existing output files");
    }
}

inline void add_task(Flags& f, CliConfig& c) {
    f.opt("source-vocab", c.source_vocab, "Source vocabulary size");
    f.opt("target-vocab", c.target_vocab, "Target vocabulary size (content tokens)");
    f.opt("noise", c.noise, "Student noise rate epsilon in [0, 1)");
    f.opt("coverage", c.coverage, "Lattice coverage c in (0, 1]");
    f.opt("candidates", c.candidates, "Candidates per lattice position k");
    f.opt("min-length", c.min_length, "Minimum sentence length");
    f.opt("max-length", c.max_length, "Maximum sentence length");
    f.opt("map-seed", c.map_seed, "Seed of the substitution map");
    f.opt("train", c.train, "Training examples");
    f.opt("heldout", c.heldout, "Held-out examples");
    f.opt("bc-epochs", c.bc_epochs, "Behavioral-cloning epochs");
    f.opt("bc-lr", c.bc_lr, "Behavioral-cloning learning rate");
}

inline void add_aggrevate(Flags& f, CliConfig& c) {
    f.opt("iterations", c.iterations, "AggreVaTe iterations J");
    f.opt("lr", c.lr, "AggreVaTe learning rate (warm start)");
    f.opt("beta", c.beta, "Mixture exploration randomness");
    f.opt("strategy", c.strategy, "Exploration: uniform, argmax or mixture");
    f.opt("passes", c.passes, "Gradient passes over the loss terms per iteration");
    f.flag("per-step", c.per_step, "Apply each loss term as its own step");
}

}  // namespace detail

/// Parses argv, runs one subcommand and maps errors to exit codes. `out`
/// receives primary output; `err` the config header, logs and errors.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
    CliConfig c;
    CLI::App app{"Lattice BLEU oracle and AggreVaTe harness", "latoracle"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    struct Sub {
        CLI::App* app;
        std::unique_ptr<detail::Flags> flags;
        bool stochastic;
    };
    std::vector<Sub> subs;
    auto add_sub = [&](const std::string& name, const std::string& help, bool stochastic,
                       bool writes) -> auto& {
        auto* s = app.add_subcommand(name, help);
        subs.push_back({s, std::make_unique<detail::Flags>(s), stochastic});
        detail::add_common(*subs.back().flags, c, stochastic, writes);
        return *subs.back().flags;
    };

    for (const char* name : {"decode", "continue"}) {
        const bool cont = std::string(name) == "continue";
        auto& f = add_sub(name,
                          cont ? "Continue prefixes with the oracle (TSV on stdout)"
                               : "Decode oracle translations from scratch (TSV on stdout)",
                          false, false);
        f.opt("lattices", c.lattices, "Lattice file, one PLF or JSON lattice per line");
        f.opt("refs", c.refs, "Reference file, one tokenized sentence per line");
        if (cont) f.opt("prefixes", c.prefixes, "Prefix file, one per line; empty lines decode from scratch");
    }
    {
        auto& f = add_sub("tune", "Grid search for p and r on a dev set", true, true);
        f.opt("lattices", c.lattices, "Dev lattices");
        f.opt("refs", c.refs, "Dev references");
        f.opt("prefixes", c.prefixes, "Imperfect translations prefixes are cut from");
        f.opt("prefix-source", c.prefix_source, "reference or imperfect");
        f.list("p-values", c.p_values, "p grid (default 0.10..0.95 step 0.05)");
        f.list("r-values", c.r_values, "r grid (default 0.10..0.95 step 0.05)");
        f.list("fractions", c.fractions, "Prefix fractions");
        f.list("b", c.tune_b_values, "Pruning thresholds for an outer loop (default none)");
    }
    {
        auto& f = add_sub("simulate", "Behavioral cloning then AggreVaTe on the synthetic task", true, true);
        detail::add_task(f, c);
        detail::add_aggrevate(f, c);
    }
    {
        auto& f = add_sub("sweep", "Oracle continuation scores over (b, beta)", true, true);
        detail::add_task(f, c);
        f.list("b", c.b_values, "Pruning thresholds");
        f.list("beta", c.beta_values, "Exploration randomness values");
    }
    {
        auto& f = add_sub("bench", "Continuation time and memory over pruning thresholds", true, true);
        f.opt("lattices", c.lattices, "Lattice file (default: dense synthetic lattices)");
        f.opt("refs", c.refs, "References for --lattices");
        f.opt("prefixes", c.prefixes, "Prefixes for --lattices (default: half the model-best path)");
        f.opt("dense", c.dense, "Number of dense synthetic lattices");
        f.list("b", c.b_values, "Pruning thresholds");
        f.opt("repeats", c.repeats, "Timing repeats (median is reported)");
    }
    {
        auto& f = add_sub("ppl", "Teacher-forced perplexity by target position", true, true);
        detail::add_task(f, c);
        detail::add_aggrevate(f, c);
        f.opt("max-pos", c.max_pos, "Number of positions");
        f.opt("policy", c.policy, "bc or aggrevate");
    }

    const Logger log(err, log_level_from_env());
    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e, out, err);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e, out, err);
        } catch (const CLI::CallForVersion& e) {
            return app.exit(e, out, err);
        } catch (const CLI::ParseError& e) {
            err << "error: " << e.what() << '\n';
            return kInputError;
        }

        const Sub* active = nullptr;
        for (const auto& s : subs)
            if (s.app->parsed()) active = &s;
        c.subcommand = active->app->get_name();
        if (!c.config.empty()) detail::apply_json_config(active->app, c.config);
        if (active->stochastic && active->app->get_option("--seed")->count() == 0)
            throw InputError(c.subcommand + " needs --seed (or \"seed\" in --config)");
        if (c.jobs < 1) throw InputError("jobs must be >= 1");

        nlohmann::ordered_json header;
        header["version"] = kVersion;
        header["subcommand"] = c.subcommand;
        const auto resolved = active->flags->resolved();
        for (const auto& [k, v] : resolved.items()) header[k] = v;
        err << "# config " << header.dump() << '\n';

        if (c.subcommand == "decode") detail::cmd_oracle(c, false, out);
        if (c.subcommand == "continue") detail::cmd_oracle(c, true, out);
        if (c.subcommand == "tune") detail::cmd_tune(c, out);
        if (c.subcommand == "simulate") detail::cmd_simulate(c, out, log);
        if (c.subcommand == "sweep") detail::cmd_sweep(c, out, log);
        if (c.subcommand == "bench") detail::cmd_bench(c, out);
        if (c.subcommand == "ppl") detail::cmd_ppl(c, out, log);
        out.flush();
        return kOk;
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kInternalError;
    }
}

}  // namespace latoracle::cli
