#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cnf/bayesopt.hpp"
#include "cnf/checkpoint.hpp"
#include "cnf/config.hpp"
#include "cnf/data.hpp"
#include "cnf/errors.hpp"
#include "cnf/metrics.hpp"
#include "cnf/model.hpp"
#include "cnf/train.hpp"

namespace cnf::cli {

namespace fs = std::filesystem;

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

inline unsigned threads_from_env() {
    const char* env = std::getenv("CNF_THREADS");
    if (env == nullptr || *env == '\0') return 0;
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0')
        throw config_error(std::string("CNF_THREADS must be a non-negative integer, got '") +
                           env + "'");
    return static_cast<unsigned>(v);
}

inline std::string fmt_shape(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

struct PreparedData {
    std::vector<Sample> train;
    std::vector<Sample> val;
    NormStats stats;
    std::vector<std::string> class_names;
};

/// Loads (or synthesizes) the dataset named by [data], splits it, and
/// standardizes both halves with the training statistics.
inline PreparedData assemble_data(const RunConfig& cfg, const fs::path& config_dir,
                                  const fs::path& out_dir, std::ostream& out) {
    PreparedData data;
    DatasetManifest manifest;
    if (cfg.data.synth_n > 0 && cfg.data.manifest.empty()) {
        manifest = gen_synthetic(cfg.data.synth_n, cfg.data.side, cfg.data.synth_seed,
                                 out_dir / "data");
        out << "synthesized " << manifest.entries.size() << " samples under "
            << (out_dir / "data").string() << "\n";
    } else if (!cfg.data.manifest.empty()) {
        manifest = load_manifest(resolve(config_dir, cfg.data.manifest));
    } else {
        throw config_error("[data] must set either 'manifest' or 'synth_n'");
    }
    data.class_names = manifest.class_names;

    std::vector<Sample> all = load_dataset(manifest, cfg.data.side);
    if (!cfg.data.val_manifest.empty()) {
        const DatasetManifest vm =
            load_manifest(resolve(config_dir, cfg.data.val_manifest));
        data.train = std::move(all);
        data.val = load_dataset(vm, cfg.data.side);
    } else {
        Rng split_rng(cfg.data.seed);
        auto [train, val] =
            split_dataset(all, cfg.data.split, split_rng, cfg.data.stratified);
        data.train = std::move(train);
        data.val = std::move(val);
    }

    if (cfg.data.normalize) {
        data.stats = cfg.data.stats.empty()
                         ? compute_norm_stats(data.train)
                         : load_norm_stats(resolve(config_dir, cfg.data.stats));
        apply_norm(data.train, data.stats);
        apply_norm(data.val, data.stats);
    }
    return data;
}

inline RunConfig read_config(const fs::path& path, std::string& text) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    text = ss.str();
    return parse_config(text);
}

inline void print_warnings(const RunConfig& cfg, std::ostream& err) {
    for (const std::string& w : cfg.warnings) err << "warning: " << w << "\n";
}

inline std::string fmt9(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

} // namespace detail

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

inline int cmd_synth(const std::string& out_dir, std::size_t n, std::size_t side,
                     std::uint64_t seed, std::ostream& out) {
    const DatasetManifest m = gen_synthetic(n, side, seed, out_dir);
    out << "wrote " << m.entries.size() << " images (" << m.class_names.size()
        << " classes x " << n << ") of " << side << "x" << side << " px to " << out_dir
        << "\n";
    out << "manifest: " << (fs::path(out_dir) / "manifest.csv").string() << "\n";
    return 0;
}

inline int cmd_inspect(const std::string& checkpoint_path, const std::string& config_path,
                       std::ostream& out, std::ostream& err) {
    ModelSpec model;
    if (!checkpoint_path.empty()) {
        model = checkpoint_load(checkpoint_path).model;
    } else if (!config_path.empty()) {
        std::string text;
        const RunConfig cfg = detail::read_config(config_path, text);
        detail::print_warnings(cfg, err);
        if (!cfg.has_model) throw config_error("config has no [model] layers to inspect");
        model = cfg.model;
    } else {
        throw config_error("inspect needs --checkpoint or --config");
    }

    const ModelSpec res = resolved(model);
    const auto shapes = infer_shapes(res);
    const auto params = count_params(res);

    out << "input: " << detail::fmt_shape({res.input_shape[0], res.input_shape[1],
                                           res.input_shape[2]})
        << ", classes: " << res.class_count << "\n\n";
    out << std::left << std::setw(22) << "layer" << std::setw(10) << "params"
        << "o/p shape" << "\n";
    for (std::size_t i = 0; i < res.layers.size(); ++i) {
        out << std::left << std::setw(22) << render_layer(res.layers[i]) << std::setw(10)
            << params.per_layer[i] << detail::fmt_shape(shapes[i]) << "\n";
    }
    out << std::left << std::setw(22) << "total" << params.total << "\n";
    return 0;
}

inline int cmd_prepare(const std::string& config_path, std::ostream& out,
                       std::ostream& err) {
    std::string text;
    const RunConfig cfg = detail::read_config(config_path, text);
    detail::print_warnings(cfg, err);
    const fs::path config_dir = fs::path(config_path).parent_path();
    const fs::path out_dir = detail::resolve(config_dir, cfg.out_dir);
    fs::create_directories(out_dir / "prepared");

    if (cfg.data.manifest.empty() && cfg.data.synth_n == 0)
        throw config_error("[data] must set either 'manifest' or 'synth_n'");
    DatasetManifest manifest;
    if (cfg.data.synth_n > 0 && cfg.data.manifest.empty())
        manifest = gen_synthetic(cfg.data.synth_n, cfg.data.side, cfg.data.synth_seed,
                                 out_dir / "data");
    else
        manifest = load_manifest(detail::resolve(config_dir, cfg.data.manifest));

    std::vector<Sample> all = load_dataset(manifest, cfg.data.side);
    Rng rng(cfg.data.seed);
    auto [train, val] = split_dataset(all, cfg.data.split, rng, cfg.data.stratified);

    if (cfg.data.aug_enable) {
        const std::size_t originals = train.size();
        for (std::size_t i = 0; i < originals; ++i) {
            std::vector<Sample> copies = augment(train[i], cfg.data.augment, rng);
            for (Sample& c : copies) train.push_back(std::move(c));
        }
    }

    auto write_set = [&](const std::vector<Sample>& set, const std::string& prefix) {
        DatasetManifest m;
        m.root = out_dir / "prepared";
        m.class_names = manifest.class_names;
        for (std::size_t i = 0; i < set.size(); ++i) {
            std::ostringstream name;
            name << prefix << "_" << std::setw(6) << std::setfill('0') << i << ".pgm";
            save_pgm(m.root / name.str(), set[i].image);
            m.entries.push_back(ManifestEntry{name.str(), set[i].label});
        }
        write_manifest(m, out_dir / (prefix + "_manifest.csv"));
    };
    write_set(train, "train");
    write_set(val, "val");

    const NormStats stats = compute_norm_stats(train);
    save_norm_stats(stats, out_dir / "stats.txt");

    out << "prepared " << train.size() << " training and " << val.size()
        << " validation samples under " << (out_dir / "prepared").string() << "\n";
    out << "train manifest: " << (out_dir / "train_manifest.csv").string() << "\n";
    out << "val manifest:   " << (out_dir / "val_manifest.csv").string() << "\n";
    out << "stats: mean " << stats.mean << ", std " << stats.stddev << " -> "
        << (out_dir / "stats.txt").string() << "\n";
    return 0;
}

inline int cmd_train(const std::string& config_path, std::ostream& out,
                     std::ostream& err) {
    std::string text;
    RunConfig cfg = detail::read_config(config_path, text);
    detail::print_warnings(cfg, err);
    if (!cfg.has_model) throw config_error("[model] must define 'layers'");
    const fs::path config_dir = fs::path(config_path).parent_path();
    const fs::path out_dir = detail::resolve(config_dir, cfg.out_dir);
    fs::create_directories(out_dir);

    const detail::PreparedData data =
        detail::assemble_data(cfg, config_dir, out_dir, out);

    cfg.train.config_digest = fnv1a64(text);
    cfg.train.threads = detail::threads_from_env();

    const TrainResult result =
        train(cfg.model, data.train, data.val, cfg.train, data.stats);

    checkpoint_save(result.best, out_dir / "model.ckpt");
    {
        std::ofstream hist(out_dir / "history.csv", std::ios::binary);
        if (!hist) throw io_error("cannot write " + (out_dir / "history.csv").string());
        result.history.write_csv(hist);
    }

    const EpochRecord& last = result.history.records.back();
    out << "trained " << result.history.records.size() << " epochs (" << data.train.size()
        << " train / " << data.val.size() << " val samples)\n";
    out << "best epoch " << result.best.epoch << ": val_loss "
        << detail::fmt9(result.history.records[result.best.epoch - 1].val_loss)
        << ", val_acc "
        << detail::fmt9(result.history.records[result.best.epoch - 1].val_acc) << "\n";
    out << "final epoch " << last.epoch << ": train_loss " << detail::fmt9(last.train_loss)
        << ", val_loss " << detail::fmt9(last.val_loss) << "\n";
    out << "checkpoint: " << (out_dir / "model.ckpt").string() << "\n";
    out << "history:    " << (out_dir / "history.csv").string() << "\n";
    return 0;
}

inline int cmd_tune(const std::string& config_path, std::ostream& out, std::ostream& err) {
    std::string text;
    RunConfig cfg = detail::read_config(config_path, text);
    detail::print_warnings(cfg, err);
    if (!cfg.has_model) throw config_error("[model] must define 'layers'");
    if (cfg.space.dims.empty())
        throw config_error("[space] must define at least one tunable dimension");
    const fs::path config_dir = fs::path(config_path).parent_path();
    const fs::path out_dir = detail::resolve(config_dir, cfg.out_dir);
    fs::create_directories(out_dir);

    const detail::PreparedData data =
        detail::assemble_data(cfg, config_dir, out_dir, out);
    const unsigned threads = detail::threads_from_env();
    const std::uint64_t digest = fnv1a64(text);

    std::ofstream log(out_dir / "trials.csv", std::ios::binary);
    if (!log) throw io_error("cannot write " + (out_dir / "trials.csv").string());
    log << "trial,status,loss,seconds";
    for (const Dimension& d : cfg.space.dims) log << "," << d.name;
    log << "\n" << std::flush;

    auto objective = [&](const ParamMap& params) {
        RunConfig trial_cfg = cfg;
        apply_tuned_params(trial_cfg, params);
        trial_cfg.train.epochs_max = cfg.tune.epochs;
        trial_cfg.train.config_digest = digest;
        trial_cfg.train.threads = threads;
        const TrainResult r =
            train(trial_cfg.model, data.train, data.val, trial_cfg.train, data.stats);
        return r.history.records.back().val_loss; // short-run final validation loss
    };

    TuneOptions opts;
    opts.budget = cfg.tune.budget;
    opts.init = cfg.tune.init > 0
                    ? cfg.tune.init
                    : std::max<std::size_t>(5, cfg.space.dims.size() + 1);
    opts.kernel = cfg.tune.kernel;
    opts.on_trial = [&](const TrialRecord& rec) {
        log << rec.index << "," << (rec.ok ? "ok" : "failed") << ","
            << detail::fmt9(rec.objective) << "," << detail::fmt9(rec.seconds);
        for (const Dimension& d : cfg.space.dims) log << "," << rec.config.at(d.name).str();
        log << "\n" << std::flush;
        out << "trial " << rec.index << (rec.ok ? "" : " [failed]") << ": loss "
            << detail::fmt9(rec.objective) << "\n";
    };

    Rng rng(cfg.tune.seed);
    const TuneResult result = tune(objective, cfg.space, opts, rng);

    RunConfig best_cfg = cfg;
    apply_tuned_params(best_cfg, result.best.config);
    // the emitted config must load from its new location
    if (!best_cfg.data.manifest.empty())
        best_cfg.data.manifest =
            fs::absolute(detail::resolve(config_dir, best_cfg.data.manifest)).string();
    if (!best_cfg.data.val_manifest.empty())
        best_cfg.data.val_manifest =
            fs::absolute(detail::resolve(config_dir, best_cfg.data.val_manifest)).string();
    if (!best_cfg.data.stats.empty())
        best_cfg.data.stats =
            fs::absolute(detail::resolve(config_dir, best_cfg.data.stats)).string();
    best_cfg.out_dir = fs::absolute(out_dir).string();
    {
        std::ofstream bc(out_dir / "best_config.ini", std::ios::binary);
        if (!bc) throw io_error("cannot write " + (out_dir / "best_config.ini").string());
        bc << render_config(best_cfg);
    }

    out << "best trial " << result.best.index << ": loss "
        << detail::fmt9(result.best.objective) << "\n";
    for (const Dimension& d : cfg.space.dims)
        out << "  " << d.name << " = " << result.best.config.at(d.name).str() << "\n";
    out << "trial log:   " << (out_dir / "trials.csv").string() << "\n";
    out << "best config: " << (out_dir / "best_config.ini").string() << "\n";
    return 0;
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& manifest_path,
                    const std::string& confusion_out, std::ostream& out) {
    const Checkpoint ckpt = checkpoint_load(checkpoint_path);
    Network net = network_from_checkpoint(ckpt);

    const DatasetManifest manifest = load_manifest(manifest_path);
    std::vector<Sample> samples = load_dataset(manifest, net.spec().input_shape[1]);
    apply_norm(samples, NormStats{ckpt.norm_mean, ckpt.norm_std});

    const EvalResult res = evaluate_model(net, samples);
    std::vector<std::size_t> y_true;
    y_true.reserve(samples.size());
    for (const Sample& s : samples) y_true.push_back(s.label);
    const ConfusionMatrix cm = confusion_matrix(y_true, res.predictions,
                                                net.spec().class_count,
                                                manifest.class_names);

    out << render_report(classification_report(cm)) << "\n";
    out << "loss " << detail::fmt9(res.loss) << ", accuracy " << detail::fmt9(res.accuracy)
        << "\n";
    const SkewResult skew = skew_check(cm, 0.05);
    out << "skew check (eps 0.05): " << (skew.pass ? "pass" : "FAIL") << " (accuracy "
        << detail::fmt9(skew.accuracy) << " vs prior " << detail::fmt9(skew.prior) << ")\n";

    std::ofstream cf(confusion_out, std::ios::binary);
    if (!cf) throw io_error("cannot write " + confusion_out);
    write_confusion_csv(cm, cf);
    out << "confusion matrix: " << confusion_out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

/// Runs one CLI invocation. `args` excludes the program name. Exit codes:
/// 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out,
                    std::ostream& err) {
    CLI::App app{"convolutional network trainer with GP-based hyperparameter tuning",
                 "cnf"};
    app.require_subcommand(1);

    std::string synth_out = "data";
    std::size_t synth_n = 200, synth_side = 32;
    std::uint64_t synth_seed = 7;
    CLI::App* synth = app.add_subcommand("synth-data", "generate the synthetic 4-class set");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n", synth_n, "samples per class")->required();
    synth->add_option("--side", synth_side, "image side in pixels");
    synth->add_option("--seed", synth_seed, "generator seed");

    std::string prepare_config;
    CLI::App* prepare = app.add_subcommand("prepare", "augment, split and normalize a dataset");
    prepare->add_option("--config", prepare_config, "run config file")->required();

    std::string train_config;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", train_config, "run config file")->required();

    std::string tune_config;
    CLI::App* tune_cmd = app.add_subcommand("tune", "tune hyperparameters with GP + EI");
    tune_cmd->add_option("--config", tune_config, "run config file")->required();

    std::string eval_ckpt, eval_manifest, eval_confusion = "confusion.csv";
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest CSV")->required();
    eval_cmd->add_option("--out", eval_confusion, "confusion matrix CSV path");

    std::string inspect_ckpt, inspect_config;
    CLI::App* inspect_cmd =
        app.add_subcommand("inspect", "print layer shapes and parameter counts");
    inspect_cmd->add_option("--checkpoint", inspect_ckpt, "checkpoint file");
    inspect_cmd->add_option("--config", inspect_config, "run config file");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        err << app.help();
        return 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_out, synth_n, synth_side, synth_seed, out);
        if (prepare->parsed()) return cmd_prepare(prepare_config, out, err);
        if (train_cmd->parsed()) return cmd_train(train_config, out, err);
        if (tune_cmd->parsed()) return cmd_tune(tune_config, out, err);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_manifest, eval_confusion, out);
        if (inspect_cmd->parsed()) return cmd_inspect(inspect_ckpt, inspect_config, out, err);
    } catch (const numerical_error& e) {
        err << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const contract_error& e) {
        err << "internal error: " << e.what() << "\n";
        return 3;
    } catch (const error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

} // namespace cnf::cli
