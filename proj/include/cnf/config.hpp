#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cnf/bayesopt.hpp"
#include "cnf/data.hpp"
#include "cnf/errors.hpp"
#include "cnf/layers.hpp"
#include "cnf/train.hpp"

namespace cnf {

/// [data] section: where samples come from and how they are prepared.
struct DataSection {
    std::string manifest;     // path, relative to the config file
    std::string val_manifest; // optional pre-split validation manifest
    std::string stats;        // optional normalization stats file
    std::size_t side = 32;
    double split = 0.8;
    bool stratified = true;
    bool normalize = true;
    std::uint64_t seed = 7;   // drives augmentation and splitting
    std::size_t synth_n = 0;  // per-class count; > 0 generates a synthetic set
    std::uint64_t synth_seed = 7;
    bool aug_enable = false;
    AugmentConfig augment;
};

struct TuneSection {
    std::size_t budget = 15;
    std::size_t init = 0; // 0 = max(5, dims + 1)
    int epochs = 3;       // short-run training length per trial
    KernelKind kernel = KernelKind::matern52;
    std::uint64_t seed = 99;
};

struct RunConfig {
    DataSection data;
    ModelSpec model;
    bool has_model = false;
    TrainConfig train;
    TuneSection tune;
    SearchSpace space;
    std::string out_dir = "out";
    std::vector<std::string> warnings;
};

namespace detail {

struct IniEntry {
    std::string key;
    std::string value;
    std::size_t line_no = 0;
};

struct IniSection {
    std::string name;
    std::vector<IniEntry> entries;
};

inline std::vector<IniSection> parse_ini(const std::string& text,
                                         std::vector<std::string>& warnings) {
    std::vector<IniSection> sections;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    IniSection* cur = nullptr;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw parse_error("config line " + std::to_string(line_no) +
                                  ": unterminated section header '" + t + "'");
            sections.push_back(IniSection{trim(t.substr(1, t.size() - 2)), {}});
            cur = &sections.back();
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw parse_error("config line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + t + "'");
        if (cur == nullptr)
            throw parse_error("config line " + std::to_string(line_no) +
                              ": key outside any [section]");
        IniEntry e{trim(t.substr(0, eq)), trim(t.substr(eq + 1)), line_no};
        if (e.key.empty())
            throw parse_error("config line " + std::to_string(line_no) + ": empty key");
        for (const IniEntry& prev : cur->entries) {
            if (prev.key == e.key) {
                warnings.push_back("config line " + std::to_string(line_no) +
                                   ": duplicate key '" + e.key + "' in [" + cur->name +
                                   "]; the later value wins");
                break;
            }
        }
        cur->entries.push_back(std::move(e));
    }
    return sections;
}

// last one wins on duplicates
inline const IniEntry* find_entry(const IniSection& s, const std::string& key) {
    const IniEntry* found = nullptr;
    for (const IniEntry& e : s.entries)
        if (e.key == key) found = &e;
    return found;
}

inline std::string where(const IniSection& s, const IniEntry& e) {
    return "[" + s.name + "] line " + std::to_string(e.line_no) + " key '" + e.key + "'";
}

inline bool to_bool(const IniSection& s, const IniEntry& e) {
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    throw parse_error(where(s, e) + ": expected true/false, got '" + e.value + "'");
}

inline double to_double(const IniSection& s, const IniEntry& e) {
    try {
        return parse_double(e.value, e.key);
    } catch (const parse_error&) {
        throw parse_error(where(s, e) + ": expected a number, got '" + e.value + "'");
    }
}

inline std::size_t to_size(const IniSection& s, const IniEntry& e) {
    try {
        return parse_size(e.value, e.key);
    } catch (const parse_error&) {
        throw parse_error(where(s, e) + ": expected a non-negative integer, got '" +
                          e.value + "'");
    }
}

inline std::uint64_t to_u64(const IniSection& s, const IniEntry& e) {
    return static_cast<std::uint64_t>(to_size(s, e));
}

inline void check_keys(const IniSection& s, const std::set<std::string>& valid) {
    for (const IniEntry& e : s.entries) {
        if (valid.count(e.key)) continue;
        std::string list;
        for (const std::string& k : valid) list += (list.empty() ? "" : ", ") + k;
        throw parse_error(where(s, e) + ": unknown key; valid keys are: " + list);
    }
}

/// Splits on commas that are not nested inside parentheses.
inline std::vector<std::string> split_top_level(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    for (char c : text) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

inline Dimension parse_dimension(const IniSection& s, const IniEntry& e) {
    const std::string& v = e.value;
    const std::size_t open = v.find('(');
    if (open == std::string::npos || v.back() != ')')
        throw parse_error(where(s, e) +
                          ": expected int(lo,hi,step) | choice(v1,...) | linear(lo,hi) | "
                          "log(lo,hi) | fixed(v), got '" + v + "'");
    const std::string fn = trim(v.substr(0, open));
    const std::vector<std::string> args = split_args(v.substr(open + 1, v.size() - open - 2));
    auto need = [&](std::size_t n) {
        if (args.size() != n)
            throw parse_error(where(s, e) + ": '" + fn + "' takes " + std::to_string(n) +
                              " arguments, got " + std::to_string(args.size()));
    };
    try {
        if (fn == "int") {
            need(3);
            return Dimension::int_range(e.key, std::stoll(args[0]), std::stoll(args[1]),
                                        std::stoll(args[2]));
        }
        if (fn == "choice") {
            if (args.empty()) throw config_error("choice needs at least one value");
            return Dimension::choice(e.key, args);
        }
        if (fn == "linear") {
            need(2);
            return Dimension::continuous(e.key, parse_double(args[0], e.key),
                                         parse_double(args[1], e.key), false);
        }
        if (fn == "log") {
            need(2);
            return Dimension::continuous(e.key, parse_double(args[0], e.key),
                                         parse_double(args[1], e.key), true);
        }
    } catch (const config_error& err) {
        throw parse_error(where(s, e) + ": " + err.what());
    } catch (const std::invalid_argument&) {
        throw parse_error(where(s, e) + ": bad numeric argument in '" + v + "'");
    }
    throw parse_error(where(s, e) + ": unknown dimension kind '" + fn +
                      "'; expected int, choice, linear, log or fixed");
}

} // namespace detail

/// Parses the INI-style run configuration: sections [data], [model],
/// [train], [tune], [space], [output]; `#` starts a comment; duplicate
/// keys keep the last value and record a warning.
inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    const auto sections = detail::parse_ini(text, cfg.warnings);
    for (const auto& s : sections) {
        if (s.name == "data") {
            detail::check_keys(s, {"manifest", "val_manifest", "stats", "side", "split",
                                   "stratified", "normalize", "seed", "synth_n",
                                   "synth_seed", "aug_enable", "aug_hflip", "aug_vflip",
                                   "aug_crop", "aug_crop_lo", "aug_crop_hi", "aug_stretch",
                                   "aug_scale_lo", "aug_scale_hi", "aug_shear",
                                   "aug_shear_deg", "aug_multiplier"});
            for (const auto& e : s.entries) {
                if (e.key == "manifest") cfg.data.manifest = e.value;
                else if (e.key == "val_manifest") cfg.data.val_manifest = e.value;
                else if (e.key == "stats") cfg.data.stats = e.value;
                else if (e.key == "side") cfg.data.side = detail::to_size(s, e);
                else if (e.key == "split") cfg.data.split = detail::to_double(s, e);
                else if (e.key == "stratified") cfg.data.stratified = detail::to_bool(s, e);
                else if (e.key == "normalize") cfg.data.normalize = detail::to_bool(s, e);
                else if (e.key == "seed") cfg.data.seed = detail::to_u64(s, e);
                else if (e.key == "synth_n") cfg.data.synth_n = detail::to_size(s, e);
                else if (e.key == "synth_seed") cfg.data.synth_seed = detail::to_u64(s, e);
                else if (e.key == "aug_enable") cfg.data.aug_enable = detail::to_bool(s, e);
                else if (e.key == "aug_hflip") cfg.data.augment.hflip = detail::to_bool(s, e);
                else if (e.key == "aug_vflip") cfg.data.augment.vflip = detail::to_bool(s, e);
                else if (e.key == "aug_crop") cfg.data.augment.crop = detail::to_bool(s, e);
                else if (e.key == "aug_crop_lo") cfg.data.augment.crop_lo = detail::to_double(s, e);
                else if (e.key == "aug_crop_hi") cfg.data.augment.crop_hi = detail::to_double(s, e);
                else if (e.key == "aug_stretch") cfg.data.augment.stretch = detail::to_bool(s, e);
                else if (e.key == "aug_scale_lo") cfg.data.augment.scale_lo = detail::to_double(s, e);
                else if (e.key == "aug_scale_hi") cfg.data.augment.scale_hi = detail::to_double(s, e);
                else if (e.key == "aug_shear") cfg.data.augment.shear = detail::to_bool(s, e);
                else if (e.key == "aug_shear_deg") cfg.data.augment.shear_max_deg = detail::to_double(s, e);
                else if (e.key == "aug_multiplier") cfg.data.augment.multiplier = detail::to_size(s, e);
            }
        } else if (s.name == "model") {
            detail::check_keys(s, {"input", "classes", "layers"});
            for (const auto& e : s.entries) {
                if (e.key == "input") {
                    try {
                        const ModelSpec m = parse_model_spec("input " + e.value + "\nclasses 1\n");
                        cfg.model.input_shape = m.input_shape;
                    } catch (const parse_error& err) {
                        throw parse_error(detail::where(s, e) + ": " + err.what());
                    }
                } else if (e.key == "classes") {
                    cfg.model.class_count = detail::to_size(s, e);
                } else if (e.key == "layers") {
                    cfg.model.layers.clear();
                    for (const std::string& tok : detail::split_top_level(e.value)) {
                        try {
                            cfg.model.layers.push_back(parse_layer(tok));
                        } catch (const parse_error& err) {
                            throw parse_error(detail::where(s, e) + ": " + err.what());
                        }
                    }
                    cfg.has_model = true;
                }
            }
        } else if (s.name == "train") {
            detail::check_keys(s, {"epochs", "batch_size", "optimizer", "lr", "beta1",
                                   "beta2", "epsilon", "l1", "l2", "l1_epsilon", "dropout",
                                   "early_stopping", "patience", "min_delta", "seed"});
            for (const auto& e : s.entries) {
                if (e.key == "epochs") cfg.train.epochs_max = static_cast<int>(detail::to_size(s, e));
                else if (e.key == "batch_size") cfg.train.batch_size = detail::to_size(s, e);
                else if (e.key == "optimizer") {
                    if (e.value == "sgd") cfg.train.optimizer.kind = OptimizerKind::sgd;
                    else if (e.value == "adam") cfg.train.optimizer.kind = OptimizerKind::adam;
                    else throw parse_error(detail::where(s, e) +
                                           ": optimizer must be 'sgd' or 'adam'");
                } else if (e.key == "lr") cfg.train.optimizer.alpha = detail::to_double(s, e);
                else if (e.key == "beta1") cfg.train.optimizer.beta1 = detail::to_double(s, e);
                else if (e.key == "beta2") cfg.train.optimizer.beta2 = detail::to_double(s, e);
                else if (e.key == "epsilon") cfg.train.optimizer.epsilon = detail::to_double(s, e);
                else if (e.key == "l1") cfg.train.reg.lambda_l1 = detail::to_double(s, e);
                else if (e.key == "l2") cfg.train.reg.lambda_l2 = detail::to_double(s, e);
                else if (e.key == "l1_epsilon") cfg.train.reg.epsilon_l1 = detail::to_double(s, e);
                else if (e.key == "dropout") cfg.train.dropout_override = detail::to_double(s, e);
                else if (e.key == "early_stopping") cfg.train.early_stopping.enabled = detail::to_bool(s, e);
                else if (e.key == "patience") cfg.train.early_stopping.patience = static_cast<int>(detail::to_size(s, e));
                else if (e.key == "min_delta") cfg.train.early_stopping.min_delta = detail::to_double(s, e);
                else if (e.key == "seed") cfg.train.seed = detail::to_u64(s, e);
            }
        } else if (s.name == "tune") {
            detail::check_keys(s, {"budget", "init", "epochs", "kernel", "seed"});
            for (const auto& e : s.entries) {
                if (e.key == "budget") cfg.tune.budget = detail::to_size(s, e);
                else if (e.key == "init") cfg.tune.init = detail::to_size(s, e);
                else if (e.key == "epochs") cfg.tune.epochs = static_cast<int>(detail::to_size(s, e));
                else if (e.key == "kernel") {
                    if (e.value == "matern52") cfg.tune.kernel = KernelKind::matern52;
                    else if (e.value == "se") cfg.tune.kernel = KernelKind::se_ard;
                    else throw parse_error(detail::where(s, e) +
                                           ": kernel must be 'matern52' or 'se'");
                } else if (e.key == "seed") cfg.tune.seed = detail::to_u64(s, e);
            }
        } else if (s.name == "space") {
            for (const auto& e : s.entries) {
                if (e.value.rfind("fixed(", 0) == 0 && e.value.back() == ')') {
                    cfg.space.fixed.emplace_back(
                        e.key, detail::trim(e.value.substr(6, e.value.size() - 7)));
                } else {
                    cfg.space.dims.push_back(detail::parse_dimension(s, e));
                }
            }
        } else if (s.name == "output") {
            detail::check_keys(s, {"dir"});
            for (const auto& e : s.entries)
                if (e.key == "dir") cfg.out_dir = e.value;
        } else {
            throw parse_error("unknown config section [" + s.name +
                              "]; valid sections are [data], [model], [train], [tune], "
                              "[space], [output]");
        }
    }
    return cfg;
}

/// Overrides train/model fields with tuned hyperparameter values.
/// `dense_units` resizes every dense layer except the final classifier.
inline void apply_tuned_params(RunConfig& cfg, const ParamMap& params) {
    for (const auto& [name, value] : params) {
        if (name == "lr" || name == "learning_rate") {
            cfg.train.optimizer.alpha = value.as_double();
        } else if (name == "dropout") {
            cfg.train.dropout_override = value.as_double();
        } else if (name == "l1") {
            cfg.train.reg.lambda_l1 = value.as_double();
        } else if (name == "l2") {
            cfg.train.reg.lambda_l2 = value.as_double();
        } else if (name == "batch_size") {
            cfg.train.batch_size = static_cast<std::size_t>(value.as_double());
        } else if (name == "epochs") {
            cfg.train.epochs_max = static_cast<int>(value.as_double());
        } else if (name == "dense_units") {
            const auto units = static_cast<std::size_t>(value.as_double());
            std::size_t last_dense = cfg.model.layers.size();
            for (std::size_t i = 0; i < cfg.model.layers.size(); ++i)
                if (cfg.model.layers[i].kind == LayerKind::dense) last_dense = i;
            for (std::size_t i = 0; i < cfg.model.layers.size(); ++i)
                if (cfg.model.layers[i].kind == LayerKind::dense && i != last_dense) {
                    cfg.model.layers[i].out_units = units;
                    cfg.model.layers[i].in_units = 0; // re-infer
                }
        } else {
            throw config_error("unsupported tuned parameter '" + name +
                               "'; supported: lr, dropout, l1, l2, batch_size, epochs, "
                               "dense_units");
        }
    }
    // downstream dense in_units change when units above them change
    for (LayerSpec& l : cfg.model.layers)
        if (l.kind == LayerKind::dense) l.in_units = 0;
}

/// Emits a complete config file for the given settings: the inverse of
/// parse_config for the fields `train` consumes (no [tune]/[space]).
inline std::string render_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "[data]\n";
    if (!cfg.data.manifest.empty()) os << "manifest = " << cfg.data.manifest << "\n";
    if (!cfg.data.val_manifest.empty())
        os << "val_manifest = " << cfg.data.val_manifest << "\n";
    if (!cfg.data.stats.empty()) os << "stats = " << cfg.data.stats << "\n";
    if (cfg.data.synth_n > 0) {
        os << "synth_n = " << cfg.data.synth_n << "\n";
        os << "synth_seed = " << cfg.data.synth_seed << "\n";
    }
    os << "side = " << cfg.data.side << "\n";
    os << "split = " << detail::fmt_double(cfg.data.split) << "\n";
    os << "stratified = " << (cfg.data.stratified ? "true" : "false") << "\n";
    os << "normalize = " << (cfg.data.normalize ? "true" : "false") << "\n";
    os << "seed = " << cfg.data.seed << "\n";
    os << "\n[model]\n";
    os << "input = " << cfg.model.input_shape[0] << "x" << cfg.model.input_shape[1] << "x"
       << cfg.model.input_shape[2] << "\n";
    os << "classes = " << cfg.model.class_count << "\n";
    os << "layers = ";
    for (std::size_t i = 0; i < cfg.model.layers.size(); ++i) {
        if (i) os << ", ";
        os << render_layer(cfg.model.layers[i]);
    }
    os << "\n";
    os << "\n[train]\n";
    os << "epochs = " << cfg.train.epochs_max << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "optimizer = "
       << (cfg.train.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd") << "\n";
    os << "lr = " << detail::fmt_double(cfg.train.optimizer.alpha) << "\n";
    os << "beta1 = " << detail::fmt_double(cfg.train.optimizer.beta1) << "\n";
    os << "beta2 = " << detail::fmt_double(cfg.train.optimizer.beta2) << "\n";
    os << "epsilon = " << detail::fmt_double(cfg.train.optimizer.epsilon) << "\n";
    os << "l1 = " << detail::fmt_double(cfg.train.reg.lambda_l1) << "\n";
    os << "l2 = " << detail::fmt_double(cfg.train.reg.lambda_l2) << "\n";
    os << "l1_epsilon = " << detail::fmt_double(cfg.train.reg.epsilon_l1) << "\n";
    if (cfg.train.dropout_override)
        os << "dropout = " << detail::fmt_double(*cfg.train.dropout_override) << "\n";
    os << "early_stopping = " << (cfg.train.early_stopping.enabled ? "true" : "false")
       << "\n";
    os << "patience = " << cfg.train.early_stopping.patience << "\n";
    os << "min_delta = " << detail::fmt_double(cfg.train.early_stopping.min_delta) << "\n";
    os << "seed = " << cfg.train.seed << "\n";
    os << "\n[output]\n";
    os << "dir = " << cfg.out_dir << "\n";
    return os.str();
}

} // namespace cnf
