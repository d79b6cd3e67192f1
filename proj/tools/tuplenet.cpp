// tuplenet command-line front end.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tuplenet/checkpoint.hpp"
#include "tuplenet/config.hpp"
#include "tuplenet/data.hpp"
#include "tuplenet/evalstat.hpp"
#include "tuplenet/schemes.hpp"
#include "tuplenet/train.hpp"
#include "tuplenet/tuples.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tuplenet;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string data;
    std::string out;
    std::string runs_root = "runs";
    std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, Common& c, bool with_data = true) {
    cmd->add_option("--config", c.config_path, "experiment config (TOML)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "seed; overrides config and TUPLENET_SEED");
    if (with_data) cmd->add_option("--data", c.data, "trial-store directory (default: config or synthetic)");
    cmd->add_option("--out", c.out, "output directory (default: a new run directory)");
    cmd->add_option("--runs-root", c.runs_root, "parent of generated run directories");
    cmd->add_option("--jobs", c.jobs, "parallel folds / sweep points")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve_config(const Common& c) {
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    apply_env_overrides(cfg);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.data.empty()) cfg.dataset.path = c.data;
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw Error("failed to write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Writes the resolved config into a fresh run directory.
fs::path open_run(const Common& c, const ExperimentConfig& cfg, const std::string& command) {
    fs::path dir;
    if (!c.out.empty()) {
        dir = c.out;
    } else {
        const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
        const std::string base = std::string(stamp) + "-" + command + "-" + config_hash(cfg);
        dir = fs::path(c.runs_root) / base;
        for (int n = 1; fs::exists(dir); ++n) dir = fs::path(c.runs_root) / (base + "." + std::to_string(n));
    }
    fs::create_directories(dir);
    write_text(dir / "config.toml", to_toml(cfg));
    return dir;
}

TrialStore load_dataset(const ExperimentConfig& cfg) {
    TrialStore store;
    if (cfg.dataset.path.empty()) {
        SynthParams p = cfg.dataset.synth;
        p.seed = cfg.seed;
        store = synth_generate(p).store;
    } else {
        store = load_store(cfg.dataset.path);
    }
    if (store.empty()) throw InvalidArgument("dataset is empty");
    if (cfg.dataset.crop) store = crop_trials(store, store[0].sample_rate);
    if (cfg.dataset.normalize) store = normalize_store(store);
    return pad_to_longest(store);
}

json history_json(const std::vector<EpochLog>& h) {
    json out = json::array();
    for (const auto& e : h) out.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"best_loss", e.best_loss}, {"accuracy", e.accuracy}});
    return out;
}

PretrainConfig pretrain_config(const ExperimentConfig& cfg) {
    PretrainConfig p = cfg.pretrain.config;
    p.seed = cfg.seed;
    return p;
}

BankShape bank_shape(const ExperimentConfig& cfg, const TrialStore& store) {
    BankShape s = cfg.pretrain.shape;
    s.channels = store[0].data.dim(0);
    return s;
}

// --- synth / import -----------------------------------------------------------

int cmd_synth(SynthParams p, const std::string& out) {
    const auto ds = synth_generate(p);
    save_store(out, ds.store);
    json planted = json::object();
    for (std::size_t s = 0; s < ds.planted_channels.size(); ++s) planted[ds.store.subjects()[s]] = ds.planted_channels[s];
    write_json(fs::path(out) / "planted.json", {{"seed", p.seed}, {"snr", p.snr}, {"planted_channels", planted}});
    std::cout << "wrote " << ds.store.size() << " trials to " << out << '\n';
    return 0;
}

int cmd_import(const std::string& in, double rate, const std::string& out) {
    const TrialStore store = import_csv_dir(in, rate);
    save_store(out, store);
    std::cout << "imported " << store.size() << " trials to " << out << '\n';
    return 0;
}

// --- pretrain -----------------------------------------------------------------

int cmd_pretrain(const Common& c, const std::string& scheme_override) {
    ExperimentConfig cfg = resolve_config(c);
    if (!scheme_override.empty()) cfg.pretrain.scheme = scheme_override;
    const TrialStore all = load_dataset(cfg);
    const SplitPlan split = make_split(all, cfg.dataset.test_block);
    const TrialStore pool = all.subset(split.training_pool);
    const fs::path dir = open_run(c, cfg, "pretrain");
    const PretrainConfig pc = pretrain_config(cfg);
    const BankShape shape = bank_shape(cfg, pool);
    json metrics{{"scheme", cfg.pretrain.scheme}, {"n_trials", pool.size()}};

    if (cfg.pretrain.scheme == "cae") {
        const auto res = cae_train(pool, shape, pc);
        const auto m = cae_evaluate(res.bank, pool);
        metrics["msre"] = m.msre;
        metrics["mcc"] = m.mcc;
        if (shape.filters <= shape.channels) metrics["pca_msre"] = pca_msre(pca_fit(pool, shape.filters), pool);
        metrics["best_epoch"] = res.best_epoch;
        metrics["history"] = history_json(res.history);
        save_bank(dir / "bank", res.bank);
        write_filter_csv(dir / "filters.csv", res.bank);
    } else if (cfg.pretrain.scheme == "cte") {
        const auto pairs = TupleIndex::pairs(pool, cfg.pretrain.scope);
        const auto res = cte_train_stage1(pool, pairs, shape, pc);
        const auto m = cae_evaluate(res.bank, pool);
        metrics["msre"] = m.msre;
        metrics["mcc"] = m.mcc;
        metrics["pair_loss"] = res.best_loss;
        metrics["best_epoch"] = res.best_epoch;
        metrics["history"] = history_json(res.history);
        save_bank(dir / "bank", res.bank);
        write_filter_csv(dir / "filters.csv", res.bank);
        if (cfg.pretrain.hydra) {
            std::map<std::string, ConvFilterBank> init;
            for (const auto& s : pool.subjects()) init.emplace(s, res.bank);
            PretrainConfig p2 = pc;
            p2.optimizer.max_epochs = cfg.pretrain.stage2_epochs;
            const auto cross = TupleIndex::pairs(pool, PairScope::cross_subject);
            const auto h = cte_train_stage2(pool, cross, init, p2);
            json per_subject = json::object();
            for (const auto& s : h.layer.selectors()) {
                write_filter_csv(dir / ("filters_" + s + ".csv"), h.layer.bank(s));
                const auto ms = cae_evaluate(h.layer.bank(s), pool.subset(pool.indices_of_subject(s)));
                per_subject[s] = {{"msre", ms.msre}, {"mcc", ms.mcc}};
            }
            metrics["stage2"] = {{"pair_loss", h.best_loss}, {"best_epoch", h.best_epoch},
                                 {"subjects", per_subject}, {"history", history_json(h.history)}};
            save_hydra(dir / "hydra", h.layer);
        }
    } else {
        const auto tuples = TupleIndex::tuples(pool, cfg.pretrain.arity, cfg.pretrain.scope);
        const auto res = sce_train(pool, tuples, shape, pc);
        const auto ev = sce_evaluate(res.bank, pool, tuples, pc.tuple_loss, pc.eval_limit);
        metrics["constraint_accuracy"] = ev.constraint_accuracy;
        metrics["loss"] = ev.loss;
        metrics["evaluated_tuples"] = ev.evaluated;
        metrics["total_tuples"] = tuples.size();
        metrics["best_epoch"] = res.best_epoch;
        metrics["history"] = history_json(res.history);
        save_bank(dir / "bank", res.bank);
        write_filter_csv(dir / "filters.csv", res.bank);
    }
    write_json(dir / "metrics.json", metrics);
    std::cout << dir.string() << '\n';
    return 0;
}

// --- train / eval ---------------------------------------------------------------

PretrainedLayer load_pretrained(const fs::path& p) {
    fs::path dir = p;
    if (!fs::exists(dir / "model.json")) {
        if (fs::exists(dir / "hydra" / "model.json")) dir /= "hydra";
        else if (fs::exists(dir / "bank" / "model.json")) dir /= "bank";
        else throw LoadError("no checkpoint found in " + p.string());
    }
    Model m = load_model(dir);
    if (m.size() != 1) throw LoadError(dir.string() + " is not a single pre-trained layer");
    if (m.layer(0).kind() == "hydra_conv") return load_hydra(dir);
    return load_bank(dir);
}

ModelSpec model_spec(const ExperimentConfig& cfg, const TrialStore& store, const PretrainedLayer& pre) {
    ModelSpec spec = cfg.train.model;
    spec.channels = store[0].data.dim(0);
    spec.samples = store[0].data.dim(1);
    spec.classes = store.num_classes();
    if (const auto* b = std::get_if<ConvFilterBank>(&pre))
        spec.layer1 = {b->filters(), b->width(), b->stride, b->activation};
    return spec;
}

struct EvalSummary {
    double accuracy = 0.0;
    double p_value = 1.0;
    std::size_t n = 0, correct = 0;
};

EvalSummary evaluate_to(const fs::path& dir, const std::string& tag, Classifier& clf, const TrialStore& store,
                        const std::vector<std::size_t>& indices) {
    const auto cm = confusion(clf, store, indices);
    write_confusion_csv(dir / ("confusion_" + tag + ".csv"), cm, store.stimuli());
    write_binary_grid_csv(dir / ("binary_grid_" + tag + ".csv"), binary_confusion_grid(clf, store, indices),
                          store.stimuli());
    EvalSummary s;
    s.n = cm.total();
    s.correct = cm.trace();
    s.accuracy = cm.accuracy();
    s.p_value = binomial_p(s.n, s.correct, 1.0 / static_cast<double>(store.num_classes()));
    return s;
}

json summary_json(const EvalSummary& s) {
    return {{"accuracy", s.accuracy}, {"correct", s.correct}, {"n", s.n}, {"binomial_p", s.p_value}};
}

struct TrainOutcome {
    std::vector<FoldReport> folds;
    EvalSummary avg, maj;
};

TrainOutcome train_and_evaluate(const ExperimentConfig& cfg, const TrialStore& store, const SplitPlan& split,
                                const PretrainedLayer& pre, std::size_t jobs, const fs::path& dir) {
    const ModelSpec spec = model_spec(cfg, store, pre);
    const Model init = build_model(spec, cfg.train.optimizer.dropout_rate, cfg.seed, pre);
    TrainOutcome o;
    o.folds = crossval_run(store, split, init, cfg.train.optimizer, cfg.seed, jobs);
    auto avg = aggregate(o.folds, AggregationMode::avg);
    auto maj = aggregate(o.folds, AggregationMode::maj);
    o.avg = evaluate_to(dir, "avg", avg, store, split.test);
    o.maj = evaluate_to(dir, "maj", maj, store, split.test);
    for (auto& f : o.folds) save_model(dir / "folds" / f.fold_id, f.best_model);
    save_model(dir / "aggregate_avg", avg.model());
    return o;
}

json folds_json(const std::vector<FoldReport>& folds) {
    json out = json::array();
    for (const auto& f : folds)
        out.push_back({{"fold", f.fold_id},
                       {"n_train", f.n_train},
                       {"n_validation", f.n_validation},
                       {"best_epoch", f.best_epoch},
                       {"validation_accuracy", f.best_validation_accuracy},
                       {"validation_loss", f.best_validation_loss}});
    return out;
}

int cmd_train(const Common& c, const std::string& pretrained) {
    const ExperimentConfig cfg = resolve_config(c);
    const TrialStore store = load_dataset(cfg);
    const SplitPlan split = make_split(store, cfg.dataset.test_block);
    const PretrainedLayer pre = pretrained.empty() ? PretrainedLayer{} : load_pretrained(pretrained);
    const fs::path dir = open_run(c, cfg, "train");
    const TrainOutcome o = train_and_evaluate(cfg, store, split, pre, c.jobs, dir);

    json metrics{{"pretrained", pretrained.empty() ? json(nullptr) : json(pretrained)},
                 {"folds", folds_json(o.folds)},
                 {"test", {{"avg", summary_json(o.avg)}, {"maj", summary_json(o.maj)}}},
                 {"n_test", split.test.size()}};
    write_json(dir / "metrics.json", metrics);

    std::ostringstream rep;
    rep << "mode: " << (pretrained.empty() ? "baseline (layer 1 trainable)" : "pre-trained layer 1 (frozen)") << '\n';
    rep << "folds: " << o.folds.size() << "\n";
    for (const auto& f : o.folds) {
        char line[200];
        std::snprintf(line, sizeof line, "  %-8s train=%zu validation=%zu best_epoch=%zu validation_accuracy=%.4f\n",
                      f.fold_id.c_str(), f.n_train, f.n_validation, f.best_epoch, f.best_validation_accuracy);
        rep << line;
    }
    char line[200];
    std::snprintf(line, sizeof line, "test avg: %.4f (%zu/%zu, p=%.3g)\ntest maj: %.4f (%zu/%zu, p=%.3g)\n",
                  o.avg.accuracy, o.avg.correct, o.avg.n, o.avg.p_value, o.maj.accuracy, o.maj.correct, o.maj.n,
                  o.maj.p_value);
    rep << line;
    write_text(dir / "report.txt", rep.str());
    std::cout << rep.str() << dir.string() << '\n';
    return 0;
}

int cmd_eval(const Common& c, const std::string& model_dir, const std::string& mode_name, const std::string& which) {
    const ExperimentConfig cfg = resolve_config(c);
    const TrialStore store = load_dataset(cfg);
    std::vector<std::size_t> indices;
    if (which == "test") {
        indices = make_split(store, cfg.dataset.test_block).test;
    } else {
        for (std::size_t i = 0; i < store.size(); ++i) indices.push_back(i);
    }
    const AggregationMode mode = mode_name.empty() ? cfg.eval.mode : aggregation_mode_from_string(mode_name);
    const fs::path src = model_dir;
    std::vector<Model> members;
    if (fs::exists(src / "model.json")) {
        members.push_back(load_model(src));
    } else if (mode == AggregationMode::avg && fs::exists(src / "aggregate_avg" / "model.json")) {
        members.push_back(load_model(src / "aggregate_avg"));
    } else if (fs::is_directory(src / "folds")) {
        std::vector<fs::path> dirs;
        for (const auto& e : fs::directory_iterator(src / "folds")) dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) members.push_back(load_model(d));
    }
    if (members.empty()) throw LoadError("no model checkpoints found in " + src.string());
    AggregatedModel clf = aggregate(members, mode);
    const fs::path dir = open_run(c, cfg, "eval");
    const EvalSummary s = evaluate_to(dir, to_string(mode), clf, store, indices);
    write_json(dir / "metrics.json", {{"mode", to_string(mode)}, {"split", which}, {"result", summary_json(s)}});
    char line[200];
    std::snprintf(line, sizeof line, "%s accuracy: %.4f (%zu/%zu), binomial p vs chance: %.3g\n", to_string(mode),
                  s.accuracy, s.correct, s.n, s.p_value);
    write_text(dir / "report.txt", line);
    std::cout << line << dir.string() << '\n';
    return 0;
}

int cmd_significance(std::size_t n, std::size_t k, double p0, std::optional<std::size_t> k2) {
    if (k > n) throw InvalidArgument("k must not exceed n");
    json out{{"n", n}, {"k", k}, {"p0", p0}, {"binomial_p", binomial_p(n, k, p0)}};
    if (k2) {
        if (*k2 > n) throw InvalidArgument("k2 must not exceed n");
        const double a = static_cast<double>(k) / static_cast<double>(n);
        const double b = static_cast<double>(*k2) / static_cast<double>(n);
        const auto z = two_proportion_z(a, n, b, n);
        out["k2"] = *k2;
        out["z"] = z.z;
        out["z_p_two_sided"] = z.p;
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}

int cmd_sweep(const Common& c, const std::string& pretrained) {
    const ExperimentConfig cfg = resolve_config(c);
    const TrialStore store = load_dataset(cfg);
    const SplitPlan split = make_split(store, cfg.dataset.test_block);
    const PretrainedLayer pre = pretrained.empty() ? PretrainedLayer{} : load_pretrained(pretrained);
    const auto points = sweep_points(cfg);
    const fs::path dir = open_run(c, cfg, "sweep");
    std::vector<fs::path> subdirs(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) subdirs[i] = dir / ("point_" + std::to_string(i));

    auto evaluate = [&](const SweepPoint& p) {
        const std::size_t i = static_cast<std::size_t>(std::find(points.begin(), points.end(), p) - points.begin());
        ExperimentConfig pc = cfg;
        apply_train_values(pc, p);
        fs::create_directories(subdirs[i]);
        write_text(subdirs[i] / "config.toml", to_toml(pc));
        const TrainOutcome o = train_and_evaluate(pc, store, split, pre, 1, subdirs[i]);
        SweepOutcome out;
        for (const auto& f : o.folds) out.fold_validation_accuracy.push_back(f.best_validation_accuracy);
        out.test_accuracy_avg = o.avg.accuracy;
        out.test_accuracy_maj = o.maj.accuracy;
        write_json(subdirs[i] / "metrics.json", {{"folds", folds_json(o.folds)},
                                                 {"test", {{"avg", summary_json(o.avg)}, {"maj", summary_json(o.maj)}}}});
        return out;
    };
    const auto results = sweep(points, evaluate, c.jobs);
    write_sweep_csv(dir / "sweep.csv", results);
    std::cout << "best: point_" << results.front().index << " median validation accuracy "
              << results.front().median_validation_accuracy << '\n'
              << dir.string() << '\n';
    return 0;
}

int cmd_export_filters(const std::string& model_dir, const std::string& out) {
    Model m = load_model(model_dir);
    fs::create_directories(out);
    std::size_t written = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const std::string prefix = "filters_layer" + std::to_string(i);
        if (m.layer(i).kind() == "conv") {
            write_filter_csv(fs::path(out) / (prefix + ".csv"), static_cast<const ConvLayer&>(m.layer(i)).bank());
            ++written;
        } else if (m.layer(i).kind() == "hydra_conv") {
            const auto& h = static_cast<const HydraConvLayer&>(m.layer(i)).hydra();
            for (const auto& s : h.selectors()) {
                write_filter_csv(fs::path(out) / (prefix + "_" + s + ".csv"), h.bank(s));
                ++written;
            }
        }
    }
    if (written == 0) throw LoadError(model_dir + " has no convolution layers");
    std::cout << "wrote " << written << " filter CSV files to " << out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feature learning for multi-channel time series: pre-training, cross-validation and evaluation"};
    app.require_subcommand(1);

    SynthParams synth;
    std::string synth_out;
    auto* s = app.add_subcommand("synth", "generate the planted-channel synthetic benchmark");
    s->add_option("--seed", synth.seed, "random seed");
    s->add_option("--snr", synth.snr, "signal-to-noise ratio")->check(CLI::NonNegativeNumber);
    s->add_option("--subjects", synth.n_subjects)->check(CLI::PositiveNumber);
    s->add_option("--classes", synth.n_classes)->check(CLI::Range(2, 1000));
    s->add_option("--channels", synth.channels)->check(CLI::PositiveNumber);
    s->add_option("--samples", synth.samples)->check(CLI::PositiveNumber);
    s->add_option("--blocks", synth.blocks)->check(CLI::PositiveNumber);
    s->add_option("--out", synth_out, "output trial-store directory")->required();

    std::string csv_in, csv_out;
    double csv_rate = 64.0;
    auto* imp = app.add_subcommand("import-csv", "import <subject>_<stimulus>_<block>.csv files");
    imp->add_option("--in", csv_in)->required()->check(CLI::ExistingDirectory);
    imp->add_option("--rate", csv_rate, "sample rate in Hz")->check(CLI::PositiveNumber);
    imp->add_option("--out", csv_out)->required();

    Common pre_c;
    std::string scheme;
    auto* pre = app.add_subcommand("pretrain", "pre-train a first-layer filter bank");
    add_common(pre, pre_c);
    pre->add_option("--scheme", scheme, "cae, cte or sce")->check(CLI::IsMember({"cae", "cte", "sce"}));

    Common train_c;
    std::string pretrained;
    auto* tr = app.add_subcommand("train", "cross-validated supervised training");
    add_common(tr, train_c);
    tr->add_option("--pretrained", pretrained, "pre-trained checkpoint or pretrain run directory");

    Common eval_c;
    std::string eval_model, eval_mode, eval_split = "test";
    auto* ev = app.add_subcommand("eval", "confusion matrices and significance for trained models");
    add_common(ev, eval_c);
    ev->add_option("--model", eval_model, "checkpoint or train run directory")->required();
    ev->add_option("--mode", eval_mode, "avg or maj")->check(CLI::IsMember({"avg", "maj"}));
    ev->add_option("--split", eval_split, "test or all")->check(CLI::IsMember({"test", "all"}));

    std::size_t sig_n = 0, sig_k = 0;
    double sig_p0 = 0.5;
    std::optional<std::size_t> sig_k2;
    auto* sig = app.add_subcommand("significance", "binomial test (and optional two-proportion z-test)");
    sig->add_option("--n", sig_n, "trials")->required()->check(CLI::PositiveNumber);
    sig->add_option("--k", sig_k, "successes")->required();
    sig->add_option("--p0", sig_p0, "chance rate")->check(CLI::Range(0.0, 1.0));
    sig->add_option("--k2", sig_k2, "successes of a second classifier on the same n");

    Common sweep_c;
    std::string sweep_pre;
    auto* sw = app.add_subcommand("sweep", "hyper-parameter sweep over [train] keys");
    add_common(sw, sweep_c);
    sw->add_option("--pretrained", sweep_pre, "pre-trained checkpoint or pretrain run directory");

    std::string exp_model, exp_out;
    auto* ex = app.add_subcommand("export-filters", "write filter CSVs of a checkpoint");
    ex->add_option("--model", exp_model)->required()->check(CLI::ExistingDirectory);
    ex->add_option("--out", exp_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*s) return cmd_synth(synth, synth_out);
        if (*imp) return cmd_import(csv_in, csv_rate, csv_out);
        if (*pre) return cmd_pretrain(pre_c, scheme);
        if (*tr) return cmd_train(train_c, pretrained);
        if (*ev) return cmd_eval(eval_c, eval_model, eval_mode, eval_split);
        if (*sig) return cmd_significance(sig_n, sig_k, sig_p0, sig_k2);
        if (*sw) return cmd_sweep(sweep_c, sweep_pre);
        if (*ex) return cmd_export_filters(exp_model, exp_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
