#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cib/experiment.hpp"

namespace cib::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// Flag values before resolution into an ExperimentConfig.
struct Options {
    std::string dataset = "mnist";
    std::string data_dir;
    std::string out = "out";
    std::string run_dir;
    std::string strategy = "randomizing";
    std::size_t side = 0;
    double beta = 0.05;
    double lambda = 1.0;
    std::size_t backdoor_class = 6;
    std::size_t kernel_batch = 128;
    int learn_epochs = -1;
    std::uint64_t kernel_seed = 0;
    std::string arch = "mlp:512";
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t batch_size = 128;
    std::size_t epochs = 5;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::size_t train_limit = 0;
    std::size_t test_limit = 0;
    bool clamp_raw = false;
    bool lambda_given = false;  // --lambda set on the command line or in --config
};

inline ExperimentConfig resolve(const Options& o) {
    ExperimentConfig c;
    c.dataset = parse_dataset_kind(o.dataset);
    c.data_dir = o.data_dir;
    c.strategy = parse_strategy(o.strategy);
    c.side = o.side;
    c.beta = o.beta;
    c.lambda = o.lambda;
    c.backdoor_class = o.backdoor_class;
    c.kernel_batch = o.kernel_batch;
    if (o.learn_epochs >= 0) c.learn_epochs = static_cast<std::size_t>(o.learn_epochs);
    c.kernel_seed = o.kernel_seed;
    c.architecture = to_string(parse_architecture(o.arch));
    c.train.learning_rate = o.lr;
    c.train.momentum = o.momentum;
    c.train.weight_decay = o.weight_decay;
    c.train.batch_size = o.batch_size;
    c.train.epochs = o.epochs;
    require(!o.seeds.empty(), "--seeds must list at least one seed");
    c.seeds = o.seeds;
    c.train_limit = o.train_limit;
    c.test_limit = o.test_limit;
    c.clamp_raw = o.clamp_raw;

    require(c.beta > 0.0 && c.beta < 1.0, "--beta must lie in (0, 1)");
    require(c.lambda > 0.0, "--lambda must be positive");
    require(c.backdoor_class < 10, "--backdoor-class must be a class index below 10");
    require(c.kernel_batch >= 2, "--kernel-batch must be at least 2");
    c.train.validate();
    return c;
}

inline fs::path run_directory(const Options& o, const ExperimentConfig& c) {
    if (!o.run_dir.empty()) return o.run_dir;
    return fs::path(o.out) / (std::string(to_string(c.dataset)) + "-" + c.hash());
}

inline void require_dataset(const ExperimentConfig& c) {
    if (c.data_dir.empty()) throw std::invalid_argument("--data-dir is required");
    for (Split s : {Split::train, Split::test})
        for (const auto& f : dataset_files(c.dataset, c.data_dir, s))
            if (!fs::is_regular_file(f)) throw std::invalid_argument("dataset file not found: " + f);
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline std::string stats_fingerprint(const NormalizationStats& st) { return textio::hex64(textio::fnv1a(st.fingerprint())); }

/// Refuses artifacts produced under different normalization statistics.
inline void check_provenance(const std::string& want, const std::string& got, const std::string& what) {
    if (want != got) {
        throw DataError("mixed provenance: " + what + " was produced under normalization " + got +
                        " but the current data normalizes as " + want);
    }
}

struct TriggerFile {
    CalibratedTrigger trigger;
    NormalizationStats stats;
    Shape image_shape;
    std::string fingerprint;
    std::string text;
};

inline textio::Document trigger_document(const Calibration& cal, const NormalizationStats& stats, Shape shape,
                                         double phi, double feasibility) {
    textio::Document doc = to_document(cal.trigger);
    doc.add("image_shape", std::to_string(shape.channels) + " " + std::to_string(shape.height) + " " +
                               std::to_string(shape.width));
    doc.add_reals("stats_mean", stats.mean.begin(), stats.mean.end());
    doc.add_reals("stats_std", stats.stddev.begin(), stats.stddev.end());
    doc.add("stats_fingerprint", stats_fingerprint(stats));
    doc.add("plan_size", std::to_string(cal.plan.size()));
    doc.add("rank", std::to_string(cal.threshold.rank));
    doc.add("tie_count", std::to_string(cal.plan.tie_count()));
    doc.add_real("realized_gamma", cal.plan.realized_gamma());
    doc.add_real("phi", phi);
    doc.add_real("feasibility_rate", feasibility);
    return doc;
}

inline TriggerFile load_trigger_file(const fs::path& path) {
    TriggerFile f;
    f.text = read_text(path);
    const auto doc = textio::Document::parse(f.text);
    f.trigger = trigger_from_document(doc);
    f.stats.mean = doc.get_reals<double>("stats_mean");
    f.stats.stddev = doc.get_reals<double>("stats_std");
    if (f.stats.mean.size() != f.stats.stddev.size() || f.stats.mean.empty())
        throw DataError(path.string() + ": inconsistent normalization statistics");
    f.fingerprint = doc.get("stats_fingerprint");
    if (f.fingerprint != stats_fingerprint(f.stats)) throw DataError(path.string() + ": statistics fingerprint mismatch");
    const auto dims = doc.get_reals<double>("image_shape");
    if (dims.size() != 3) throw DataError(path.string() + ": image_shape needs three values");
    f.image_shape = Shape{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                          static_cast<std::size_t>(dims[2])};
    return f;
}

struct Manifest {
    std::vector<PoisonEntry> overrides;  // index and the label it now carries
    std::size_t train_size = 0;
    std::size_t backdoor_class = 0;
    std::string fingerprint;
    std::string trigger_hash;
};

inline textio::Document manifest_document(const PoisonPlan& plan, const std::string& fingerprint,
                                          const std::string& trigger_hash, DatasetKind kind) {
    textio::Document doc;
    doc.add("format", "cib-manifest 1");
    doc.add("dataset", to_string(kind));
    doc.add("train_size", std::to_string(plan.train_size));
    doc.add("backdoor_class", std::to_string(plan.backdoor_class));
    doc.add("stats_fingerprint", fingerprint);
    doc.add("trigger_hash", trigger_hash);
    for (const auto& e : plan.entries)
        if (e.original_label != plan.backdoor_class)
            doc.add("override", std::to_string(e.index) + " " + std::to_string(plan.backdoor_class));
    return doc;
}

inline Manifest load_manifest(const fs::path& path) {
    const auto doc = textio::Document::parse(read_text(path));
    if (doc.get("format") != "cib-manifest 1") throw DataError(path.string() + ": not a cib manifest");
    Manifest m;
    m.train_size = doc.get_integer<std::size_t>("train_size");
    m.backdoor_class = doc.get_integer<std::size_t>("backdoor_class");
    m.fingerprint = doc.get("stats_fingerprint");
    m.trigger_hash = doc.get("trigger_hash");
    for (const auto& line : doc.get_all("override")) {
        const auto v = textio::Document::split_reals<double>(line);
        if (v.size() != 2) throw DataError(path.string() + ": malformed override '" + line + "'");
        m.overrides.push_back({static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1])});
        if (m.overrides.back().index >= m.train_size) throw DataError(path.string() + ": override index out of range");
    }
    return m;
}

inline Dataset apply_manifest(const Dataset& train, const Manifest& m) {
    if (train.size() != m.train_size)
        throw DataError("manifest covers " + std::to_string(m.train_size) + " training samples, data has " +
                        std::to_string(train.size()));
    std::vector<std::uint8_t> labels(train.labels().begin(), train.labels().end());
    for (const auto& e : m.overrides) labels[e.index] = static_cast<std::uint8_t>(e.original_label);
    return train.with_labels(std::move(labels));
}

inline fs::path pick(const std::string& explicit_path, const fs::path& dir, const char* name) {
    return explicit_path.empty() ? dir / name : fs::path(explicit_path);
}

inline std::string histogram_csv(const ClassHistogram& h, std::size_t backdoor_class) {
    std::ostringstream out;
    out << "class,falsified\n";
    for (std::size_t c = 0; c < h.counts.size(); ++c)
        if (c != backdoor_class) out << c << ',' << h.counts[c] << '\n';
    out << "# already_backdoor_class=" << h.already_target << '\n';
    return out.str();
}

inline int cmd_forge(const Options& o, std::ostream& out) {
    const auto cfg = resolve(o);
    require_dataset(cfg);
    const auto dir = run_directory(o, cfg);
    const auto data = prepare_data(cfg);
    TriggerKernel kernel = forge_kernel(data.train, cfg);
    Calibration cal;
    try {
        cal = calibrate_trigger(data.train, kernel, cfg.beta, cfg.lambda, cfg.backdoor_class);
    } catch (const NumericError& e) {
        throw NumericError(std::string("forge: trigger calibration failed: ") + e.what());
    }
    std::vector<std::size_t> all(data.train.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const double phi = estimate_phi(cal.trigger.kernel, data.train, all).phi;
    const auto scores = score_all(data.train, cal.trigger.kernel);
    const double feas = feasibility_rate(data.train, cal.trigger, scores);

    write_text(dir / "kernel.txt", to_document(cal.trigger.kernel).str());
    write_text(dir / "trigger.txt", trigger_document(cal, data.stats, data.train.shape(), phi, feas).str());
    if (!cal.trigger.kernel.learning_trace.empty()) {
        std::ostringstream trace;
        trace << "round,phi\n";
        for (const auto& t : cal.trigger.kernel.learning_trace) trace << t.round << ',' << textio::format_real(t.loss) << '\n';
        write_text(dir / "trace.csv", trace.str());
    }
    std::ostringstream cfg_txt;
    for (const auto& [k, v] : cfg.echo()) cfg_txt << k << '=' << v << '\n';
    write_text(dir / "config.txt", cfg_txt.str());

    out << "run_dir " << dir.string() << '\n'
        << "strategy " << to_string(cal.trigger.kernel.strategy) << " S=" << cal.trigger.kernel.side << '\n'
        << "alpha " << textio::format_real(cal.trigger.alpha) << '\n'
        << "target_score " << textio::format_real(cal.trigger.target_score) << '\n'
        << "plan_size " << cal.plan.size() << " (rank " << cal.threshold.rank << ", ties " << cal.plan.tie_count()
        << ")\n"
        << "realized_gamma " << textio::format_real(cal.plan.realized_gamma()) << '\n'
        << "phi " << textio::format_real(phi) << '\n'
        << "feasibility_rate " << textio::format_real(feas) << '\n'
        << "learning_rounds " << cal.trigger.kernel.learning_trace.size() << '\n';
    return ok;
}

struct PoisonOptions {
    std::string trigger;
};

inline int cmd_poison(const Options& o, const PoisonOptions& p, std::ostream& out) {
    const auto cfg = resolve(o);
    require_dataset(cfg);
    const auto dir = run_directory(o, cfg);
    const auto tf = load_trigger_file(pick(p.trigger, dir, "trigger.txt"));
    const auto data = prepare_data(cfg);
    check_provenance(stats_fingerprint(data.stats), tf.fingerprint, "the trigger");
    if (!(tf.image_shape == data.train.shape()))
        throw DataError("trigger was calibrated for images of shape " + tf.image_shape.str());
    PoisonPlan plan;
    try {
        plan = select_poison_set(data.train, tf.trigger);
    } catch (const NumericError& e) {
        throw NumericError(std::string("poison: ") + e.what());
    }
    const auto h = class_distribution(plan, data.train.num_classes());
    const auto thash = textio::hex64(textio::fnv1a(tf.text));
    auto plan_doc = to_document(plan);
    plan_doc.add("stats_fingerprint", tf.fingerprint);
    plan_doc.add("trigger_hash", thash);
    write_text(dir / "plan.txt", plan_doc.str());
    write_text(dir / "manifest.txt", manifest_document(plan, tf.fingerprint, thash, cfg.dataset).str());
    write_text(dir / "class_distribution.csv", histogram_csv(h, plan.backdoor_class));

    out << "plan_size " << plan.size() << '\n'
        << "realized_gamma " << textio::format_real(plan.realized_gamma()) << '\n'
        << "falsified " << h.falsified() << '\n'
        << "already_backdoor_class " << h.already_target << '\n';
    for (std::size_t c = 0; c < h.counts.size(); ++c)
        if (c != plan.backdoor_class) out << "class " << c << ' ' << h.counts[c] << '\n';
    return ok;
}

struct TrainEvalOptions {
    std::string trigger;
    std::string manifest;
    bool no_poison = false;
};

inline int cmd_train_eval(const Options& o, const TrainEvalOptions& t, std::ostream& out) {
    const auto cfg = resolve(o);
    require_dataset(cfg);
    const auto dir = run_directory(o, cfg);
    auto tf = load_trigger_file(pick(t.trigger, dir, "trigger.txt"));
    if (o.lambda_given) tf.trigger.lambda = cfg.lambda;  // the budget only enters trigger adding
    const auto data = prepare_data(cfg);
    const auto fp = stats_fingerprint(data.stats);
    check_provenance(fp, tf.fingerprint, "the trigger");
    const auto& trig = tf.trigger;

    Dataset victim_train = data.train;
    if (!t.no_poison) {
        const auto m = load_manifest(pick(t.manifest, dir, "manifest.txt"));
        check_provenance(fp, m.fingerprint, "the manifest");
        if (m.trigger_hash != textio::hex64(textio::fnv1a(tf.text)))
            throw DataError("manifest was produced from a different trigger file");
        victim_train = apply_manifest(data.train, m);
    }

    const auto part = partition_test(data.test, trig);
    const AttackSet attack = prepare_attack_set(data.test, part, trig, cfg.clamp_raw ? &data.stats : nullptr);
    const Architecture arch = parse_architecture(cfg.architecture);
    const std::string prefix = t.no_poison ? "baseline" : "report";
    const auto tdoc = textio::Document::parse(tf.text);
    const double realized_gamma = tdoc.get_real<double>("realized_gamma");
    const double feasibility = tdoc.get_real<double>("feasibility_rate");
    std::vector<EvalReport> reports;
    for (auto seed : cfg.seeds) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        std::vector<float> best;
        EvalReport r;
        try {
            r = train_and_evaluate(victim_train, data.test, part, attack, trig, arch, tc, &best);
        } catch (const NumericError& e) {
            throw NumericError("seed " + std::to_string(seed) + ": " + e.what());
        }
        r.config = cfg.echo();
        r.config.emplace_back("seed", std::to_string(seed));
        r.config.emplace_back("poisoned", t.no_poison ? "false" : "true");
        r.config.emplace_back("stats_fingerprint", fp);
        r.realized_gamma = realized_gamma;
        r.feasibility_rate = feasibility;
        const auto tag = prefix + "-seed" + std::to_string(seed);
        write_text(dir / (tag + ".csv"), to_csv(r));
        write_text(dir / (tag + ".json"), to_json(r).dump(2) + "\n");
        auto model = build_model<float>(arch, data.train.shape(), data.train.num_classes(), seed);
        model.set_parameters(best);
        auto ck = to_document(model);
        ck.add("epoch", std::to_string(r.rows[r.best_row()].epoch));
        ck.add("stats_fingerprint", fp);
        write_text(dir / ("checkpoint-" + tag + ".txt"), ck.str());
        const auto& b = r.rows[r.best_row()];
        out << "seed " << seed << " best_epoch " << b.epoch << " acc " << textio::format_real(b.acc) << " asr_n "
            << format_rate(b.asr_n) << " asr_m " << format_rate(b.asr_m) << '\n';
        reports.push_back(std::move(r));
    }
    EvalReport mean = aggregate(reports);
    mean.config = cfg.echo();
    mean.config.emplace_back("poisoned", t.no_poison ? "false" : "true");
    mean.config.emplace_back("stats_fingerprint", fp);
    mean.config.emplace_back("replicates", std::to_string(reports.size()));
    write_text(dir / (prefix + "-mean.csv"), to_csv(mean));
    write_text(dir / (prefix + "-mean.json"), to_json(mean).dump(2) + "\n");
    const auto& b = mean.rows[mean.best_row()];
    out << "mean best_epoch " << b.epoch << " acc " << textio::format_real(b.acc) << " asr_n " << format_rate(b.asr_n)
        << " asr_m " << format_rate(b.asr_m) << '\n'
        << "partition f1 " << part.f1.size() << " f0 " << part.f0.size() << " excluded " << part.excluded.size()
        << '\n';
    return ok;
}

struct TriggerOneOptions {
    std::string trigger;
    std::string image;
    long long index = -1;
    std::string output;
};

/// Image document: "shape C H W", "space raw|normalized", "pixels ...".
inline Image<double> load_image_document(const fs::path& path, const TriggerFile& tf) {
    const auto doc = textio::Document::parse(read_text(path));
    const auto dims = doc.get_reals<double>("shape");
    if (dims.size() != 3) throw DataError(path.string() + ": shape needs three values");
    const Shape s{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]), static_cast<std::size_t>(dims[2])};
    auto px = doc.get_reals<double>("pixels");
    if (px.size() != s.size()) throw DataError(path.string() + ": pixel count does not match shape " + s.str());
    const std::string space = doc.has("space") ? doc.get("space") : "raw";
    if (!(s == tf.image_shape))
        throw DataError("image shape " + s.str() + " does not match the trigger geometry " + tf.image_shape.str());
    if (space == "raw") {
        for (std::size_t c = 0; c < s.channels; ++c)
            for (std::size_t k = 0; k < s.plane(); ++k) {
                double& v = px[c * s.plane() + k];
                v = (v - tf.stats.mean[c]) / tf.stats.stddev[c];
            }
    } else if (space != "normalized") {
        throw DataError(path.string() + ": space must be raw or normalized");
    }
    return Image<double>(s, std::move(px));
}

inline int cmd_trigger_one(const Options& o, const TriggerOneOptions& t, std::ostream& out) {
    if (t.output.empty()) throw std::invalid_argument("--output is required");
    if (t.image.empty() == (t.index < 0)) throw std::invalid_argument("give exactly one of --image or --index");
    const auto cfg = resolve(o);
    const auto dir = run_directory(o, cfg);
    auto tf = load_trigger_file(pick(t.trigger, dir, "trigger.txt"));
    if (o.lambda_given) tf.trigger.lambda = cfg.lambda;
    Image<double> x;
    if (!t.image.empty()) {
        x = load_image_document(t.image, tf);
    } else {
        require_dataset(cfg);
        const auto raw = load_split(cfg.dataset, cfg.data_dir, Split::test, cfg.test_limit);
        if (static_cast<std::size_t>(t.index) >= raw.size())
            throw std::invalid_argument("--index " + std::to_string(t.index) + " out of range for " +
                                        std::to_string(raw.size()) + " test images");
        if (!(raw.shape() == tf.image_shape))
            throw DataError("dataset images " + raw.shape().str() + " do not match the trigger geometry " +
                            tf.image_shape.str());
        const auto test = normalize(raw, &tf.stats).first;
        x = Image<double>(test.image(static_cast<std::size_t>(t.index)));
    }
    TriggeredImage res = add_trigger(x, tf.trigger);
    if (cfg.clamp_raw) clamp_to_raw_range(res, x.view(), tf.stats, tf.trigger.kernel);
    if (res.clipped)
        warn("budget saturated: achieved score " + textio::format_real(res.achieved_score) + " is below the target " +
             textio::format_real(tf.trigger.target_score));

    const Shape& s = res.image.shape();
    std::vector<double> raw(res.image.pixels().begin(), res.image.pixels().end());
    for (std::size_t c = 0; c < s.channels; ++c)
        for (std::size_t k = 0; k < s.plane(); ++k) {
            double& v = raw[c * s.plane() + k];
            v = v * tf.stats.stddev[c] + tf.stats.mean[c];
        }
    textio::Document doc;
    doc.add("format", "cib-image 1");
    doc.add("shape", std::to_string(s.channels) + " " + std::to_string(s.height) + " " + std::to_string(s.width));
    doc.add("space", "normalized");
    doc.add_reals("pixels", res.image.pixels().begin(), res.image.pixels().end());
    doc.add_reals("raw_pixels", raw.begin(), raw.end());
    doc.add_real("delta_norm", res.delta_norm);
    doc.add_real("achieved_score", res.achieved_score);
    doc.add_real("target_score", tf.trigger.target_score);
    doc.add_real("alpha", tf.trigger.alpha);
    doc.add("was_natural", res.was_natural ? "true" : "false");
    doc.add("clipped", res.clipped ? "true" : "false");
    doc.add("stats_fingerprint", tf.fingerprint);
    write_text(t.output, doc.str());
    out << "delta_norm " << textio::format_real(res.delta_norm) << '\n'
        << "achieved_score " << textio::format_real(res.achieved_score) << '\n'
        << "was_natural " << (res.was_natural ? "true" : "false") << '\n'
        << "clipped " << (res.clipped ? "true" : "false") << '\n';
    return ok;
}

struct ReportOptions {
    std::vector<std::string> runs;
    std::string output;
};

/// One summary row per run directory and report kind (poisoned / baseline), taken
/// at the best-ACC epoch of the mean report.
inline int cmd_report(const ReportOptions& r, std::ostream& out) {
    if (r.runs.empty()) throw std::invalid_argument("report needs at least one run directory");
    std::ostringstream csv;
    csv << "run,kind,dataset,strategy,S,beta,lambda,architecture,replicates,best_epoch,acc,asr_n,asr_m,"
           "realized_gamma,feasibility_rate,f1,f0,excluded\n";
    std::size_t rows = 0;
    for (const auto& run : r.runs) {
        for (const char* kind : {"report", "baseline"}) {
            const fs::path p = fs::path(run) / (std::string(kind) + "-mean.json");
            if (!fs::is_regular_file(p)) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(read_text(p));
            } catch (const nlohmann::json::exception& e) {
                throw DataError(p.string() + ": " + e.what());
            }
            const auto& cfgj = j.at("config");
            auto get = [&](const char* k) { return cfgj.contains(k) ? cfgj[k].get<std::string>() : std::string("NA"); };
            const auto best = j.at("best_epoch").get<std::size_t>();
            const nlohmann::json* row = nullptr;
            for (const auto& rr : j.at("rows"))
                if (rr.at("epoch").get<std::size_t>() == best) row = &rr;
            if (!row) throw DataError(p.string() + ": best epoch row missing");
            auto rate = [&](const char* k) {
                return (*row)[k].is_null() ? std::string("NA") : textio::format_real((*row)[k].get<double>());
            };
            csv << run << ',' << (std::string(kind) == "report" ? "poisoned" : "baseline") << ',' << get("dataset")
                << ',' << get("strategy") << ',' << get("S") << ',' << get("beta") << ',' << get("lambda") << ','
                << get("architecture") << ',' << get("replicates") << ',' << best << ','
                << textio::format_real((*row)["acc"].get<double>()) << ',' << rate("asr_n") << ',' << rate("asr_m")
                << ',' << textio::format_real(j.at("realized_gamma").get<double>()) << ','
                << textio::format_real(j.at("feasibility_rate").get<double>()) << ','
                << j.at("partition").at("f1").get<std::size_t>() << ',' << j.at("partition").at("f0").get<std::size_t>()
                << ',' << j.at("partition").at("excluded").get<std::size_t>() << '\n';
            ++rows;
        }
    }
    if (rows == 0) throw std::invalid_argument("no report-mean.json or baseline-mean.json found in the given runs");
    if (!r.output.empty()) write_text(r.output, csv.str());
    out << csv.str();
    return ok;
}

inline void add_experiment_options(CLI::App& app, Options& o) {
    app.add_option("--dataset", o.dataset, "mnist or cifar10")->capture_default_str();
    app.add_option("--data-dir", o.data_dir, "directory with the dataset files");
    app.add_option("--out", o.out, "parent directory for run directories")->capture_default_str();
    app.add_option("--run-dir", o.run_dir, "explicit run directory (default: <out>/<dataset>-<config hash>)");
    app.add_option("--strategy", o.strategy, "randomizing or learning")->capture_default_str();
    app.add_option("--side", o.side, "kernel side S (0: 16 for MNIST, 3 for CIFAR-10)")->capture_default_str();
    app.add_option("--beta", o.beta, "poisoning ratio")->capture_default_str();
    app.add_option("--lambda", o.lambda, "l2 budget of the trigger")->capture_default_str();
    app.add_option("--backdoor-class", o.backdoor_class, "backdoor class y_T")->capture_default_str();
    app.add_option("--kernel-batch", o.kernel_batch, "batch size M for sensitivity estimates")->capture_default_str();
    app.add_option("--learn-epochs", o.learn_epochs, "kernel learning epochs (-1: 1 for MNIST, 3 for CIFAR-10)")
        ->capture_default_str();
    app.add_option("--kernel-seed", o.kernel_seed, "seed for kernel initialization and batch sampling")
        ->capture_default_str();
    app.add_option("--arch", o.arch, "victim architecture: mlp[:hidden] or cnn[:c1,c2]")->capture_default_str();
    app.add_option("--lr", o.lr, "victim SGD learning rate")->capture_default_str();
    app.add_option("--momentum", o.momentum, "victim SGD momentum")->capture_default_str();
    app.add_option("--weight-decay", o.weight_decay, "victim L2 weight decay")->capture_default_str();
    app.add_option("--batch-size", o.batch_size, "victim minibatch size")->capture_default_str();
    app.add_option("--epochs", o.epochs, "victim training epochs")->capture_default_str();
    app.add_option("--seeds", o.seeds, "comma-separated victim training seeds")->delimiter(',')->capture_default_str();
    app.add_option("--train-limit", o.train_limit, "use only the first N training samples (0: all)")
        ->capture_default_str();
    app.add_option("--test-limit", o.test_limit, "use only the first N test samples (0: all)")->capture_default_str();
    app.add_flag("--clamp-raw", o.clamp_raw, "project triggered images back to displayable raw pixels");
}

/// Runs the command line and maps failures to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Clean-image backdoor toolkit: forge, poison, train and evaluate"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value file with option defaults");
    Options o;
    add_experiment_options(app, o);

    auto* forge = app.add_subcommand("forge", "build and calibrate the trigger kernel");
    auto* poison = app.add_subcommand("poison", "select the poison set and write the label manifest");
    PoisonOptions po;
    poison->add_option("--trigger", po.trigger, "trigger file (default: <run dir>/trigger.txt)");
    auto* te = app.add_subcommand("train-eval", "train victims per seed and evaluate every epoch");
    TrainEvalOptions teo;
    te->add_option("--trigger", teo.trigger, "trigger file (default: <run dir>/trigger.txt)");
    te->add_option("--manifest", teo.manifest, "label manifest (default: <run dir>/manifest.txt)");
    te->add_flag("--no-poison", teo.no_poison, "train on clean labels (no-attack baseline)");
    auto* one = app.add_subcommand("trigger-one", "add the trigger to a single image");
    TriggerOneOptions too;
    one->add_option("--trigger", too.trigger, "trigger file (default: <run dir>/trigger.txt)");
    one->add_option("--image", too.image, "image document (shape, space, pixels)");
    one->add_option("--index", too.index, "test-set index instead of --image");
    one->add_option("--output", too.output, "output image document")->required();
    auto* rep = app.add_subcommand("report", "summarize run directories");
    ReportOptions ro;
    rep->add_option("runs", ro.runs, "run directories")->required();
    rep->add_option("--output", ro.output, "also write the summary CSV here");
    for (auto* sub : {forge, poison, te, one, rep}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : usage;
    }
    o.lambda_given = app.get_option("--lambda")->count() > 0;
    try {
        if (*forge) return cmd_forge(o, out);
        if (*poison) return cmd_poison(o, po, out);
        if (*te) return cmd_train_eval(o, teo, out);
        if (*one) return cmd_trigger_one(o, too, out);
        return cmd_report(ro, out);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return data;
    } catch (const std::out_of_range& e) {
        err << "data error: " << e.what() << '\n';
        return data;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return numeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return usage;
    }
}

}  // namespace cib::cli
