#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "idkl/config.hpp"
#include "idkl/dataset.hpp"
#include "idkl/evalmetrics.hpp"
#include "idkl/gradcheck.hpp"
#include "idkl/io.hpp"
#include "idkl/log.hpp"
#include "idkl/model.hpp"
#include "idkl/train.hpp"

namespace fs = std::filesystem;
using namespace idkl;

namespace {

constexpr int kExitFailure = 1;  // gradient check failed
constexpr int kExitInput = 2;    // invalid config, missing file, incompatible checkpoint
constexpr int kExitNumeric = 3;  // NaN/Inf during training

// Thrown for user-facing input problems that map to kExitInput.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

nlohmann::json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path.string());
    try {
        nlohmann::json j;
        is >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + " is not valid JSON: " + e.what());
    }
}

data::Dataset load_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.csv")) {
        throw InputError("no dataset at " + dir.string() + " (missing manifest.csv); run gen-data first");
    }
    return data::load(dir);
}

struct GenArgs {
    std::string config;
    std::string out = "data/train";
    std::int64_t seed = -1;
    std::int64_t sample_seed = -2;
    bool print = false;
};

int cmd_gen_data(const GenArgs& a) {
    data::SyntheticSpec spec;
    if (!a.config.empty()) spec = data::spec_from_json(read_json(a.config));
    if (a.seed >= 0) spec.seed = static_cast<std::uint64_t>(a.seed);
    if (a.sample_seed >= -1) spec.sample_seed = a.sample_seed;
    data::validate(spec);
    if (a.print) {
        std::cout << data::to_json(spec).dump(2) << '\n';
        return 0;
    }
    const data::Dataset ds = data::generate(spec);
    data::save(ds, spec, a.out);
    std::cout << "wrote " << ds.samples.size() << " samples (" << spec.n_identities << " identities x "
              << spec.images_per_modality << " images x 2 modalities, " << spec.channels << "x" << spec.height << "x"
              << spec.width << ") to " << a.out << '\n';
    return 0;
}

struct TrainArgs {
    std::string config;
    std::string out;
    std::string data;
    std::int64_t seed = -1;
    std::vector<std::string> disable;
    bool print = false;
};

RunConfig resolve(const TrainArgs& a) {
    RunConfig c = a.config.empty() ? RunConfig{} : config_from_json(read_json(a.config));
    if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
    if (!a.out.empty()) c.out_dir = a.out;
    if (!a.data.empty()) c.data_dir = a.data;
    for (const auto& d : a.disable) c.disable.push_back(d);
    validate(c);
    return c;
}

int cmd_train(const TrainArgs& a) {
    const RunConfig c = resolve(a);
    if (a.print) {
        std::cout << to_json(c).dump(2) << '\n';
        return 0;
    }
    const data::Dataset ds = load_dataset(c.data_dir);
    log::info("training " + std::to_string(c.epochs) + " epochs x " +
              std::to_string(train::batches_per_epoch(c, ds)) + " batches, seed " + std::to_string(c.seed));
    const train::TrainResult r = train::train(c, ds, c.out_dir);
    const train::StepRecord& last = r.steps.back();
    std::printf("steps %zu  final L_b %.6f  L_ip %.6f  L_tgsa %.6f  L_csa %.6f  L_mdr %.6f  total %.6f\n",
                last.step, last.L_b, last.L_ip, last.L_tgsa, last.L_csa, last.L_mdr, last.total);
    std::cout << "checkpoint " << (fs::path(c.out_dir) / "checkpoint").string() << '\n';
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data = "data/eval";
    std::string out;
    std::size_t threads = 1;
    double query_fraction = 0.5;
    std::uint64_t seed = 0;
    std::string metric = "euclidean";
};

int cmd_eval(const EvalArgs& a) {
    if (!fs::exists(io::bin_path(a.checkpoint)) || !fs::exists(fs::path(a.checkpoint + ".json"))) {
        throw InputError("missing checkpoint " + a.checkpoint + " (.bin/.index.csv/.json)");
    }
    if (a.metric != "euclidean" && a.metric != "cosine") {
        throw InputError("metric must be euclidean or cosine");
    }
    const model::DualBranchNet net = model::load_checkpoint(a.checkpoint);
    const data::Dataset ds = load_dataset(a.data);
    std::mt19937_64 rng(a.seed);
    const data::RetrievalSplit sp = data::split(ds, a.query_fraction, rng);
    eval::EvalOptions opts;
    opts.threads = a.threads;
    opts.metric = a.metric == "cosine" ? eval::Metric::cosine : eval::Metric::euclidean;
    const eval::MetricsReport rep = eval::evaluate(net, sp.gallery, sp.query, opts);

    const fs::path report = a.out.empty() ? fs::path(a.checkpoint).parent_path() / "eval.json" : fs::path(a.out);
    if (!report.parent_path().empty()) fs::create_directories(report.parent_path());
    std::ofstream(report) << eval::to_json(rep).dump(2) << '\n';

    const fs::path csv = report.parent_path() / "eval.csv";
    const bool fresh = !fs::exists(csv);
    std::ofstream os(csv, std::ios::app);
    if (fresh) os << "checkpoint,data,n_queries,rank1,rank5,rank10,map\n";
    auto rank_at = [&](std::size_t k) { return rep.rank(std::min(k, rep.cmc.size())); };
    char line[512];
    std::snprintf(line, sizeof line, "%s,%s,%zu,%.17g,%.17g,%.17g,%.17g\n", a.checkpoint.c_str(), a.data.c_str(),
                  rep.n_queries, rank_at(1), rank_at(5), rank_at(10), rep.map);
    os << line;

    std::printf("queries %zu  gallery %zu  rank-1 %.4f  rank-5 %.4f  rank-10 %.4f  mAP %.4f\n", rep.n_queries,
                sp.gallery.size(), rank_at(1), rank_at(5), rank_at(10), rep.map);
    std::cout << "report " << report.string() << '\n';
    return 0;
}

struct GradArgs {
    std::string config;
    std::int64_t seed = -1;
    std::size_t instances = 5;
    double h = gradcheck::kDefaultStep;
    bool sweep = false;
    bool ops = false;
    bool print = false;
};

bool print_terms(const std::vector<gradcheck::TermResult>& rows, double tol) {
    bool ok = true;
    std::printf("%-12s %14s %8s  %s\n", "term", "max_rel_err", "status", "worst");
    for (const auto& r : rows) {
        std::printf("%-12s %14.3e %8s  %s\n", r.term.c_str(), r.max_rel_err, r.pass ? "PASS" : "FAIL",
                    r.worst.c_str());
        ok = ok && r.pass;
    }
    if (!ok) {
        std::string failed;
        for (const auto& r : rows) {
            if (!r.pass) failed += (failed.empty() ? "" : ", ") + r.term;
        }
        std::printf("failed terms (tol %.0e): %s\n", tol, failed.c_str());
    }
    return ok;
}

int cmd_gradcheck(const GradArgs& a) {
    RunConfig c = a.config.empty() ? gradcheck::toy_config() : config_from_json(read_json(a.config));
    gradcheck::Options o;
    o.instances = a.instances;
    o.h = a.h;
    if (a.seed >= 0) o.seed = static_cast<std::uint64_t>(a.seed);
    if (a.print) {
        std::cout << to_json(c).dump(2) << '\n';
        return 0;
    }
    if (c.P * c.K * 2 > 16) {
        log::warn("gradcheck on a batch of " + std::to_string(c.P * c.K * 2) + " images may be slow");
    }
    bool ok = true;
    if (a.ops) {
        std::printf("%-26s %14s %8s\n", "op", "max_rel_err", "status");
        for (const auto& op : gradcheck::op_registry()) {
            const auto r = gradcheck::check_op(op, 10, o.h, o.tol, o.seed);
            std::printf("%-26s %14.3e %8s\n", r.op.c_str(), r.max_rel_err, r.pass ? "PASS" : "FAIL");
            ok = ok && r.pass;
        }
    }
    if (a.sweep) {
        // Errors are reported for every step size; only h = 1e-5 decides the exit code.
        for (double h : {1e-4, 1e-5, 1e-6}) {
            gradcheck::Options so = o;
            so.h = h;
            const auto rows = gradcheck::check_terms(c, so);
            std::printf("h = %.0e\n", h);
            const bool pass = print_terms(rows, so.tol);
            if (h == gradcheck::kDefaultStep) ok = ok && pass;
        }
    } else {
        std::printf("instances %zu  h %.0e  tol %.0e\n", o.instances, o.h, o.tol);
        ok = print_terms(gradcheck::check_terms(c, o), o.tol) && ok;
    }
    return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"IDKL cross-modal metric-learning lab"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate the synthetic two-modality dataset");
    g->add_option("--config", gen.config, "SyntheticSpec JSON");
    g->add_option("--out", gen.out, "Output directory")->capture_default_str();
    g->add_option("--seed", gen.seed, "Prototype/style seed override");
    g->add_option("--sample-seed", gen.sample_seed, "Per-image noise seed override (-1: reuse seed)");
    g->add_flag("--print-config", gen.print, "Print the effective spec and exit");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a dual-branch network");
    t->add_option("--config", tr.config, "Run config JSON");
    t->add_option("--out", tr.out, "Output directory");
    t->add_option("--data", tr.data, "Training dataset directory");
    t->add_option("--seed", tr.seed, "Seed override");
    t->add_option("--disable", tr.disable, "Disable a loss term (ip, tgsa, csa, mdr); repeatable")->take_all();
    t->add_flag("--print-config", tr.print, "Print the effective config and exit");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Cross-modal retrieval evaluation of a checkpoint");
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint stem (e.g. runs/x/checkpoint)")->required();
    e->add_option("--data", ev.data, "Evaluation dataset directory")->capture_default_str();
    e->add_option("--out", ev.out, "Report JSON path (default: next to the checkpoint)");
    e->add_option("--threads", ev.threads, "Ranking threads")->check(CLI::PositiveNumber)->capture_default_str();
    e->add_option("--query-fraction", ev.query_fraction, "Per-identity query share")->capture_default_str();
    e->add_option("--seed", ev.seed, "Split seed")->capture_default_str();
    e->add_option("--metric", ev.metric, "euclidean or cosine")->capture_default_str();

    GradArgs gc;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient check of every loss term");
    c->add_option("--config", gc.config, "Run config JSON (default: built-in toy config)");
    c->add_option("--seed", gc.seed, "First instance seed");
    c->add_option("--instances", gc.instances, "Seeded instances")->capture_default_str();
    c->add_option("--step", gc.h, "Central-difference step")->capture_default_str();
    c->add_flag("--h-sweep", gc.sweep, "Report errors for h = 1e-4, 1e-5, 1e-6");
    c->add_flag("--ops", gc.ops, "Also check every primitive op on 10 random instances");
    c->add_flag("--print-config", gc.print, "Print the effective config and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }

    try {
        if (*g) return cmd_gen_data(gen);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*c) return cmd_gradcheck(gc);
    } catch (const NumericError& err) {
        log::error(std::string("numeric failure: ") + err.what());
        return kExitNumeric;
    } catch (const InputError& err) {
        log::error(err.what());
        return kExitInput;
    } catch (const std::invalid_argument& err) {  // DimensionError, ContractError
        log::error(err.what());
        return kExitInput;
    } catch (const io::FormatError& err) {
        log::error(err.what());
        return kExitInput;
    } catch (const fs::filesystem_error& err) {
        log::error(err.what());
        return kExitInput;
    } catch (const std::exception& err) {
        log::error(err.what());
        return kExitFailure;
    }
    return 0;
}
