#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "textseg/datasets.hpp"
#include "textseg/errors.hpp"
#include "textseg/train_cli.hpp"

using namespace textseg;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// --config file first, then individual flags on top
RunConfig build_config(const std::string& config_path) {
    if (config_path.empty()) return RunConfig{};
    return run_config_from_json(slurp(config_path));
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<uint64_t> seeds;
    size_t pos = 0;
    while (pos <= csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        std::string tok = csv.substr(pos, comma - pos);
        if (tok.empty()) throw UsageError("--seeds: empty entry in '" + csv + "'");
        try {
            size_t used = 0;
            uint64_t v = std::stoull(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            seeds.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("--seeds: '" + tok + "' is not an integer");
        }
        pos = comma + 1;
    }
    return seeds;
}

int run(int argc, char** argv) {
    CLI::App app{"text-guided segmentation workbench"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic phrase-grounded dataset");
    uint64_t synth_seed = 0;
    std::string synth_out = "data";
    int n_train = 512, n_val = 64, n_test = 128, size = 64;
    bool no_distractors = false;
    synth->add_option("--seed", synth_seed, "dataset seed");
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--n-train", n_train, "training samples");
    synth->add_option("--n-val", n_val, "validation samples");
    synth->add_option("--n-test", n_test, "test samples");
    synth->add_option("--size", size, "image side (multiple of 8)");
    synth->add_flag("--no-distractors", no_distractors, "single object per image");

    // ---- train ----
    auto* train = app.add_subcommand("train", "train one model and write report + checkpoint");
    std::string t_config, t_data, t_out, t_fusion, t_aug, t_text;
    uint64_t t_seed = 0;
    bool t_seed_set = false;
    int t_epochs = 0, t_batch = 0;
    double t_lr = 0, t_lambda = -1;
    train->add_option("--config", t_config, "JSON config file (flags override it)");
    train->add_option("--data", t_data, "dataset directory");
    train->add_option("--out", t_out, "output directory");
    train->add_option("--seed", t_seed, "run seed")->each([&](const std::string&) {
        t_seed_set = true;
    });
    train->add_option("--epochs", t_epochs, "training epochs");
    train->add_option("--batch", t_batch, "batch size");
    train->add_option("--lr", t_lr, "learning rate");
    train->add_option("--lambda", t_lambda, "weight of the L1 pseudo-image term");
    train->add_option("--aug", t_aug, "on|off")->check(CLI::IsMember({"on", "off"}));
    train->add_option("--text", t_text, "on|off")->check(CLI::IsMember({"on", "off"}));
    train->add_option("--fusion", t_fusion, "early|misaligned|interpolation");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    std::string e_ckpt, e_manifest;
    eval->add_option("--checkpoint", e_ckpt, "checkpoint.bin")->required();
    eval->add_option("--manifest", e_manifest, "JSONL manifest")->required();

    // ---- experiment ----
    auto* exp = app.add_subcommand("experiment", "run the six-cell ablation matrix");
    std::string x_config, x_data, x_out, x_seeds = "1,2,3";
    exp->add_option("--config", x_config, "JSON base config (flags override it)");
    exp->add_option("--data", x_data, "dataset directory");
    exp->add_option("--out", x_out, "output directory (runs + matrix.csv)");
    exp->add_option("--seeds", x_seeds, "comma-separated seed list (>= 2)");

    // ---- dump-pseudo ----
    auto* dump = app.add_subcommand("dump-pseudo", "write pseudo-image PGMs for a manifest");
    std::string d_ckpt, d_manifest, d_out = "pseudo";
    dump->add_option("--checkpoint", d_ckpt, "checkpoint.bin")->required();
    dump->add_option("--manifest", d_manifest, "JSONL manifest")->required();
    dump->add_option("--out", d_out, "output directory");

    // ---- gradcheck ----
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);  // --help and friends: exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the complaint
        return 2;
    }

    if (synth->parsed()) {
        synth_dataset(synth_seed, n_train, n_val, n_test, size, size, synth_out,
                      !no_distractors);
        std::printf("wrote %d/%d/%d samples at %dx%d under %s\n", n_train, n_val, n_test, size,
                    size, synth_out.c_str());
        return 0;
    }

    if (train->parsed()) {
        RunConfig cfg = build_config(t_config);
        if (!t_data.empty()) cfg.dataset_dir = t_data;
        if (!t_out.empty()) cfg.out_dir = t_out;
        if (t_seed_set) cfg.seed = t_seed;
        if (t_epochs > 0) cfg.epochs = t_epochs;
        if (t_batch > 0) cfg.batch_size = t_batch;
        if (t_lr > 0) cfg.lr = t_lr;
        if (t_lambda >= 0) cfg.lambda = t_lambda;
        if (!t_aug.empty()) cfg.aug = t_aug == "on";
        if (!t_text.empty()) cfg.text = t_text == "on";
        if (!t_fusion.empty()) cfg.fusion = parse_fusion_mode(t_fusion);

        RunReport rep = train_run(cfg);
        std::printf("trained %d epochs: final total=%.4f\n", cfg.epochs,
                    rep.epochs.back().total);
        std::printf("test dice %.4f +/- %.4f | miou %.4f +/- %.4f\n", rep.test.dice_mean,
                    rep.test.dice_std, rep.test.miou_mean, rep.test.miou_std);
        std::printf("report: %s\ncheckpoint: %s (%s)\n", rep.report_path.c_str(),
                    rep.checkpoint_path.c_str(), rep.checkpoint_hash.c_str());
        return 0;
    }

    if (eval->parsed()) {
        EvalResult r = evaluate(e_ckpt, e_manifest);
        std::printf("dice %.4f +/- %.4f | miou %.4f +/- %.4f over %zu images\n", r.dice_mean,
                    r.dice_std, r.miou_mean, r.miou_std, r.dice_per_image.size());
        return 0;
    }

    if (exp->parsed()) {
        RunConfig base = build_config(x_config);
        if (!x_data.empty()) base.dataset_dir = x_data;
        if (!x_out.empty()) base.out_dir = x_out;
        if (base.out_dir.empty()) base.out_dir = "runs";
        std::string csv_path = base.out_dir + "/matrix.csv";
        auto rows = experiment_matrix(base, parse_seed_list(x_seeds), csv_path);
        for (const auto& r : rows)
            std::printf("%-18s dice %.4f +/- %.4f | miou %.4f +/- %.4f\n", r.label.c_str(),
                        r.dice_mean, r.dice_std, r.miou_mean, r.miou_std);
        std::printf("matrix: %s\n", csv_path.c_str());
        return 0;
    }

    if (dump->parsed()) {
        double mean_iou = dump_pseudo(d_ckpt, d_manifest, d_out);
        std::printf("mean IoU(pseudo > 0.5, mask) = %.4f\n", mean_iou);
        std::printf("dumps: %s\n", d_out.c_str());
        return 0;
    }

    if (gc->parsed()) {
        auto entries = gradcheck_suite();
        bool ok = true;
        for (const auto& e : entries) {
            std::printf("%-18s max_rel_err=%.3e tol=%.0e coords=%lld skipped=%lld  %s\n",
                        e.name.c_str(), e.max_rel_err, e.tol,
                        static_cast<long long>(e.coords_checked),
                        static_cast<long long>(e.coords_skipped), e.pass ? "ok" : "FAIL");
            ok = ok && e.pass;
        }
        return ok ? 0 : 1;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    use_single_gemm_thread();
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: %s (step %ld)\n", e.what(), e.step);
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
