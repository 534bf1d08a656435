#include "textseg/train_cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <utility>

#include "json.hpp"
#include "textseg/checkpoint.hpp"
#include "textseg/errors.hpp"
#include "textseg/fusion_augment.hpp"
#include "textseg/losses.hpp"
#include "textseg/optim.hpp"
#include "textseg/rng.hpp"

#ifdef TEXTSEG_USE_CBLAS
extern "C" void openblas_set_num_threads(int);
#endif

namespace fs = std::filesystem;

namespace textseg {

void use_single_gemm_thread() {
#ifdef TEXTSEG_USE_CBLAS
    openblas_set_num_threads(1);
#endif
}

const char* fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::early: return "early";
        case FusionMode::misaligned: return "misaligned";
        case FusionMode::interpolation: return "interpolation";
    }
    return "?";
}

FusionMode parse_fusion_mode(const std::string& name) {
    if (name == "early") return FusionMode::early;
    if (name == "misaligned") return FusionMode::misaligned;
    if (name == "interpolation") return FusionMode::interpolation;
    throw ConfigError("unknown fusion mode '" + name +
                      "' (expected early, misaligned, or interpolation)");
}

void RunConfig::validate() const {
    if (lr <= 0) throw ConfigError("config: lr must be > 0");
    if (lambda < 0) throw ConfigError("config: lambda must be >= 0");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (image_h != image_w || image_h < 8 || image_h % 8 != 0)
        throw ConfigError("config: image size must be square and a multiple of 8, got " +
                          std::to_string(image_h) + "x" + std::to_string(image_w));
}

std::string run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j{{"seed", cfg.seed},
                     {"epochs", cfg.epochs},
                     {"batch_size", cfg.batch_size},
                     {"lr", cfg.lr},
                     {"lambda", cfg.lambda},
                     {"image_h", cfg.image_h},
                     {"image_w", cfg.image_w},
                     {"aug", cfg.aug},
                     {"text", cfg.text},
                     {"fusion", fusion_mode_name(cfg.fusion)},
                     {"dataset_dir", cfg.dataset_dir},
                     {"out_dir", cfg.out_dir},
                     {"vocab_seed", cfg.vocab_seed}};
    return j.dump();
}

RunConfig run_config_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");

    static const char* known[] = {"seed",    "epochs",  "batch_size",  "lr",
                                  "lambda",  "image_h", "image_w",     "aug",
                                  "text",    "fusion",  "dataset_dir", "out_dir",
                                  "vocab_seed"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find_if(std::begin(known), std::end(known),
                         [&](const char* k) { return it.key() == k; }) == std::end(known))
            throw ConfigError("config: unknown key \"" + it.key() + "\"");

    RunConfig cfg;
    try {
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
        if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
        if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
        if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
        if (j.contains("lambda")) cfg.lambda = j["lambda"].get<double>();
        if (j.contains("image_h")) cfg.image_h = j["image_h"].get<int>();
        if (j.contains("image_w")) cfg.image_w = j["image_w"].get<int>();
        if (j.contains("aug")) cfg.aug = j["aug"].get<bool>();
        if (j.contains("text")) cfg.text = j["text"].get<bool>();
        if (j.contains("fusion")) cfg.fusion = parse_fusion_mode(j["fusion"].get<std::string>());
        if (j.contains("dataset_dir")) cfg.dataset_dir = j["dataset_dir"].get<std::string>();
        if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
        if (j.contains("vocab_seed")) cfg.vocab_seed = j["vocab_seed"].get<uint64_t>();
    } catch (const nlohmann::json::type_error& e) {
        throw ConfigError(std::string("config: wrong value type: ") + e.what());
    }
    return cfg;
}

Model init_model(const RunConfig& cfg) {
    cfg.validate();
    Model m;
    m.text = cfg.text;
    m.fusion = cfg.fusion;
    GeneratorConfig gc;
    gc.image_h = cfg.image_h;
    gc.image_w = cfg.image_w;
    gc.image_c = 1;
    m.gen = init_generator(gc, derive_seed(cfg.seed, "init.generator"));
    UNetConfig uc;
    uc.in_channels = cfg.text ? 2 : 1;
    uc.image_h = cfg.image_h;
    uc.image_w = cfg.image_w;
    m.unet = init_unet(uc, derive_seed(cfg.seed, "init.unet"));
    return m;
}

LoadedSet load_set(const Manifest& manifest) {
    LoadedSet s;
    for (const auto& rec : manifest.records) {
        s.images.push_back(read_pgm(rec.image_path));
        Tensor mask = read_pgm(rec.mask_path);
        for (double& v : mask.mutable_data()) v = v > 0.5 ? 1.0 : 0.0;
        s.masks.push_back(mask);
        s.embeddings.push_back(rec.embedding);
        s.texts.push_back(rec.text);
    }
    return s;
}

namespace {

Tensor stack_rows(const std::vector<Tensor>& xs, const std::vector<int>& idx, size_t b0,
                  size_t bs) {
    int h = xs[idx[b0]].dim(2), w = xs[idx[b0]].dim(3);
    std::vector<double> v;
    v.reserve(bs * h * w);
    for (size_t k = 0; k < bs; ++k) {
        const auto& d = xs[idx[b0 + k]].data();
        v.insert(v.end(), d.begin(), d.end());
    }
    return Tensor::from_data({static_cast<int>(bs), 1, h, w}, std::move(v));
}

Tensor stack_embeddings(const std::vector<std::vector<double>>& es, const std::vector<int>& idx,
                        size_t b0, size_t bs, bool requires_grad = false) {
    std::vector<double> v;
    v.reserve(bs * kEmbedDim);
    for (size_t k = 0; k < bs; ++k) {
        const auto& e = es[idx[b0 + k]];
        v.insert(v.end(), e.begin(), e.end());
    }
    return Tensor::from_data({static_cast<int>(bs), kEmbedDim}, std::move(v), requires_grad);
}

Tensor forward_pseudo(const Model& m, const Tensor& emb) {
    return m.fusion == FusionMode::interpolation ? generate_pseudo_interp(m.gen, emb)
                                                 : generate_pseudo(m.gen, emb);
}

Tensor slice_sample(const Tensor& batch, int i) {
    int h = batch.dim(2), w = batch.dim(3);
    size_t hw = static_cast<size_t>(h) * w;
    const auto& d = batch.data();
    std::vector<double> v(d.begin() + i * hw, d.begin() + (i + 1) * hw);
    return Tensor::from_data({1, 1, h, w}, std::move(v));
}

double vec_mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double vec_std(const std::vector<double>& v) {
    double m = vec_mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / v.size());
}

std::vector<Tensor> trainable_params(Model& m) {
    std::vector<Tensor> ps;
    for (auto& [name, t] : m.unet.named()) ps.push_back(t);
    if (m.text)
        for (auto& [name, t] : m.gen.named()) ps.push_back(t);
    return ps;
}

void check_set_size(const LoadedSet& data, int h, int w) {
    if (data.images.empty()) throw UsageError("dataset split is empty");
    if (data.images[0].dim(2) != h || data.images[0].dim(3) != w)
        throw ConfigError("dataset images are " + std::to_string(data.images[0].dim(2)) + "x" +
                          std::to_string(data.images[0].dim(3)) + " but the config wants " +
                          std::to_string(h) + "x" + std::to_string(w));
}

}  // namespace

EvalResult evaluate(const Model& model, const LoadedSet& data, int batch_size) {
    if (data.images.empty()) throw UsageError("evaluate: empty dataset");
    int h = model.unet.cfg.image_h, w = model.unet.cfg.image_w;
    check_set_size(data, h, w);

    EvalResult r;
    int n = static_cast<int>(data.images.size());
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int b0 = 0; b0 < n; b0 += batch_size) {
        size_t bs = std::min<size_t>(batch_size, n - b0);
        Tensor img = stack_rows(data.images, idx, b0, bs);
        Tensor x = img;
        if (model.text) {
            Tensor emb = stack_embeddings(data.embeddings, idx, b0, bs);
            x = fuse_concat(img, forward_pseudo(model, emb));
        }
        Tensor probs = sigmoid(unet_forward(model.unet, x));
        for (size_t k = 0; k < bs; ++k) {
            Tensor p = slice_sample(probs, static_cast<int>(k));
            const Tensor& m = data.masks[idx[b0 + k]];
            r.dice_per_image.push_back(dice_metric(p, m));
            r.miou_per_image.push_back(miou_metric(p, m));
        }
    }
    r.dice_mean = vec_mean(r.dice_per_image);
    r.dice_std = vec_std(r.dice_per_image);
    r.miou_mean = vec_mean(r.miou_per_image);
    r.miou_std = vec_std(r.miou_per_image);
    return r;
}

void save_model(const std::string& path, const Model& model, const RunConfig& cfg) {
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const auto& [name, t] : model.unet.named()) tensors.emplace_back("unet." + name, t);
    if (model.text)
        for (const auto& [name, t] : model.gen.named()) tensors.emplace_back("gen." + name, t);
    save_checkpoint(path, run_config_to_json(cfg), tensors);
}

LoadedModel load_model(const std::string& path) {
    CheckpointData data = load_checkpoint_file(path);
    LoadedModel lm;
    lm.cfg = run_config_from_json(data.config_json);
    lm.cfg.validate();
    lm.model = init_model(lm.cfg);

    std::vector<std::pair<std::string, Tensor>> dst;
    for (const auto& [name, t] : lm.model.unet.named()) dst.emplace_back("unet." + name, t);
    if (lm.model.text)
        for (const auto& [name, t] : lm.model.gen.named()) dst.emplace_back("gen." + name, t);

    if (dst.size() != data.tensors.size())
        throw FormatError("load_model: " + path + ": expected " + std::to_string(dst.size()) +
                          " tensors, file has " + std::to_string(data.tensors.size()));
    for (auto& [name, loaded] : data.tensors) {
        auto it = std::find_if(dst.begin(), dst.end(),
                               [&](const auto& p) { return p.first == name; });
        if (it == dst.end()) throw FormatError("load_model: unexpected tensor " + name);
        if (it->second.shape() != loaded.shape())
            throw ConfigError("load_model: tensor " + name + " is " + shape_str(loaded.shape()) +
                              ", model wants " + shape_str(it->second.shape()));
        it->second.mutable_data() = loaded.data();
    }
    return lm;
}

EvalResult evaluate(const std::string& checkpoint_path, const std::string& manifest_path) {
    LoadedModel lm = load_model(checkpoint_path);
    LoadedSet data = load_set(load_manifest(manifest_path, lm.cfg.vocab_seed));
    return evaluate(lm.model, data, lm.cfg.batch_size);
}

RunReport train_run(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.dataset_dir.empty()) throw ConfigError("config: dataset_dir is required");
    if (cfg.out_dir.empty()) throw ConfigError("config: out_dir is required");
    auto t0 = std::chrono::steady_clock::now();

    fs::path ds(cfg.dataset_dir);
    LoadedSet train = load_set(load_manifest((ds / "train.jsonl").string(), cfg.vocab_seed));
    LoadedSet test = load_set(load_manifest((ds / "test.jsonl").string(), cfg.vocab_seed));
    if (train.images.empty()) throw UsageError("train split is empty");
    check_set_size(train, cfg.image_h, cfg.image_w);

    Model model = init_model(cfg);
    AdamW opt(trainable_params(model), cfg.lr);

    RunReport report;
    report.cfg = cfg;
    int n = static_cast<int>(train.images.size());
    int64_t gstep = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
        for (int i = n - 1; i > 0; --i) {
            int j = shuffle_rng.uniform_int(0, i);
            std::swap(order[i], order[j]);
        }

        double sum_dice = 0, sum_l1 = 0, sum_total = 0;
        int count = 0;
        for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
            size_t bs = std::min<size_t>(cfg.batch_size, n - b0);
            Tensor img = stack_rows(train.images, order, b0, bs);
            Tensor msk = stack_rows(train.masks, order, b0, bs);

            Tensor fused = img;
            Tensor l1 = Tensor::scalar(0.0);
            if (cfg.text) {
                Tensor emb = stack_embeddings(train.embeddings, order, b0, bs);
                Tensor pseudo = forward_pseudo(model, emb);
                fused = fuse_concat(img, pseudo);
                // the L1 target is the un-augmented pair: the pseudo image
                // should match the object where it actually is, the joint
                // warp happens afterwards
                if (model.fusion != FusionMode::interpolation)
                    l1 = l1_roi_loss(pseudo, img, msk);
            }

            Tensor x = fused, y = msk;
            if (cfg.aug) {
                Rng aug_rng(derive_seed(cfg.seed, "aug", static_cast<uint64_t>(gstep)));
                std::vector<AugParams> ps(bs);
                for (auto& p : ps) p = sample_aug(aug_rng, AugEnable{});
                auto [xa, ya] = (cfg.text && model.fusion == FusionMode::misaligned)
                                    ? augment_pair_misaligned(fused, msk, ps)
                                    : augment_pair(fused, msk, ps);
                x = xa;
                y = ya;
            }

            Tensor logits = unet_forward(model.unet, x);
            Tensor dice = dice_loss(logits, y);
            Tensor total = total_loss(dice, l1, {cfg.lambda});
            double tv = total.item();
            if (!std::isfinite(tv))
                throw DivergenceError("training loss went non-finite at step " +
                                          std::to_string(gstep),
                                      static_cast<long>(gstep));
            backward(total);
            opt.step();

            sum_dice += dice.item() * bs;
            sum_l1 += l1.item() * bs;
            sum_total += tv * bs;
            count += static_cast<int>(bs);
            ++gstep;
        }
        report.epochs.push_back({sum_dice / count, sum_l1 / count, sum_total / count});
    }

    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("train_run: cannot create " + cfg.out_dir);
    report.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.bin").string();
    save_model(report.checkpoint_path, model, cfg);
    report.checkpoint_hash = file_fnv1a_hex(report.checkpoint_path);
    report.test = evaluate(model, test, cfg.batch_size);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::json j;
    j["config"] = nlohmann::json::parse(run_config_to_json(cfg));
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : report.epochs)
        j["epochs"].push_back({{"dice", e.dice}, {"l1", e.l1}, {"total", e.total}});
    j["test"] = {{"dice_mean", report.test.dice_mean},
                 {"dice_std", report.test.dice_std},
                 {"miou_mean", report.test.miou_mean},
                 {"miou_std", report.test.miou_std},
                 {"dice_per_image", report.test.dice_per_image},
                 {"miou_per_image", report.test.miou_per_image}};
    j["checkpoint"] = {{"path", report.checkpoint_path}, {"hash", report.checkpoint_hash}};
    j["timing"] = {{"wall_seconds", report.wall_seconds}};

    report.report_path = (fs::path(cfg.out_dir) / "report.json").string();
    std::ofstream rf(report.report_path, std::ios::binary);
    if (!rf) throw IoError("train_run: cannot open " + report.report_path);
    rf << j.dump(2) << '\n';
    if (!rf) throw IoError("train_run: short write to " + report.report_path);
    return report;
}

std::vector<MatrixRow> experiment_matrix(const RunConfig& base, const std::vector<uint64_t>& seeds,
                                         const std::string& csv_path) {
    if (seeds.size() < 2) throw UsageError("experiment_matrix: need at least 2 seeds");

    struct CellDef {
        const char* label;
        bool aug, text;
        FusionMode fusion;
    };
    static const CellDef cells[] = {
        {"aug_off_text_off", false, false, FusionMode::early},
        {"aug_off_text_on", false, true, FusionMode::early},
        {"aug_on_text_off", true, false, FusionMode::early},
        {"aug_on_text_on", true, true, FusionMode::early},
        {"interpolation", true, true, FusionMode::interpolation},
        {"misaligned", true, true, FusionMode::misaligned},
    };

    if (fs::path(csv_path).has_parent_path()) {
        std::error_code ec;
        fs::create_directories(fs::path(csv_path).parent_path(), ec);
    }
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw IoError("experiment_matrix: cannot open " + csv_path);
    csv << "cell,aug,text,fusion,seeds,dice_mean,dice_std,miou_mean,miou_std\n";
    csv.flush();

    std::vector<MatrixRow> rows;
    for (const auto& cell : cells) {
        MatrixRow row;
        row.label = cell.label;
        row.aug = cell.aug;
        row.text = cell.text;
        row.fusion = cell.fusion;
        for (uint64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.aug = cell.aug;
            cfg.text = cell.text;
            cfg.fusion = cell.fusion;
            cfg.seed = seed;
            cfg.out_dir = (fs::path(base.out_dir) / cell.label / ("seed" + std::to_string(seed)))
                              .string();
            RunReport rep = train_run(cfg);
            row.dice_per_seed.push_back(rep.test.dice_mean);
            row.miou_per_seed.push_back(rep.test.miou_mean);
        }
        row.dice_mean = vec_mean(row.dice_per_seed);
        row.dice_std = vec_std(row.dice_per_seed);
        row.miou_mean = vec_mean(row.miou_per_seed);
        row.miou_std = vec_std(row.miou_per_seed);

        char line[256];
        std::snprintf(line, sizeof line, "%s,%d,%d,%s,%zu,%.6f,%.6f,%.6f,%.6f\n", cell.label,
                      cell.aug ? 1 : 0, cell.text ? 1 : 0, fusion_mode_name(cell.fusion),
                      seeds.size(), row.dice_mean, row.dice_std, row.miou_mean, row.miou_std);
        csv << line;
        csv.flush();
        rows.push_back(std::move(row));
    }
    return rows;
}

double dump_pseudo(const std::string& checkpoint_path, const std::string& manifest_path,
                   const std::string& out_dir) {
    LoadedModel lm = load_model(checkpoint_path);
    if (!lm.model.text)
        throw UsageError("dump_pseudo: checkpoint was trained without the text branch");
    Manifest manifest = load_manifest(manifest_path, lm.cfg.vocab_seed);
    if (manifest.records.empty()) throw UsageError("dump_pseudo: empty manifest");
    LoadedSet data = load_set(manifest);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("dump_pseudo: cannot create " + out_dir);
    std::ofstream csv(fs::path(out_dir) / "iou.csv", std::ios::binary);
    if (!csv) throw IoError("dump_pseudo: cannot open iou.csv");
    csv << "id,iou\n";

    double sum = 0;
    for (size_t i = 0; i < data.images.size(); ++i) {
        std::string stem = fs::path(manifest.records[i].image_path).stem().string();
        Tensor emb = Tensor::from_data({1, kEmbedDim}, data.embeddings[i]);
        Tensor pseudo = forward_pseudo(lm.model, emb);

        fs::path base = fs::path(out_dir);
        write_pgm((base / (stem + "_image.pgm")).string(), data.images[i]);
        write_pgm((base / (stem + "_mask.pgm")).string(), data.masks[i]);
        write_pgm((base / (stem + "_pseudo.pgm")).string(), pseudo);
        std::ofstream txt(base / (stem + "_text.txt"), std::ios::binary);
        txt << data.texts[i] << '\n';
        if (!txt) throw IoError("dump_pseudo: cannot write text for " + stem);

        double iou = miou_metric(pseudo, data.masks[i]);
        sum += iou;
        char line[128];
        std::snprintf(line, sizeof line, "%s,%.6f\n", stem.c_str(), iou);
        csv << line;
    }
    return sum / static_cast<double>(data.images.size());
}

// ---- gradient suite ------------------------------------------------------

namespace {

Tensor rand_tensor(Shape shape, uint64_t seed, double lo, double hi, bool rg = true) {
    Rng rng(seed);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v), rg);
}

// uniform magnitudes in [margin, 1] with random sign: safe for kinked ops
Tensor rand_signed_away_from_zero(Shape shape, uint64_t seed, double margin) {
    Rng rng(seed);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        double mag = rng.uniform(margin, 1.0);
        x = rng.bernoulli(0.5) ? mag : -mag;
    }
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor rand_binary(Shape shape, uint64_t seed, double p) {
    Rng rng(seed);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.bernoulli(p) ? 1.0 : 0.0;
    return Tensor::from_data(std::move(shape), std::move(v));
}

void nudge_biases(std::vector<std::pair<std::string, Tensor>> named, uint64_t sign_seed) {
    Rng signs(sign_seed);
    for (auto& [name, t] : named)
        if (name.find("_b") != std::string::npos || name.find(".b") != std::string::npos)
            for (double& v : t.mutable_data()) v = signs.bernoulli(0.5) ? 0.07 : -0.07;
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite() {
    std::vector<GradCheckEntry> out;
    auto run = [&out](const std::string& name, double tol, std::vector<Tensor> leaves,
                      const std::function<Tensor()>& f, int64_t coords_per_leaf, bool kink,
                      int64_t min_checked) {
        auto res = gradcheck(f, leaves, 1e-4, coords_per_leaf, kink);
        GradCheckEntry e;
        e.name = name;
        e.max_rel_err = res.max_rel_err;
        e.tol = tol;
        e.coords_checked = res.coords_checked;
        e.coords_skipped = res.coords_skipped;
        e.pass = res.max_rel_err <= tol && res.coords_checked >= min_checked;
        out.push_back(e);
    };

    {
        auto a = rand_tensor({3, 4}, 101, -1, 1);
        auto b = rand_tensor({4, 2}, 102, -1, 1);
        run("matmul", 1e-6, {a, b}, [&] { return sum(matmul(a, b)); }, -1, false, 20);
    }
    {
        auto x = rand_tensor({2, 3, 8, 6}, 103, -1, 1);
        auto w = rand_tensor({4, 3, 3, 3}, 104, -0.5, 0.5);
        auto b = rand_tensor({4}, 105, -0.5, 0.5);
        run("conv2d", 1e-6, {x, w, b}, [&] { return sum(conv2d(x, w, b, 1, 1)); }, 64, false,
            120);
    }
    {
        auto x = rand_tensor({2, 4, 5, 5}, 106, -1, 1);
        auto w = rand_tensor({4, 3, 4, 4}, 107, -0.5, 0.5);
        auto b = rand_tensor({3}, 108, -0.5, 0.5);
        run("transpose_conv2d", 1e-6, {x, w, b},
            [&] { return sum(transpose_conv2d(x, w, b, 2, 1)); }, 64, false, 120);
    }
    {
        // inputs held away from the kink so plain central differences apply
        auto x = rand_signed_away_from_zero({40}, 109, 0.1);
        run("relu", 1e-6, {x}, [&] { return sum(relu(x)); }, -1, false, 40);
    }
    {
        auto x = rand_tensor({40}, 110, -2, 2);
        run("sigmoid", 1e-6, {x}, [&] { return sum(sigmoid(x)); }, -1, false, 40);
    }
    {
        auto x = rand_tensor({2, 2, 7, 9}, 111, 0, 1);
        AugParams p;
        p.angle = 17;
        p.tx = 0.06;
        p.ty = -0.04;
        p.scale = 1.07;
        p.hflip = true;
        AffineMat m = affine_matrix(p);
        run("warp_bilinear", 1e-6, {x}, [&] { return sum(warp(x, m, WarpMode::bilinear)); },
            -1, false, 250);
    }
    {
        auto logits = rand_tensor({2, 1, 6, 6}, 112, -2, 2);
        auto mask = rand_binary({2, 1, 6, 6}, 113, 0.4);
        run("dice_loss", 1e-6, {logits}, [&] { return dice_loss(logits, mask); }, -1, false,
            70);
    }
    {
        // pseudo in [0.6,0.9] against a masked image in [0,0.3]: every |.|
        // argument is at least 0.3 from the kink
        auto pseudo = rand_tensor({2, 1, 5, 5}, 114, 0.6, 0.9);
        auto image = rand_tensor({2, 1, 5, 5}, 115, 0.0, 0.3);
        auto mask = rand_binary({2, 1, 5, 5}, 116, 0.5);
        run("l1_roi_loss", 1e-6, {pseudo, image},
            [&] { return l1_roi_loss(pseudo, image, mask); }, -1, false, 50);
    }
    {
        // end-to-end: embedding -> generator -> fuse -> joint warp -> UNet
        // -> dice + lambda*L1, at 16x16 with a depth-2 width-4 UNet
        GeneratorConfig gc;
        gc.image_h = 16;
        gc.image_w = 16;
        gc.image_c = 1;
        auto gen = init_generator(gc, 15);
        nudge_biases(gen.named(), 15001);
        UNetConfig uc;
        uc.in_channels = 2;
        uc.depth = 2;
        uc.base_width = 4;
        uc.image_h = 16;
        uc.image_w = 16;
        auto unet = init_unet(uc, 2);
        nudge_biases(unet.named(), 2001);

        Rng er(92);
        std::vector<double> ev(2 * kEmbedDim);
        for (double& v : ev) v = er.normal();
        for (int r = 0; r < 2; ++r) {
            double nrm = 0;
            for (int c = 0; c < kEmbedDim; ++c) nrm += ev[r * kEmbedDim + c] * ev[r * kEmbedDim + c];
            nrm = std::sqrt(nrm);
            for (int c = 0; c < kEmbedDim; ++c) ev[r * kEmbedDim + c] /= nrm;
        }
        auto emb = Tensor::from_data({2, kEmbedDim}, std::move(ev), true);
        auto img = rand_tensor({2, 1, 16, 16}, 117, 0, 1, false);
        auto mask = rand_binary({2, 1, 16, 16}, 118, 0.35);
        std::vector<AugParams> ps(2);
        ps[0].angle = 10;
        ps[0].tx = 0.05;
        ps[0].ty = -0.05;
        ps[0].scale = 1.05;
        ps[0].hflip = true;
        ps[1].angle = -8;
        ps[1].tx = -0.03;
        ps[1].ty = 0.04;
        ps[1].scale = 0.95;
        ps[1].vflip = true;

        std::vector<Tensor> leaves{emb};
        for (auto& [name, t] : gen.named()) leaves.push_back(t);
        for (auto& [name, t] : unet.named()) leaves.push_back(t);
        run("pipeline_16x16", 1e-4, leaves,
            [&] {
                Tensor pseudo = generate_pseudo(gen, emb);
                Tensor l1 = l1_roi_loss(pseudo, img, mask);
                auto [x, y] = augment_pair(fuse_concat(img, pseudo), mask, ps);
                Tensor dice = dice_loss(unet_forward(unet, x), y);
                return total_loss(dice, l1, {0.1});
            },
            6, true, 120);
    }
    return out;
}

}  // namespace textseg
