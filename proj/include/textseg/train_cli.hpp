#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "textseg/datasets.hpp"
#include "textseg/pseudo_generator.hpp"
#include "textseg/seg_unet.hpp"
#include "textseg/tensor.hpp"
#include "textseg/text_grounding.hpp"

namespace textseg {

// How the text branch joins the image:
//   early         — pseudo image concatenated before (joint) augmentation
//   misaligned    — ablation: augmentation warps image+mask but not the
//                   pseudo channels, so text evidence points at the wrong
//                   place once a warp lands
//   interpolation — ablation: the generator's FC grid is bilinearly resized
//                   to full size instead of learned transpose-conv
//                   upsampling, and the L1 term is dropped
enum class FusionMode { early, misaligned, interpolation };

const char* fusion_mode_name(FusionMode m);
FusionMode parse_fusion_mode(const std::string& name);  // ConfigError on anything else

struct RunConfig {
    uint64_t seed = 0;
    int epochs = 30;
    int batch_size = 16;
    double lr = 1e-4;
    double lambda = 0.1;  // weight of the L1 pseudo-image term
    int image_h = 64;
    int image_w = 64;
    bool aug = true;
    bool text = true;  // off: plain UNet on the raw image (fusion ignored)
    FusionMode fusion = FusionMode::early;
    std::string dataset_dir;  // holds {train,val,test}.jsonl + images/ + masks/
    std::string out_dir;      // receives checkpoint.bin and report.json
    uint64_t vocab_seed = kDefaultVocabSeed;

    void validate() const;  // ConfigError on violation
};

// JSON round-trip for config files and the report echo. Unknown keys are a
// ConfigError so a typo cannot silently fall back to a default.
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& json_text);

struct EpochLog {
    double dice = 0, l1 = 0, total = 0;  // per-sample means over the epoch
};

struct EvalResult {
    double dice_mean = 0, dice_std = 0;
    double miou_mean = 0, miou_std = 0;
    std::vector<double> dice_per_image, miou_per_image;
};

// The trainable pieces for one run. `gen` is present but untouched when
// text is off.
struct Model {
    bool text = true;
    FusionMode fusion = FusionMode::early;
    GeneratorParams gen;
    UNetParams unet;
};

Model init_model(const RunConfig& cfg);

// A manifest pulled into memory: image/mask tensors plus the embedding for
// each record.
struct LoadedSet {
    std::vector<Tensor> images, masks;  // [1,1,H,W] each
    std::vector<std::vector<double>> embeddings;
    std::vector<std::string> texts;
};
LoadedSet load_set(const Manifest& manifest);

struct RunReport {
    RunConfig cfg;
    std::vector<EpochLog> epochs;
    EvalResult test;
    std::string checkpoint_path, checkpoint_hash;
    std::string report_path;
    double wall_seconds = 0;  // informational; never part of determinism checks
};

// Full training run: per step embed -> pseudo -> fuse -> (joint aug) ->
// UNet -> dice + lambda*L1 (L1 measured before augmentation) -> AdamW.
// Deterministic given the config; writes checkpoint.bin and report.json
// under cfg.out_dir. NaN/inf in the loss raises DivergenceError carrying
// the global step index.
RunReport train_run(const RunConfig& cfg);

// Test-time pipeline (no augmentation): probabilities thresholded at 0.5,
// per-image dice/IoU via the metrics module. Empty data is a UsageError.
EvalResult evaluate(const Model& model, const LoadedSet& data, int batch_size = 16);
EvalResult evaluate(const std::string& checkpoint_path, const std::string& manifest_path);

void save_model(const std::string& path, const Model& model, const RunConfig& cfg);
struct LoadedModel {
    Model model;
    RunConfig cfg;
};
LoadedModel load_model(const std::string& path);

struct MatrixRow {
    std::string label;
    bool aug, text;
    FusionMode fusion;
    double dice_mean = 0, dice_std = 0, miou_mean = 0, miou_std = 0;
    std::vector<double> dice_per_seed, miou_per_seed;
};

// The six experiment cells — the four aug x text combinations under early
// fusion, then interpolation and misaligned fusion (both aug+text on) —
// each trained once per seed. Rows are appended to csv_path and flushed as
// they finish, so a failed later cell leaves the earlier rows on disk.
std::vector<MatrixRow> experiment_matrix(const RunConfig& base, const std::vector<uint64_t>& seeds,
                                         const std::string& csv_path);

// For every manifest record: <stem>_image.pgm, <stem>_mask.pgm,
// <stem>_pseudo.pgm, <stem>_text.txt under out_dir, plus iou.csv scoring
// IoU(pseudo > 0.5, mask) per record. Returns the mean of that IoU.
double dump_pseudo(const std::string& checkpoint_path, const std::string& manifest_path,
                   const std::string& out_dir);

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
    double tol = 0;
    int64_t coords_checked = 0, coords_skipped = 0;
    bool pass = false;
};

// Finite-difference verification of each differentiable op and of the
// 16x16 end-to-end pipeline. All entries must pass for the suite to be
// considered green.
std::vector<GradCheckEntry> gradcheck_suite();

// Clamp the GEMM backend to one thread (no-op without OpenBLAS). Keeps
// timings honest on the single-core boxes these experiments target.
void use_single_gemm_thread();

}  // namespace textseg
