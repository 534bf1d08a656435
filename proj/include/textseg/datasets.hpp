#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "textseg/rng.hpp"
#include "textseg/tensor.hpp"
#include "textseg/text_grounding.hpp"

namespace textseg {

// One synthetic text/image/mask triple. Grayscale throughout (the fusion
// mechanism is channel-generic, and single-channel keeps runs fast).
struct Sample {
    Tensor image;  // [1,1,H,W], values in [0,1]
    Tensor mask;   // [1,1,H,W], exactly 0/1
    GroundingPhrase phrase;
    std::string id;  // 16 hex digits, drawn from the sample's rng stream
};

// Draws a phrase uniformly from the grammar and renders it: one filled
// shape (circle/square/triangle, antialiased edge, intensity in [0.6,1.0])
// whose bounding box sits inside the named third-by-third grid cell, over a
// zero background with N(0, 0.05^2) noise, clamped to [0,1]. The mask
// rasters the shape exactly (pixel centers, no antialiasing). Shape size is
// measured as bounding-box width: 10-15% of the image width for "small",
// 20-30% for "large".
//
// With distractors on (the default used by experiments), a second shape of
// a different kind lands in a different cell and stays out of the mask —
// without it, position text would be decoration, since segmenting the only
// bright blob needs no language. Disabled, the draw stream simply skips the
// distractor's draws.
//
// h == w and divisible by 8 (UsageError otherwise).
Sample synth_sample(Rng& rng, int h, int w, bool distractors = true);

// One line of a JSONL manifest, paths already resolved against the manifest
// location and the text embedded (grammar phrase if it parses, bag-of-words
// otherwise).
struct ManifestRecord {
    std::string image_path;
    std::string mask_path;
    std::string text;
    std::vector<double> embedding;
};

struct Manifest {
    std::string split;  // manifest filename stem: train / val / test / ...
    std::vector<ManifestRecord> records;
};

// Reads `<path>` as JSONL with keys image, mask, text. Any malformed line —
// bad JSON, missing key, a path that does not resolve, or a duplicate image
// path — raises FormatError naming the 1-based line number.
Manifest load_manifest(const std::string& path, uint64_t vocab_seed = kDefaultVocabSeed);

struct SynthSplits {
    Manifest train, val, test;
};

// Generates a full corpus under out_dir:
//   out_dir/images/<id>.pgm   out_dir/masks/<id>.pgm
//   out_dir/{train,val,test}.jsonl
// Every sample uses its own derived rng stream keyed by (seed, split,
// index), so the corpus is byte-identical across regenerations and any
// sample can be reproduced without generating its predecessors. Returns the
// three manifests re-read from disk.
SynthSplits synth_dataset(uint64_t seed, int n_train, int n_val, int n_test, int h, int w,
                          const std::string& out_dir, bool distractors = true);

// 8-bit binary PGM (P5, maxval 255), rounding half-up. Values must already
// be in [0,1] (UsageError), tensor shape [1,1,H,W] (ShapeError). Reading
// inverts writing up to quantization: |x - read(write(x))| <= 1/510.
void write_pgm(const std::string& path, const Tensor& t);
Tensor read_pgm(const std::string& path);  // FormatError on malformed input

}  // namespace textseg
