#include "textseg/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <utility>

#include "json.hpp"
#include "textseg/errors.hpp"

namespace fs = std::filesystem;

namespace textseg {

namespace {

struct ShapeGeom {
    ShapeKind kind;
    double cx, cy, r;  // r = half the bounding-box width
};

bool inside(const ShapeGeom& g, double x, double y) {
    double dx = x - g.cx, dy = y - g.cy;
    switch (g.kind) {
        case ShapeKind::circle:
            return dx * dx + dy * dy <= g.r * g.r;
        case ShapeKind::square:
            return std::fabs(dx) <= g.r && std::fabs(dy) <= g.r;
        case ShapeKind::triangle: {
            // apex up: (cx, cy-r), base corners (cx-r, cy+r), (cx+r, cy+r)
            double ax = g.cx, ay = g.cy - g.r;
            double bx = g.cx - g.r, by = g.cy + g.r;
            double cx = g.cx + g.r, cy = g.cy + g.r;
            auto cross = [](double ux, double uy, double vx, double vy) {
                return ux * vy - uy * vx;
            };
            double s1 = cross(bx - ax, by - ay, x - ax, y - ay);
            double s2 = cross(cx - bx, cy - by, x - bx, y - by);
            double s3 = cross(ax - cx, ay - cy, x - cx, y - cy);
            return (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
        }
    }
    return false;
}

// Adds intensity * coverage into img, coverage estimated from a 4x4
// supersample of each pixel touching the shape's (slightly padded) bbox.
void render_shape(std::vector<double>& img, int h, int w, const ShapeGeom& g, double intensity) {
    int y0 = std::max(0, static_cast<int>(std::floor(g.cy - g.r - 1)));
    int y1 = std::min(h - 1, static_cast<int>(std::ceil(g.cy + g.r + 1)));
    int x0 = std::max(0, static_cast<int>(std::floor(g.cx - g.r - 1)));
    int x1 = std::min(w - 1, static_cast<int>(std::ceil(g.cx + g.r + 1)));
    for (int i = y0; i <= y1; ++i)
        for (int j = x0; j <= x1; ++j) {
            int hits = 0;
            for (int sy = 0; sy < 4; ++sy)
                for (int sx = 0; sx < 4; ++sx)
                    if (inside(g, j + (sx + 0.5) / 4.0, i + (sy + 0.5) / 4.0)) ++hits;
            if (hits) img[static_cast<size_t>(i) * w + j] += intensity * hits / 16.0;
        }
}

// Size class -> bounding-box width as a fraction of the image, then a
// center jittered around the cell's center but capped so the box stays
// strictly inside the cell. The 1.2px radius floor keeps even the smallest
// raster nonempty (it leaves every shape an inscribed disk wider than the
// pixel-center spacing).
ShapeGeom draw_geom(Rng& rng, ShapeKind kind, int row, int col, SizeQualifier size, int h, int w) {
    double lo = size == SizeQualifier::small ? 0.10 : 0.20;
    double hi = size == SizeQualifier::small ? 0.15 : 0.30;
    double r = std::max(rng.uniform(lo, hi) * w / 2.0, 1.2);
    double cw = w / 3.0, ch = h / 3.0;
    double jx = std::max(0.0, std::min(0.15 * cw, cw / 2.0 - r - 0.25));
    double jy = std::max(0.0, std::min(0.15 * ch, ch / 2.0 - r - 0.25));
    double cx = (col + 0.5) * cw + rng.uniform(-jx, jx);
    double cy = (row + 0.5) * ch + rng.uniform(-jy, jy);
    return {kind, cx, cy, r};
}

}  // namespace

Sample synth_sample(Rng& rng, int h, int w, bool distractors) {
    if (h != w || h <= 0 || h % 8 != 0)
        throw UsageError("synth_sample: image must be square with side a positive multiple of 8");

    // Fixed draw order (id, phrase, shape, distractor, noise) — the sample
    // is a pure function of the rng state.
    Sample s;
    char idbuf[17];
    std::snprintf(idbuf, sizeof idbuf, "%016llx",
                  static_cast<unsigned long long>(rng.next_u64()));
    s.id = idbuf;

    static const std::vector<GroundingPhrase> phrases = all_phrases();
    s.phrase = phrases[rng.uniform_int(0, static_cast<int>(phrases.size()) - 1)];

    ShapeGeom main =
        draw_geom(rng, s.phrase.shape, s.phrase.row, s.phrase.col, s.phrase.size, h, w);
    double main_intensity = rng.uniform(0.6, 1.0);

    std::vector<double> img(static_cast<size_t>(h) * w, 0.0);
    render_shape(img, h, w, main, main_intensity);

    if (distractors) {
        ShapeKind others[2];
        int k = 0;
        for (ShapeKind sk : {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle})
            if (sk != s.phrase.shape) others[k++] = sk;
        ShapeKind dkind = others[rng.uniform_int(0, 1)];
        int main_cell = s.phrase.row * 3 + s.phrase.col;
        int pick = rng.uniform_int(0, 7);
        int cell = pick >= main_cell ? pick + 1 : pick;
        SizeQualifier dsize =
            rng.uniform_int(0, 1) == 0 ? SizeQualifier::small : SizeQualifier::large;
        ShapeGeom d = draw_geom(rng, dkind, cell / 3, cell % 3, dsize, h, w);
        render_shape(img, h, w, d, rng.uniform(0.6, 1.0));
    }

    for (double& v : img) v = std::clamp(v + rng.normal(0.0, 0.05), 0.0, 1.0);

    std::vector<double> mask(static_cast<size_t>(h) * w, 0.0);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            if (inside(main, j + 0.5, i + 0.5)) mask[static_cast<size_t>(i) * w + j] = 1.0;

    s.image = Tensor::from_data({1, 1, h, w}, std::move(img));
    s.mask = Tensor::from_data({1, 1, h, w}, std::move(mask));
    return s;
}

void write_pgm(const std::string& path, const Tensor& t) {
    if (t.shape().size() != 4 || t.dim(0) != 1 || t.dim(1) != 1)
        throw ShapeError("write_pgm: expected [1,1,H,W], got " + shape_str(t.shape()));
    int h = t.dim(2), w = t.dim(3);
    std::vector<unsigned char> bytes(t.numel());
    const auto& data = t.data();
    for (size_t i = 0; i < data.size(); ++i) {
        double v = data[i];
        if (!(v >= 0.0 && v <= 1.0))
            throw UsageError("write_pgm: value " + std::to_string(v) + " outside [0,1]");
        bytes[i] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_pgm: cannot open " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write_pgm: short write to " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_pgm: cannot open " + path);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    auto fail = [&path](const std::string& msg) -> void {
        throw FormatError("read_pgm: " + path + ": " + msg);
    };
    if (all.size() < 2 || all[0] != 'P' || all[1] != '5') fail("not a binary PGM (P5) file");
    size_t pos = 2;
    auto next_int = [&]() -> long {
        while (pos < all.size()) {
            if (all[pos] == '#') {
                while (pos < all.size() && all[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(all[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= all.size() || !std::isdigit(static_cast<unsigned char>(all[pos])))
            fail("expected an integer in the header");
        long v = 0;
        while (pos < all.size() && std::isdigit(static_cast<unsigned char>(all[pos]))) {
            v = v * 10 + (all[pos] - '0');
            if (v > 1000000) fail("header value out of range");
            ++pos;
        }
        return v;
    };
    long w = next_int(), h = next_int(), maxval = next_int();
    if (w < 1 || h < 1 || w > 65536 || h > 65536) fail("bad dimensions");
    if (maxval < 1 || maxval > 255) fail("unsupported maxval (8-bit only)");
    if (pos >= all.size() || !std::isspace(static_cast<unsigned char>(all[pos])))
        fail("missing whitespace before payload");
    ++pos;
    size_t need = static_cast<size_t>(w) * static_cast<size_t>(h);
    if (all.size() - pos < need) fail("truncated payload");
    if (all.size() - pos > need) fail("trailing bytes after payload");

    std::vector<double> v(need);
    for (size_t i = 0; i < need; ++i)
        v[i] = static_cast<unsigned char>(all[pos + i]) / static_cast<double>(maxval);
    return Tensor::from_data({1, 1, static_cast<int>(h), static_cast<int>(w)}, std::move(v));
}

Manifest load_manifest(const std::string& path, uint64_t vocab_seed) {
    std::ifstream f(path);
    if (!f) throw IoError("load_manifest: cannot open " + path);
    fs::path dir = fs::path(path).parent_path();

    Manifest m;
    m.split = fs::path(path).stem().string();
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fail = [&](const std::string& msg) -> void {
            throw FormatError("load_manifest: " + path + " line " + std::to_string(lineno) +
                              ": " + msg);
        };

        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            fail("invalid JSON");
        }
        if (!j.is_object()) fail("expected a JSON object");
        for (const char* key : {"image", "mask", "text"})
            if (!j.contains(key) || !j.at(key).is_string())
                fail(std::string("missing string key \"") + key + "\"");

        std::string image_rel = j.at("image").get<std::string>();
        fs::path image = dir / image_rel;
        fs::path mask = dir / j.at("mask").get<std::string>();
        if (!fs::exists(image)) fail("image path does not resolve: " + image.string());
        if (!fs::exists(mask)) fail("mask path does not resolve: " + mask.string());
        if (!seen.insert(image_rel).second) fail("duplicate image entry: " + image_rel);

        ManifestRecord rec;
        rec.image_path = image.string();
        rec.mask_path = mask.string();
        rec.text = j.at("text").get<std::string>();
        try {
            rec.embedding = embed_text(rec.text, vocab_seed);
        } catch (const ParseError&) {
            fail("text cannot be embedded (empty?)");
        }
        m.records.push_back(std::move(rec));
    }
    return m;
}

SynthSplits synth_dataset(uint64_t seed, int n_train, int n_val, int n_test, int h, int w,
                          const std::string& out_dir, bool distractors) {
    if (n_train < 0 || n_val < 0 || n_test < 0)
        throw UsageError("synth_dataset: negative split size");
    fs::path out(out_dir);
    std::error_code ec;
    fs::create_directories(out / "images", ec);
    if (ec) throw IoError("synth_dataset: cannot create " + (out / "images").string());
    fs::create_directories(out / "masks", ec);
    if (ec) throw IoError("synth_dataset: cannot create " + (out / "masks").string());

    auto gen_split = [&](const std::string& split, int n) {
        fs::path manifest_path = out / (split + ".jsonl");
        std::ofstream mf(manifest_path, std::ios::binary);
        if (!mf) throw IoError("synth_dataset: cannot open " + manifest_path.string());
        for (int i = 0; i < n; ++i) {
            Rng rng(derive_seed(seed, "synth." + split, static_cast<uint64_t>(i)));
            Sample s = synth_sample(rng, h, w, distractors);
            std::string img_rel = "images/" + s.id + ".pgm";
            std::string mask_rel = "masks/" + s.id + ".pgm";
            write_pgm((out / img_rel).string(), s.image);
            write_pgm((out / mask_rel).string(), s.mask);
            nlohmann::json j{{"image", img_rel}, {"mask", mask_rel},
                             {"text", render_phrase(s.phrase)}};
            mf << j.dump() << '\n';
        }
        if (!mf) throw IoError("synth_dataset: short write to " + manifest_path.string());
    };
    gen_split("train", n_train);
    gen_split("val", n_val);
    gen_split("test", n_test);

    SynthSplits splits;
    splits.train = load_manifest((out / "train.jsonl").string());
    splits.val = load_manifest((out / "val.jsonl").string());
    splits.test = load_manifest((out / "test.jsonl").string());
    return splits;
}

}  // namespace textseg
