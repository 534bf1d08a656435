#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "textseg/datasets.hpp"
#include "textseg/errors.hpp"
#include "textseg/losses.hpp"
#include "textseg/rng.hpp"
#include "textseg/text_grounding.hpp"

using namespace textseg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::current_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// centroid of mask pixel centers
std::pair<double, double> mask_centroid(const Tensor& mask, int h, int w) {
    double sx = 0, sy = 0, n = 0;
    const auto& d = mask.data();
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            if (d[static_cast<size_t>(i) * w + j] > 0.5) {
                sx += j + 0.5;
                sy += i + 0.5;
                n += 1;
            }
    REQUIRE(n > 0);
    return {sx / n, sy / n};
}

}  // namespace

TEST_CASE("synthetic samples are pure functions of the rng state") {
    Rng a(99), b(99);
    auto s1 = synth_sample(a, 32, 32);
    auto s2 = synth_sample(b, 32, 32);
    CHECK(s1.id == s2.id);
    CHECK(s1.phrase == s2.phrase);
    CHECK(s1.image.data() == s2.image.data());
    CHECK(s1.mask.data() == s2.mask.data());
    CHECK(s1.id.size() == 16);
    CHECK(s1.id.find_first_not_of("0123456789abcdef") == std::string::npos);

    auto s3 = synth_sample(a, 32, 32);  // stream moved on
    CHECK(s3.id != s1.id);

    CHECK_THROWS_AS(synth_sample(a, 32, 16), UsageError);
    CHECK_THROWS_AS(synth_sample(a, 20, 20), UsageError);
}

TEST_CASE("every sample honors the geometry its phrase names") {
    const int n = 64;
    Rng rng(501);
    for (int trial = 0; trial < 60; ++trial) {
        bool distractors = trial % 3 != 0;
        auto s = synth_sample(rng, n, n, distractors);
        const auto& img = s.image.data();
        const auto& msk = s.mask.data();

        for (double v : img) REQUIRE((v >= 0.0 && v <= 1.0));
        for (double v : msk) REQUIRE((v == 0.0 || v == 1.0));

        double cell = n / 3.0;
        double x0 = s.phrase.col * cell, x1 = (s.phrase.col + 1) * cell;
        double y0 = s.phrase.row * cell, y1 = (s.phrase.row + 1) * cell;

        // centroid inside the named cell, and in fact the whole raster
        auto [cx, cy] = mask_centroid(s.mask, n, n);
        REQUIRE(cx > x0);
        REQUIRE(cx < x1);
        REQUIRE(cy > y0);
        REQUIRE(cy < y1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (msk[static_cast<size_t>(i) * n + j] > 0.5) {
                    REQUIRE(j + 0.5 > x0);
                    REQUIRE(j + 0.5 < x1);
                    REQUIRE(i + 0.5 > y0);
                    REQUIRE(i + 0.5 < y1);
                }

        // overlap with the cell indicator is positive
        std::vector<double> cellv(static_cast<size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (j + 0.5 > x0 && j + 0.5 < x1 && i + 0.5 > y0 && i + 0.5 < y1)
                    cellv[static_cast<size_t>(i) * n + j] = 1.0;
        auto cell_ind = Tensor::from_data({1, 1, n, n}, std::move(cellv));
        REQUIRE(dice_metric(s.mask, cell_ind) > 0.0);

        // the described shape is bright where the mask says it is
        double in_sum = 0, in_n = 0;
        for (size_t i = 0; i < img.size(); ++i)
            if (msk[i] > 0.5) {
                in_sum += img[i];
                in_n += 1;
            }
        REQUIRE(in_sum / in_n > 0.5);

        // distractors put real signal outside the named cell; without them
        // everything out there is just clamped noise
        double out_max = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (!(j + 0.5 > x0 && j + 0.5 < x1 && i + 0.5 > y0 && i + 0.5 < y1))
                    out_max = std::max(out_max, img[static_cast<size_t>(i) * n + j]);
        if (distractors)
            REQUIRE(out_max > 0.4);
        else
            REQUIRE(out_max < 0.4);
    }
}

TEST_CASE("phrase draw is uniform over the grammar") {
    // chi-squared against the uniform over all 54 phrases; 79.84 is the
    // p=0.01 cutoff at 53 degrees of freedom
    auto phrases = all_phrases();
    std::vector<int> counts(phrases.size(), 0);
    Rng rng(123);
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        auto s = synth_sample(rng, 16, 16);
        auto it = std::find(phrases.begin(), phrases.end(), s.phrase);
        REQUIRE(it != phrases.end());
        ++counts[it - phrases.begin()];
    }
    double expected = double(n) / phrases.size();
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 79.84);
}

TEST_CASE("pgm files round-trip") {
    auto dir = fresh_dir("tmp_pgm");

    SUBCASE("zero tensor is an all-zero payload") {
        auto p = (dir / "zero.pgm").string();
        write_pgm(p, Tensor::zeros({1, 1, 3, 4}));
        std::string raw = slurp(p);
        CHECK(raw == std::string("P5\n4 3\n255\n") + std::string(12, '\0'));
    }
    SUBCASE("full white hits byte 255") {
        auto p = (dir / "one.pgm").string();
        write_pgm(p, Tensor::full({1, 1, 1, 1}, 1.0));
        std::string raw = slurp(p);
        CHECK(static_cast<unsigned char>(raw.back()) == 255);
        CHECK(read_pgm(p).item() == 1.0);
    }
    SUBCASE("random tensor round-trips within half a quantization step") {
        Rng rng(7);
        std::vector<double> v(64 * 48);
        for (double& x : v) x = rng.uniform();
        auto t = Tensor::from_data({1, 1, 48, 64}, v);
        auto p = (dir / "rand.pgm").string();
        write_pgm(p, t);
        auto back = read_pgm(p);
        REQUIRE(back.shape() == t.shape());
        double worst = 0;
        for (size_t i = 0; i < v.size(); ++i)
            worst = std::max(worst, std::fabs(v[i] - back.data()[i]));
        CHECK(worst <= 1.0 / 510.0 + 1e-12);
    }
    SUBCASE("write rejects bad input") {
        CHECK_THROWS_AS(write_pgm((dir / "x.pgm").string(), Tensor::full({1, 1, 2, 2}, 1.5)),
                        UsageError);
        CHECK_THROWS_AS(write_pgm((dir / "x.pgm").string(), Tensor::zeros({1, 2, 2, 2})),
                        ShapeError);
        CHECK_THROWS_AS(write_pgm((dir / "nosuch" / "x.pgm").string(), Tensor::zeros({1, 1, 2, 2})),
                        IoError);
    }
    SUBCASE("read rejects malformed files") {
        auto bad = [&](const std::string& name, const std::string& bytes) {
            auto p = (dir / name).string();
            std::ofstream f(p, std::ios::binary);
            f << bytes;
            f.close();
            CHECK_THROWS_AS(read_pgm(p), FormatError);
        };
        bad("p6.pgm", "P6\n2 2\n255\n1234");
        bad("short.pgm", "P5\n2 2\n255\n12");
        bad("long.pgm", "P5\n2 2\n255\n12345");
        bad("maxval.pgm", "P5\n2 2\n65535\n" + std::string(8, '\0'));
        bad("garbage.pgm", "hello");
        CHECK_THROWS_AS(read_pgm((dir / "absent.pgm").string()), IoError);

        // comments and loose whitespace in the header are legal PGM
        auto p = (dir / "comment.pgm").string();
        std::ofstream f(p, std::ios::binary);
        f << "P5\n# made by hand\n 2\t2\n255\n"
          << std::string(4, '\x7f');
        f.close();
        auto t = read_pgm(p);
        CHECK(t.shape() == Shape{1, 1, 2, 2});
        CHECK(t.data()[0] == doctest::Approx(127.0 / 255.0));
    }
}

TEST_CASE("corpus generation is deterministic and well-formed") {
    auto dir_a = fresh_dir("tmp_corpus_a");
    auto dir_b = fresh_dir("tmp_corpus_b");
    auto splits = synth_dataset(7, 6, 2, 3, 16, 16, dir_a.string());
    auto splits_b = synth_dataset(7, 6, 2, 3, 16, 16, dir_b.string());

    CHECK(splits.train.records.size() == 6);
    CHECK(splits.val.records.size() == 2);
    CHECK(splits.test.records.size() == 3);
    CHECK(splits.train.split == "train");

    // same seed, byte-identical tree
    std::vector<fs::path> rel;
    for (auto& e : fs::recursive_directory_iterator(dir_a))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), dir_a));
    std::sort(rel.begin(), rel.end());
    CHECK(rel.size() == 2 * 11 + 3);
    for (auto& r : rel) {
        REQUIRE(fs::exists(dir_b / r));
        CHECK(slurp(dir_a / r) == slurp(dir_b / r));
    }

    // ids (filename stems) unique corpus-wide; every record loads
    std::set<std::string> ids;
    for (auto* m : {&splits.train, &splits.val, &splits.test})
        for (auto& rec : m->records) {
            CHECK(ids.insert(fs::path(rec.image_path).stem().string()).second);
            auto img = read_pgm(rec.image_path);
            auto msk = read_pgm(rec.mask_path);
            CHECK(img.shape() == Shape{1, 1, 16, 16});
            CHECK(msk.shape() == Shape{1, 1, 16, 16});
            for (double v : msk.data()) CHECK((v == 0.0 || v == 1.0));
            CHECK_NOTHROW(parse_phrase(rec.text));  // generator writes grammar text
            CHECK(rec.embedding.size() == size_t(kEmbedDim));
        }

    // different seed, different corpus
    auto dir_c = fresh_dir("tmp_corpus_c");
    auto splits_c = synth_dataset(8, 6, 2, 3, 16, 16, dir_c.string());
    CHECK(slurp(dir_a / "train.jsonl") != slurp(dir_c / "train.jsonl"));

    fs::remove_all(dir_b);
    fs::remove_all(dir_c);
}

TEST_CASE("requested split sizes are honored at the reference ratio") {
    auto dir = fresh_dir("tmp_corpus_ratio");
    auto splits = synth_dataset(3, 900, 100, 100, 8, 8, dir.string());
    CHECK(splits.train.records.size() == 900);
    CHECK(splits.val.records.size() == 100);
    CHECK(splits.test.records.size() == 100);
    fs::remove_all(dir);
}

TEST_CASE("manifest loader") {
    auto dir = fresh_dir("tmp_manifest");
    // a couple of real files to point at
    write_pgm((dir / "a.pgm").string(), Tensor::zeros({1, 1, 4, 4}));
    write_pgm((dir / "b.pgm").string(), Tensor::full({1, 1, 4, 4}, 0.5));

    auto write_manifest = [&](const std::string& name, const std::string& body) {
        std::ofstream f(dir / name, std::ios::binary);
        f << body;
        return (dir / name).string();
    };

    SUBCASE("valid grammar and free text") {
        auto p = write_manifest(
            "ok.jsonl",
            R"({"image":"a.pgm","mask":"b.pgm","text":"a small circle on the top left"})"
            "\n"
            R"({"image":"b.pgm","mask":"a.pgm","text":"ground glass opacities in both lungs"})"
            "\n");
        auto m = load_manifest(p);
        REQUIRE(m.records.size() == 2);
        CHECK(m.split == "ok");
        CHECK(m.records[0].image_path == (dir / "a.pgm").string());

        // grammar text embeds through the phrase codebook...
        auto direct = embed_phrase(parse_phrase(m.records[0].text), kDefaultVocabSeed);
        CHECK(m.records[0].embedding == direct);
        // ...free text through the bag-of-words fallback
        auto bow = embed_text("ground glass opacities in both lungs", kDefaultVocabSeed);
        CHECK(m.records[1].embedding == bow);
        double norm = 0;
        for (double v : m.records[1].embedding) norm += v * v;
        CHECK(std::sqrt(norm) == doctest::Approx(1.0));
    }
    SUBCASE("blank lines are skipped, empty file loads empty") {
        auto p = write_manifest(
            "blank.jsonl",
            "\n" R"({"image":"a.pgm","mask":"b.pgm","text":"a circle on the top left"})" "\n\n");
        CHECK(load_manifest(p).records.size() == 1);
        CHECK(load_manifest(write_manifest("empty.jsonl", "")).records.empty());
    }
    SUBCASE("errors carry the line number") {
        auto check_line2 = [&](const std::string& name, const std::string& body) {
            auto p = write_manifest(name, body);
            try {
                load_manifest(p);
                FAIL_CHECK(name << ": expected FormatError");
            } catch (const FormatError& e) {
                CHECK(std::string(e.what()).find("line 2") != std::string::npos);
            }
        };
        std::string good = R"({"image":"a.pgm","mask":"b.pgm","text":"a circle on the center"})";
        check_line2("missing_key.jsonl",
                    good + "\n" + R"({"image":"a.pgm","mask":"b.pgm"})" + "\n");
        check_line2("bad_json.jsonl", good + "\n{not json\n");
        check_line2("bad_path.jsonl",
                    good + "\n" + R"({"image":"nope.pgm","mask":"b.pgm","text":"x"})" + "\n");
        check_line2("dup.jsonl", good + "\n" + good + "\n");
        check_line2("not_object.jsonl", good + "\n[1,2,3]\n");
        check_line2("empty_text.jsonl",
                    good + "\n" + R"({"image":"a.pgm","mask":"b.pgm","text":"   "})" + "\n");
        CHECK_THROWS_AS(load_manifest((dir / "absent.jsonl").string()), IoError);
    }
}
