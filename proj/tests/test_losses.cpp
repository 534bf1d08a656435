#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "textseg/errors.hpp"
#include "textseg/losses.hpp"
#include "textseg/rng.hpp"
#include "textseg/tensor.hpp"

using namespace textseg;

namespace {

Tensor binary_mask(int h, int w, const std::function<bool(int, int)>& pred) {
    std::vector<double> v(static_cast<size_t>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) v[static_cast<size_t>(i) * w + j] = pred(i, j) ? 1.0 : 0.0;
    return Tensor::from_data({1, 1, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("dice_loss on perfect and disjoint predictions") {
    auto target = binary_mask(4, 4, [](int i, int) { return i < 2; });
    // saturated logits matching the target
    std::vector<double> lg(16);
    for (int i = 0; i < 16; ++i) lg[i] = target.data()[i] > 0.5 ? 20.0 : -20.0;
    auto perfect = dice_loss(Tensor::from_data({1, 1, 4, 4}, lg), target);
    CHECK(perfect.item() <= 1e-6);

    // prediction confined to the complement
    for (int i = 0; i < 16; ++i) lg[i] = -lg[i];
    auto disjoint = dice_loss(Tensor::from_data({1, 1, 4, 4}, lg), target);
    CHECK(disjoint.item() >= 1.0 - 1e-3);
    CHECK(disjoint.item() <= 1.0 + 1e-6);
}

TEST_CASE("dice_loss hand value at p = 0.5") {
    // zero logits give p = 0.5 everywhere; one target pixel of four:
    // 1 - (2*0.5 + eps)/(0.5*4 + 1 + eps) = 1 - 1/3 up to the eps ripple
    auto logits = Tensor::zeros({1, 1, 2, 2});
    auto target = binary_mask(2, 2, [](int i, int j) { return i == 0 && j == 0; });
    CHECK(dice_loss(logits, target).item() == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("dice_loss averages per-sample losses over the batch") {
    // sample 0 perfect, sample 1 disjoint -> mean close to 0.5
    std::vector<double> lg, tg;
    for (int s = 0; s < 2; ++s)
        for (int i = 0; i < 16; ++i) {
            bool fg = i < 8;
            tg.push_back(fg ? 1.0 : 0.0);
            lg.push_back((s == 0 ? (fg ? 1 : -1) : (fg ? -1 : 1)) * 20.0);
        }
    auto loss = dice_loss(Tensor::from_data({2, 1, 4, 4}, lg), Tensor::from_data({2, 1, 4, 4}, tg));
    CHECK(loss.item() == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("dice_loss gradient matches finite differences") {
    Rng rng(21);
    std::vector<double> lg(16), tg(16);
    for (auto& v : lg) v = rng.normal();
    for (auto& v : tg) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    auto target = Tensor::from_data({1, 1, 4, 4}, tg);
    auto x = Tensor::from_data({1, 1, 4, 4}, lg, true);
    CHECK(finite_diff_gradcheck([&](const Tensor& t) { return dice_loss(t, target); }, x) <= 1e-6);
}

TEST_CASE("dice_loss rejects mismatched shapes") {
    CHECK_THROWS_AS(dice_loss(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 4, 5})),
                    ShapeError);
    CHECK_THROWS_AS(dice_loss(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 2, 4, 4})),
                    ShapeError);
    CHECK_THROWS_AS(dice_loss(Tensor::zeros({16}), Tensor::zeros({16})), ShapeError);
}

TEST_CASE("l1_roi_loss basics") {
    auto mask = binary_mask(2, 2, [](int i, int) { return i == 0; });
    auto image = Tensor::full({1, 1, 2, 2}, 1.0);

    // pseudo equal to the masked image: zero, exactly
    auto matched = Tensor::from_data({1, 1, 2, 2}, {1, 1, 0, 0});
    CHECK(l1_roi_loss(matched, image, mask).item() == 0.0);

    // all-ones image, all-ones mask, blank pseudo: mean deviation is 1
    auto ones = Tensor::full({1, 1, 2, 2}, 1.0);
    CHECK(l1_roi_loss(Tensor::zeros({1, 1, 2, 2}), image, ones).item() == 1.0);

    // empty mask pushes toward a blank pseudo image
    CHECK(l1_roi_loss(Tensor::zeros({1, 1, 2, 2}), image, Tensor::zeros({1, 1, 2, 2})).item() ==
          0.0);

    // hand value: constant 0.3 prediction, half mask
    auto flat = Tensor::full({1, 1, 2, 2}, 0.3);
    CHECK(l1_roi_loss(flat, image, mask).item() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("l1_roi_loss ignores the image outside the mask, exactly") {
    Rng rng(22);
    std::vector<double> img(16), pse(16);
    for (auto& v : img) v = rng.uniform(0, 1);
    for (auto& v : pse) v = rng.uniform(0, 1);
    auto mask = binary_mask(4, 4, [](int i, int j) { return (i + j) % 2 == 0; });
    auto pseudo = Tensor::from_data({1, 1, 4, 4}, pse);

    double base = l1_roi_loss(pseudo, Tensor::from_data({1, 1, 4, 4}, img), mask).item();
    // scribble over every outside-mask pixel
    for (int i = 0; i < 16; ++i)
        if (mask.data()[i] < 0.5) img[i] = rng.uniform(0, 1);
    double scribbled = l1_roi_loss(pseudo, Tensor::from_data({1, 1, 4, 4}, img), mask).item();
    CHECK(base == scribbled);  // bitwise
}

TEST_CASE("l1_roi_loss broadcasts the mask over channels") {
    auto mask = binary_mask(2, 2, [](int i, int j) { return i == 0 && j == 0; });
    auto image = Tensor::full({1, 3, 2, 2}, 1.0);
    auto pseudo = Tensor::zeros({1, 3, 2, 2});
    // one of four pixels per channel survives the mask
    CHECK(l1_roi_loss(pseudo, image, mask).item() == doctest::Approx(0.25).epsilon(1e-12));
    CHECK_THROWS_AS(l1_roi_loss(pseudo, image, Tensor::zeros({1, 1, 2, 3})), ShapeError);
}

TEST_CASE("l1_roi_loss gradient wrt pseudo") {
    Rng rng(23);
    std::vector<double> pv(16), iv(16);
    // keep |pseudo - masked image| away from the |.| kink
    for (int i = 0; i < 16; ++i) {
        iv[i] = 0.8;
        pv[i] = (i % 2) ? 0.2 : 1.4;
    }
    auto mask = binary_mask(4, 4, [](int i, int) { return i % 2 == 0; });
    auto image = Tensor::from_data({1, 1, 4, 4}, iv);
    auto x = Tensor::from_data({1, 1, 4, 4}, pv, true);
    CHECK(finite_diff_gradcheck([&](const Tensor& t) { return l1_roi_loss(t, image, mask); }, x) <=
          1e-6);
}

TEST_CASE("total_loss combines the terms") {
    auto dice = Tensor::scalar(0.5);
    auto l1 = Tensor::scalar(0.2);
    CHECK(total_loss(dice, l1, {0.1}).item() == doctest::Approx(0.52).epsilon(1e-12));
    CHECK(total_loss(dice, l1, {0.0}).item() == dice.item());
    CHECK_THROWS_AS(total_loss(dice, l1, {-0.5}), ConfigError);

    SUBCASE("gradient splits by lambda") {
        auto d = Tensor::scalar(0.5, true);
        auto l = Tensor::scalar(0.2, true);
        backward(total_loss(d, l, {0.1}));
        CHECK(d.grad()[0] == 1.0);
        CHECK(l.grad()[0] == 0.1);
    }
    SUBCASE("linear in lambda") {
        double t1 = total_loss(dice, l1, {0.05}).item();
        double t2 = total_loss(dice, l1, {0.15}).item();
        double tm = total_loss(dice, l1, {0.10}).item();
        CHECK(std::fabs(t1 + t2 - 2 * tm) <= 1e-12);
    }
}

TEST_CASE("metrics on hand-counted masks") {
    auto ident = binary_mask(8, 8, [](int i, int) { return i < 4; });
    CHECK(dice_metric(ident, ident) == 1.0);
    CHECK(miou_metric(ident, ident) == 1.0);

    auto left = binary_mask(8, 8, [](int, int j) { return j < 4; });
    auto right = binary_mask(8, 8, [](int, int j) { return j >= 4; });
    CHECK(dice_metric(left, right) == 0.0);
    CHECK(miou_metric(left, right) == 0.0);

    // G is a 10x10 block (100 px), P its left 10x5 half (50 px)
    auto g = binary_mask(16, 16, [](int i, int j) { return i < 10 && j < 10; });
    auto p = binary_mask(16, 16, [](int i, int j) { return i < 10 && j < 5; });
    CHECK(dice_metric(p, g) == doctest::Approx(100.0 / 150.0).epsilon(1e-12));
    CHECK(miou_metric(p, g) == doctest::Approx(0.5).epsilon(1e-12));

    // both empty scores 1.0; one-sided empty scores 0
    auto empty = binary_mask(8, 8, [](int, int) { return false; });
    CHECK(dice_metric(empty, empty) == 1.0);
    CHECK(miou_metric(empty, empty) == 1.0);
    CHECK(dice_metric(empty, ident) == 0.0);

    CHECK_THROWS_AS(dice_metric(ident, binary_mask(4, 4, [](int, int) { return true; })),
                    ShapeError);
}

TEST_CASE("dice and iou satisfy dice = 2*iou/(1+iou) per image") {
    Rng rng(25);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> pv(64), gv(64);
        for (auto& v : pv) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
        for (auto& v : gv) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
        auto p = Tensor::from_data({1, 1, 8, 8}, pv);
        auto g = Tensor::from_data({1, 1, 8, 8}, gv);
        double dice = dice_metric(p, g);
        double iou = miou_metric(p, g);
        CHECK(std::fabs(dice - 2 * iou / (1 + iou)) <= 1e-9);
    }
}

TEST_CASE("metric batch averaging") {
    // two images: one perfect, one disjoint -> 0.5 for both metrics
    std::vector<double> pv, gv;
    for (int s = 0; s < 2; ++s)
        for (int i = 0; i < 16; ++i) {
            bool fg = i < 8;
            gv.push_back(fg);
            pv.push_back(s == 0 ? fg : !fg);
        }
    auto p = Tensor::from_data({2, 1, 4, 4}, pv);
    auto g = Tensor::from_data({2, 1, 4, 4}, gv);
    CHECK(dice_metric(p, g) == 0.5);
    CHECK(miou_metric(p, g) == 0.5);
}
