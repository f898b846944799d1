#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "deepsquare/gradcheck.hpp"
#include "deepsquare/ops.hpp"
#include "deepsquare/rng.hpp"
#include "deepsquare/tape.hpp"

using namespace deepsquare;

namespace {

Tensor random_tensor(std::uint64_t seed, Shape shape) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

std::vector<double> values(const Tensor& t) {
    return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST_CASE("tensor construction enforces shape/data agreement") {
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), Error);
    CHECK_THROWS_AS(Tensor(Shape{0, 2}), Error);
    Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK_FALSE(t.has_grad());
    CHECK(t.grad().size() == 6);
}

TEST_CASE("ewise_apply forward values") {
    Tape tape;
    auto x = tape.constant(Tensor::vector({-2, 0, 3}));
    CHECK(values(square(x).value()) == std::vector<double>{4, 0, 9});
    auto y = tape.constant(Tensor::vector({-2, 3}));
    CHECK(values(relu_square(y).value()) == std::vector<double>{0, 9});
    CHECK(values(relu(y).value()) == std::vector<double>{0, 3});
    CHECK(values(negate(y).value()) == std::vector<double>{2, -3});
}

TEST_CASE("square backward at 3 is 6; relu subgradient at 0 is 0") {
    Tensor x = Tensor::vector({3.0});
    Tape tape;
    auto v = tape.leaf(x);
    tape.backward(square(v));
    CHECK(x.grad()[0] == 6.0);

    Tensor z = Tensor::vector({0.0, 0.0});
    Tape t2;
    auto vz = t2.leaf(z);
    t2.backward(weighted_sum(add(relu(vz), relu_square(vz)), Tensor::vector({1, 1})));
    CHECK(z.grad()[0] == 0.0);
    CHECK(z.grad()[1] == 0.0);
}

TEST_CASE("affine examples") {
    Tape tape;
    auto y1 = affine(tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{1, 0}, {0, 1}})),
                     tape.constant(Tensor::vector({0, 0})));
    CHECK(values(y1.value()) == std::vector<double>{1, 2});
    auto y2 = affine(tape.constant(Tensor::matrix({{1, 1}})), tape.constant(Tensor::matrix({{1, 2}, {3, 4}})),
                     tape.constant(Tensor::vector({1, 1})));
    CHECK(values(y2.value()) == std::vector<double>{5, 7});
    CHECK_THROWS_AS(affine(tape.constant(Tensor::matrix({{1, 2, 3}})), tape.constant(Tensor::matrix({{1, 2}, {3, 4}})),
                           tape.constant(Tensor::vector({1, 1}))),
                    Error);
}

TEST_CASE("affine weight gradient against central differences") {
    Tensor x = random_tensor(1, {3, 4});
    Tensor w = random_tensor(2, {4, 2});
    Tensor b = random_tensor(3, {2});
    Tensor* only_w[] = {&w};
    double err = grad_check(
        [&](Tape& tape, std::span<const Var> v) { return affine(tape.constant(x), v[0], tape.constant(b)); }, only_w);
    CHECK(err < 1e-6);
    // Linear in every argument: differences are exact up to rounding.
    Tensor* all[] = {&x, &w, &b};
    CHECK(grad_check([](Tape&, std::span<const Var> v) { return affine(v[0], v[1], v[2]); }, all) < 1e-9);
}

TEST_CASE("conv2d 1x1 scaling kernel") {
    Tape tape;
    auto x = tape.constant(Tensor(Shape{1, 2, 2, 1}, {1, 2, 3, 4}));
    auto k = tape.constant(Tensor(Shape{1, 1, 1, 1}, {2}));
    CHECK(values(conv2d(x, k, 1, 0).value()) == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("conv2d all-ones 3x3 stride 2 pad 1 counts valid taps") {
    const std::size_t H = 4, W = 4, k = 3, stride = 2, pad = 1;
    Tape tape;
    auto y = conv2d(tape.constant(Tensor(Shape{1, H, W, 1}, 1.0)), tape.constant(Tensor(Shape{k, k, 1, 1}, 1.0)),
                    stride, pad);
    REQUIRE(y.shape() == Shape{1, 2, 2, 1});
    // Direct summation over all taps.
    for (std::size_t oy = 0; oy < 2; ++oy)
        for (std::size_t ox = 0; ox < 2; ++ox) {
            double count = 0;
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                    long iy = long(oy * stride + ky) - long(pad), ix = long(ox * stride + kx) - long(pad);
                    if (iy >= 0 && iy < long(H) && ix >= 0 && ix < long(W)) count += 1;
                }
            CHECK(y.value()[oy * 2 + ox] == count);
        }
    CHECK(values(y.value()) == std::vector<double>{4, 6, 6, 9});
}

TEST_CASE("conv2d rejects non-positive output extent and channel mismatch") {
    Tape tape;
    auto x = tape.constant(Tensor(Shape{1, 2, 2, 1}, 1.0));
    CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor(Shape{5, 5, 1, 1}, 1.0)), 1, 0), Error);
    CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor(Shape{1, 1, 2, 1}, 1.0)), 1, 0), Error);
}

TEST_CASE("conv2d kernel gradient against central differences") {
    Tensor x = random_tensor(4, {1, 5, 5, 2});
    Tensor k = random_tensor(5, {3, 3, 2, 3});
    Tensor* only_k[] = {&k};
    double err = grad_check(
        [&](Tape& tape, std::span<const Var> v) { return conv2d(tape.constant(x), v[0], 2, 1); }, only_k);
    CHECK(err < 1e-5);
}

TEST_CASE("batchnorm2d constant input and identity statistics") {
    Tape tape;
    Tensor x(Shape{2, 2, 2, 2}, 3.0);
    BatchNormState st(2);
    auto y = batchnorm2d(tape.constant(x), tape.constant(Tensor(Shape{2}, 1.0)), tape.constant(Tensor(Shape{2}, 0.0)),
                         st, Mode::training);
    for (double v : y.value().data()) CHECK(v == 0.0);
    CHECK(st.running_mean[0] == doctest::Approx(0.3));

    BatchNormState id(2);
    id.epsilon = 1e-12;
    Tensor r = random_tensor(6, {2, 3, 3, 2});
    auto z = batchnorm2d(tape.constant(r), tape.constant(Tensor(Shape{2}, 1.0)), tape.constant(Tensor(Shape{2}, 0.0)),
                         id, Mode::inference);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(z.value()[i] == doctest::Approx(r[i]).epsilon(1e-10));
    CHECK(id.running_mean[0] == 0.0);
}

TEST_CASE("batchnorm2d running variance stays nonnegative and channel mismatch is rejected") {
    Tape tape;
    BatchNormState st(2);
    for (int i = 0; i < 5; ++i)
        batchnorm2d(tape.constant(random_tensor(10 + i, {2, 2, 2, 2})), tape.constant(Tensor(Shape{2}, 1.0)),
                    tape.constant(Tensor(Shape{2}, 0.0)), st, Mode::training);
    for (double v : st.running_var) CHECK(v >= 0.0);
    BatchNormState wrong(3);
    CHECK_THROWS_AS(batchnorm2d(tape.constant(Tensor(Shape{1, 1, 1, 2}, 1.0)), tape.constant(Tensor(Shape{2}, 1.0)),
                                tape.constant(Tensor(Shape{2}, 0.0)), wrong, Mode::training),
                    Error);
}

TEST_CASE("batchnorm2d gamma gradient against central differences") {
    Tensor x = random_tensor(7, {2, 3, 3, 2});
    Tensor gamma = Tensor::vector({1.3, 0.7});
    Tensor beta = Tensor::vector({0.1, -0.2});
    Tensor* only_gamma[] = {&gamma};
    double err = grad_check(
        [&](Tape& tape, std::span<const Var> v) {
            BatchNormState st(2);
            return batchnorm2d(tape.constant(x), v[0], tape.constant(beta), st, Mode::training);
        },
        only_gamma);
    CHECK(err < 1e-5);
}

TEST_CASE("gap forward and backward") {
    Tensor x(Shape{1, 2, 2, 1}, {1, 2, 3, 4});
    Tape tape;
    auto v = tape.leaf(x);
    auto g = gap(v);
    CHECK(g.value()[0] == 2.5);
    tape.backward(g);
    for (double d : x.grad()) CHECK(d == 0.25);

    Tape t2;
    CHECK(gap(t2.constant(Tensor(Shape{1, 3, 3, 1}, 1.75))).value()[0] == 1.75);
}

TEST_CASE("dropout contracts") {
    Tensor x = random_tensor(8, {4, 5});
    Tape tape;
    Rng rng(1);
    auto v = tape.constant(x);
    CHECK(bitwise_equal(dropout(v, 0.0, rng, Mode::training).value(), x));
    CHECK(bitwise_equal(dropout(v, 0.2, rng, Mode::inference).value(), x));
    CHECK_THROWS_AS(dropout(v, 1.0, rng, Mode::training), Error);

    // Monte-Carlo: inverted dropout preserves the mean.
    Tensor ones(Shape{100000}, 1.0);
    Rng mc(2024);
    auto y = dropout(tape.constant(ones), 0.2, mc, Mode::training);
    double mean = 0.0;
    for (double d : y.value().data()) mean += d;
    mean /= 100000.0;
    CHECK(std::abs(mean - 1.0) < 0.01);
}

TEST_CASE("softmax_ce examples") {
    Tape tape;
    std::vector<std::size_t> t0{0};
    CHECK(softmax_ce(tape.constant(Tensor::matrix({{0, 0}})), t0).value().item() ==
          doctest::Approx(0.693147).epsilon(1e-6));
    double big = softmax_ce(tape.constant(Tensor::matrix({{1000, 0}})), t0).value().item();
    CHECK(std::isfinite(big));
    CHECK(big == doctest::Approx(0.0).epsilon(1e-12));
    std::vector<std::size_t> bad{2};
    CHECK_THROWS_AS(softmax_ce(tape.constant(Tensor::matrix({{0, 0}})), bad), Error);
}

TEST_CASE("softmax_ce gradient and shift invariance") {
    Rng rng(9);
    std::vector<std::size_t> targets{1, 7, 3, 9};
    Tensor logits = random_tensor(10, {4, 10});
    Tensor* in[] = {&logits};
    double err = grad_check([&](Tape&, std::span<const Var> v) { return softmax_ce(v[0], targets); }, in);
    CHECK(err < 1e-6);

    for (double c : {-50.0, -1.0, 0.5, 3.0, 100.0}) {
        Tensor shifted = logits;
        for (auto& v : shifted.data()) v += c;
        Tape tape;
        double a = softmax_ce(tape.constant(logits), targets).value().item();
        double b = softmax_ce(tape.constant(shifted), targets).value().item();
        CHECK(std::abs(a - b) < 1e-12);
    }
}

TEST_CASE("backward: chain rule base case and fan-out accumulation") {
    Tensor x = Tensor::vector({3.0});
    {
        Tape tape;
        tape.backward(square(tape.leaf(x)));
        CHECK(x.grad()[0] == 6.0);
    }
    Tensor y = Tensor::vector({1.0});
    {
        Tape tape;
        auto v = tape.leaf(y);
        tape.backward(add(v, v));
        CHECK(y.grad()[0] == 2.0);
    }
}

TEST_CASE("backward rejects a loss from another tape or a non-scalar loss") {
    Tape a, b;
    auto va = a.constant(Tensor::vector({1.0}));
    CHECK_THROWS_AS(b.backward(va), Error);
    auto vec = a.constant(Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(a.backward(vec), Error);
}

TEST_CASE("splitting a tensor into two uses doubles its gradient exactly") {
    Tensor x = random_tensor(11, {6});
    Tensor w = random_tensor(12, {6});
    Tensor single = x, twice = x;
    {
        Tape tape;
        tape.backward(weighted_sum(square(tape.leaf(single)), w));
    }
    {
        Tape tape;
        auto v = tape.leaf(twice);
        tape.backward(add(weighted_sum(square(v), w), weighted_sum(square(v), w)));
    }
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(twice.grad()[i] == 2.0 * single.grad()[i]);
}

TEST_CASE("tape is topological and replays each node once") {
    Tensor x = Tensor::vector({2.0});
    Tape tape;
    auto v = tape.leaf(x);
    auto y = add(square(v), negate(v));
    for (std::size_t i = 0; i < tape.size(); ++i)
        for (auto in : tape.inputs(i)) CHECK(in < i);
    tape.backward(y);
    CHECK(x.grad()[0] == 3.0);  // 2x - 1
}

TEST_CASE("identical inputs give bitwise-identical values and gradients") {
    auto run = [] {
        Tensor x = random_tensor(13, {2, 5, 5, 3});
        Tensor k = random_tensor(14, {3, 3, 3, 4});
        Tape tape;
        auto y = gap(relu_square(conv2d(tape.leaf(x), tape.leaf(k), 1, 1)));
        tape.backward(weighted_sum(y, Tensor(y.shape(), 0.5)));
        return std::pair{y.value(), std::vector<double>(k.grad().begin(), k.grad().end())};
    };
    auto [y1, g1] = run();
    auto [y2, g2] = run();
    CHECK(bitwise_equal(y1, y2));
    CHECK(g1 == g2);
}

TEST_CASE("grad_check on square and every elementwise rule") {
    CHECK(grad_check([](Var v) { return square(v); }, Tensor::vector({1, 2, 3})) < 1e-8);
    for (int seed = 1; seed <= 5; ++seed) {
        Tensor x = random_tensor(100 + seed, {3, 4});
        for (auto& v : x.data()) v += v >= 0 ? 0.05 : -0.05;
        for (auto kind : {Ewise::relu, Ewise::square, Ewise::relu_square, Ewise::negate})
            CHECK(grad_check([kind](Var v) { return ewise_apply(kind, v); }, x) < 1e-4);
    }
}

TEST_CASE("finite check rejects NaN outputs when enabled") {
    Tape tape;
    tape.set_check_finite(true);
    Tensor bad = Tensor::vector({NAN});
    CHECK_THROWS_AS(square(tape.constant(bad)), Error);
}
