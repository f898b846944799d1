#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "deepsquare/deepsquare.h"

namespace {

struct TensorPtr {
    ds_tensor* p = nullptr;
    ~TensorPtr() { ds_tensor_free(p); }
};

std::vector<double> random_values(std::size_t n, unsigned seed, double lo = -2.0, double hi = 2.0) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(gen);
    return v;
}

// Direct per-channel spatial mean of f(x) over an N x H x W x C buffer.
template <class F>
std::vector<double> channel_mean(const std::vector<double>& x, std::size_t n, std::size_t hw, std::size_t c, F f) {
    std::vector<double> out(n * c, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t k = 0; k < c; ++k) out[b * c + k] += f(x[(b * hw + p) * c + k]);
    for (auto& v : out) v /= double(hw);
    return out;
}

}  // namespace

TEST_CASE("tensor handles") {
    const std::size_t shape[] = {2, 3};
    const double data[] = {1, 2, 3, 4, 5, 6};
    TensorPtr t;
    REQUIRE(ds_tensor_create(shape, 2, data, &t.p) == DS_OK);
    CHECK(ds_tensor_rank(t.p) == 2);
    CHECK(ds_tensor_size(t.p) == 6);
    std::size_t got[2] = {0, 0};
    CHECK(ds_tensor_shape(t.p, got, 2) == DS_OK);
    CHECK(got[1] == 3);
    CHECK(ds_tensor_data(t.p)[5] == 6.0);
    CHECK(ds_tensor_shape(t.p, got, 1) == DS_ERR_INVALID_ARGUMENT);
    CHECK(std::string(ds_last_error()).find("too small") != std::string::npos);
    CHECK(ds_tensor_create(shape, 0, nullptr, &t.p) == DS_ERR_INVALID_ARGUMENT);
    CHECK(std::strlen(ds_version()) > 0);
}

TEST_CASE("pooling modules against direct sums") {
    const std::size_t n = 2, h = 3, w = 4, c = 5;
    const std::size_t shape[] = {n, h, w, c};
    auto x = random_values(n * h * w * c, 11);
    auto xpos = random_values(n * h * w * c, 12, 0.0, 2.0);
    TensorPtr in, inpos, sq, m3, gem;
    REQUIRE(ds_tensor_create(shape, 4, x.data(), &in.p) == DS_OK);
    REQUIRE(ds_tensor_create(shape, 4, xpos.data(), &inpos.p) == DS_OK);
    REQUIRE(ds_square_pool(in.p, &sq.p) == DS_OK);
    REQUIRE(ds_moment_pool(in.p, 3, &m3.p) == DS_OK);
    REQUIRE(ds_gem_pool(inpos.p, 2.0, &gem.p) == DS_OK);
    auto e2 = channel_mean(x, n, h * w, c, [](double v) { return v * v; });
    auto e3 = channel_mean(x, n, h * w, c, [](double v) { return v * v * v; });
    auto p2 = channel_mean(xpos, n, h * w, c, [](double v) { return v * v; });
    REQUIRE(ds_tensor_size(sq.p) == n * c);
    for (std::size_t i = 0; i < n * c; ++i) {
        CHECK(ds_tensor_data(sq.p)[i] == doctest::Approx(e2[i]).epsilon(1e-14));
        CHECK(ds_tensor_data(m3.p)[i] == doctest::Approx(e3[i]).epsilon(1e-13));
        CHECK(ds_tensor_data(gem.p)[i] == doctest::Approx(std::sqrt(p2[i] + 1e-12)).epsilon(1e-13));
    }
    TensorPtr bad;
    CHECK(ds_moment_pool(in.p, 9, &bad.p) == DS_ERR_INVALID_ARGUMENT);
}

TEST_CASE("softmin, scale proportion and excitation") {
    const std::size_t xs[] = {2, 3}, rs[] = {3};
    const double x[] = {1, -2, 0.5, 0, 3, -1};
    const double raw[] = {1, 2, -0.5};
    TensorPtr tx, tr, y;
    ds_tensor_create(xs, 2, x, &tx.p);
    ds_tensor_create(rs, 1, raw, &tr.p);
    REQUIRE(ds_square_softmin(tx.p, tr.p, &y.p) == DS_OK);
    for (std::size_t i = 0; i < 6; ++i) {
        const double s = raw[i % 3] * raw[i % 3];
        CHECK(ds_tensor_data(y.p)[i] == -s * x[i] * x[i]);
    }

    const double g[] = {0, 1, 4, 0.25};
    const std::size_t gs[] = {1, 4};
    TensorPtr tg, sp;
    ds_tensor_create(gs, 2, g, &tg.p);
    REQUIRE(ds_scale_proportion(tg.p, 2.0, &sp.p) == DS_OK);
    for (std::size_t i = 0; i < 4; ++i) CHECK(ds_tensor_data(sp.p)[i] == doctest::Approx(g[i] / (g[i] + 4.0)));

    const std::size_t fs[] = {1, 2, 2, 2};
    const double f[] = {1, 0, -1, 0, 1, 2, -1, 2};
    TensorPtr tf, ex;
    ds_tensor_create(fs, 4, f, &tf.p);
    REQUIRE(ds_square_excitation(tf.p, 1.0, &ex.p) == DS_OK);
    const double energy[] = {1.0, 2.0};  // channel means of f^2
    for (std::size_t i = 0; i < 8; ++i) {
        const double gate = energy[i % 2] / (energy[i % 2] + 1.0);
        CHECK(ds_tensor_data(ex.p)[i] == doctest::Approx(f[i] * gate).epsilon(1e-15));
    }
}

TEST_CASE("models through the C API") {
    ds_model* orig = nullptr;
    ds_model* ds3 = nullptr;
    REQUIRE(ds_model_build(R"({"builder": "vanilla_cnn", "variant": "original"})", 1, &orig) == DS_OK);
    REQUIRE(ds_model_build(R"({"builder": "vanilla_cnn", "variant": "ds3"})", 1, &ds3) == DS_OK);
    std::size_t a = 0, b = 0;
    ds_model_parameter_count(orig, &a);
    ds_model_parameter_count(ds3, &b);
    CHECK(a > 0);
    CHECK(a == b);

    ds_model* bad = nullptr;
    CHECK(ds_model_build(R"({"builder": "vanilla_cnn", "variant": "ds9"})", 1, &bad) == DS_ERR_INVALID_ARGUMENT);
    CHECK(std::string(ds_last_error()).find("model.variant") != std::string::npos);
    CHECK(ds_model_build("{not json", 1, &bad) == DS_ERR_INVALID_ARGUMENT);

    const std::size_t shape[] = {2, 32, 32, 3};
    auto x = random_values(2 * 32 * 32 * 3, 5);
    TensorPtr in, y1, y2;
    ds_tensor_create(shape, 4, x.data(), &in.p);
    REQUIRE(ds_model_forward(ds3, in.p, &y1.p) == DS_OK);
    CHECK(ds_tensor_size(y1.p) == 20);

    char* doc = nullptr;
    REQUIRE(ds_model_to_json(ds3, &doc) == DS_OK);
    ds_model* copy = nullptr;
    REQUIRE(ds_model_load(doc, &copy) == DS_OK);
    ds_string_free(doc);
    REQUIRE(ds_model_forward(copy, in.p, &y2.p) == DS_OK);
    for (std::size_t i = 0; i < 20; ++i) CHECK(ds_tensor_data(y1.p)[i] == ds_tensor_data(y2.p)[i]);

    const std::size_t wrong[] = {1, 8, 8, 3};
    TensorPtr small, y3;
    ds_tensor_create(wrong, 4, nullptr, &small.p);
    CHECK(ds_model_forward(copy, small.p, &y3.p) == DS_ERR_INVALID_ARGUMENT);
    ds_model_free(orig);
    ds_model_free(ds3);
    ds_model_free(copy);
}

TEST_CASE("boundary coefficients") {
    const double w[] = {1, 0, 0, 1}, b[] = {0, 1};
    double A = 0, B = 0, C = 0;
    const char* type = nullptr;
    REQUIRE(ds_boundary_coefficients(w, b, &A, &B, &C, &type) == DS_OK);
    CHECK(A == 1.0);
    CHECK(B == -1.0);
    CHECK(C == 1.0);
    CHECK(std::string(type) == "hyperbola");
    const double b0[] = {0.5, 0.5};
    REQUIRE(ds_boundary_coefficients(w, b0, &A, &B, &C, &type) == DS_OK);
    CHECK(std::string(type) == "degenerate");
}

TEST_CASE("run_command statuses") {
    char* summary = nullptr;
    char* path = nullptr;
    CHECK(ds_run_command("gradcheck", R"({"ops": ["square_pool"]})", &summary, &path) == DS_OK);
    CHECK(std::string(summary).find("square_pool") != std::string::npos);
    CHECK(std::string(path).empty());
    ds_string_free(summary);
    ds_string_free(path);

    const char* faulty[] = {"square"};
    REQUIRE(ds_set_fault_injection(faulty, 1) == DS_OK);
    CHECK(ds_run_command("gradcheck", R"({"ops": ["square"]})", &summary, nullptr) == DS_ERR_CHECK_FAILED);
    CHECK(std::string(summary).find("\"failed\"") != std::string::npos);
    ds_string_free(summary);
    REQUIRE(ds_set_fault_injection(nullptr, 0) == DS_OK);
    CHECK(ds_run_command("gradcheck", R"({"ops": ["square"]})", nullptr, nullptr) == DS_OK);

    CHECK(ds_run_command("bogus", "{}", &summary, nullptr) == DS_ERR_INVALID_ARGUMENT);
    CHECK(summary == nullptr);
    CHECK(ds_run_command("train", R"({"config": "/nonexistent.json"})", nullptr, nullptr) == DS_ERR_IO);
    CHECK(ds_run_command("boundary", R"({"weights": [1, 2]})", nullptr, nullptr) == DS_ERR_INVALID_ARGUMENT);
    CHECK(std::string(ds_last_error()).find("weights") != std::string::npos);
}
