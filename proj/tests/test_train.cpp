#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "deepsquare/data.hpp"
#include "deepsquare/train.hpp"

using namespace deepsquare;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("deepsquare_test_train_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

TrainConfig small_config(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.warmup_epochs = 0;
    c.batch_size = 16;
    c.lr0 = 0.05;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("lr_at phase boundaries") {
    const double lr0 = 0.1;
    CHECK(lr_at(10, 110, 10, lr0) == lr0);
    CHECK(lr_at(60, 110, 10, lr0) == doctest::Approx(lr0 / 2).epsilon(1e-15));
    CHECK(std::abs(lr_at(110, 110, 10, lr0)) < 1e-17);
    CHECK(lr_at(0, 110, 10, lr0) == doctest::Approx(lr0 / 10));
    CHECK(lr_at(9, 110, 10, lr0) == lr0);
    CHECK_THROWS_AS(lr_at(0, 10, 10, lr0), Error);
    CHECK_THROWS_AS(lr_at(11, 10, 0, lr0), Error);
}

TEST_CASE("lr_at continuous at warmup end and nonincreasing after") {
    for (std::size_t warmup : {0u, 1u, 5u, 37u}) {
        const std::size_t total = 200;
        if (warmup > 0) CHECK(lr_at(warmup - 1, total, warmup, 0.4) == lr_at(warmup, total, warmup, 0.4));
        for (std::size_t s = warmup; s < total; ++s)
            CHECK(lr_at(s + 1, total, warmup, 0.4) <= lr_at(s, total, warmup, 0.4));
        for (std::size_t s = 0; s + 1 < warmup; ++s) CHECK(lr_at(s + 1, total, warmup, 0.4) > lr_at(s, total, warmup, 0.4));
    }
}

TEST_CASE("sgd_nesterov_step expansions") {
    {
        std::vector<double> p{0.0}, g{1.0}, v{0.0};
        sgd_nesterov_step(p, g, v, 0.1, 0.9, 0.0);
        CHECK(v[0] == 1.0);
        CHECK(p[0] == doctest::Approx(-0.19).epsilon(1e-15));
    }
    {
        std::vector<double> p{2.0}, g{0.5}, v{0.0};
        sgd_nesterov_step(p, g, v, 0.1, 0.0, 0.0);
        CHECK(p[0] == 2.0 - 0.1 * 0.5);
    }
    {
        std::vector<double> p{1.0}, g{0.0}, v{0.0};
        sgd_nesterov_step(p, g, v, 0.1, 0.9, 0.1);
        CHECK(v[0] == doctest::Approx(0.1).epsilon(1e-15));
        CHECK(p[0] - 1.0 == doctest::Approx(-0.1 * 0.19).epsilon(1e-12));
    }
    std::vector<double> p(2), g(3), v(2);
    CHECK_THROWS_AS(sgd_nesterov_step(p, g, v, 0.1, 0.9, 0.0), Error);
}

TEST_CASE("sgd on half squared norm contracts by 1 - lr") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const double lr = rng.uniform(0.01, 0.9);
        std::vector<double> p(7), v(7, 0.0);
        for (auto& x : p) x = rng.normal();
        const auto before = p;
        const auto g = p;  // gradient of 0.5 |p|^2
        sgd_nesterov_step(p, g, v, lr, 0.0, 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == before[i] - lr * before[i]);
    }
}

TEST_CASE("config validation names the field") {
    TrainConfig c;
    c.validate();
    c.lr0 = 0.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("lr0"), Error);
    c = {};
    c.momentum = 1.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("momentum"), Error);
    c = {};
    c.warmup_epochs = c.epochs;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("warmup_epochs"), Error);
    c = {};
    c.epochs = 0;
    c.validate();

    auto parsed = train_config_from_json(to_json(TrainConfig{}));
    CHECK(to_json(parsed) == to_json(TrainConfig{}));
    CHECK_THROWS_WITH_AS(train_config_from_json({{"learning_rate", 0.1}}), doctest::Contains("learning_rate"), Error);
    CHECK_THROWS_WITH_AS(train_config_from_json({{"augmentation", "mixup"}}), doctest::Contains("augmentation"), Error);
    CHECK_THROWS_WITH_AS(train_config_from_json({{"epochs", "ten"}}), doctest::Contains("epochs"), Error);
}

TEST_CASE("epoch order is a pure permutation of (seed, epoch)") {
    auto a = epoch_order(1000, 5, 2);
    CHECK(a == epoch_order(1000, 5, 2));
    CHECK(a != epoch_order(1000, 5, 3));
    CHECK(a != epoch_order(1000, 6, 2));
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("CIFAR-10 batch loader") {
    auto dir = scratch_dir("loader");
    auto data = make_synthetic_images(kCifarRecordsPerBatch, 10, 42);
    const auto file = dir / "test_batch.bin";
    write_cifar_records(file, data);
    REQUIRE(fs::file_size(file) == 30730000u);

    auto loaded = load_cifar_batch(file);
    CHECK(loaded.size() == 10000);
    CHECK(loaded.batch(std::vector<std::size_t>{0, 1}).shape() == Shape{2, 32, 32, 3});

    // Byte-level reads of the raw file.
    std::ifstream in(file, std::ios::binary);
    std::vector<unsigned char> rec(kCifarRecordBytes * 2);
    in.read(reinterpret_cast<char*>(rec.data()), std::streamsize(rec.size()));
    CHECK(loaded.labels()[0] == rec[0]);
    CHECK(loaded.labels()[1] == rec[kCifarRecordBytes]);
    // Pixel (row 5, col 7): red at 1 + 5*32+7, green 1024 later, blue 2048 later.
    const std::size_t off = 1 + 5 * 32 + 7;
    auto img = loaded.image(0);
    CHECK(img[(5 * 32 + 7) * 3 + 0] == rec[off]);
    CHECK(img[(5 * 32 + 7) * 3 + 1] == rec[off + 1024]);
    CHECK(img[(5 * 32 + 7) * 3 + 2] == rec[off + 2048]);

    Tensor x = loaded.batch(std::vector<std::size_t>{0});
    CHECK(x[(5 * 32 + 7) * 3 + 1] == (rec[off + 1024] / 255.0 - kCifarMean[1]) / kCifarStd[1]);

    fs::resize_file(file, 30730000u - 1);
    CHECK_THROWS_WITH_AS(load_cifar_batch(file), doctest::Contains(file.string().c_str()), IoError);
    CHECK_THROWS_AS(load_cifar10(dir), IoError);
    CHECK_THROWS_AS(load_cifar10(dir / "missing"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("crop-flip augmentation") {
    auto data = make_synthetic_images(4, 2, 1);
    std::vector<std::size_t> idx{0, 1, 2, 3};
    Rng a(9), b(9);
    CHECK(bitwise_equal(data.batch(idx, Augmentation::crop_flip, &a), data.batch(idx, Augmentation::crop_flip, &b)));
    CHECK_THROWS_AS(data.batch(idx, Augmentation::crop_flip, nullptr), Error);
    // Every augmented pixel is either a source pixel or the zero pad.
    Rng c(10);
    Tensor x = data.batch(idx, Augmentation::crop_flip, &c);
    Tensor plain = data.batch(idx);
    for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const double pad = (0.0 - kCifarMean[ch]) / kCifarStd[ch];
            for (std::size_t p = 0; p < 1024; ++p) {
                double v = x[(n * 1024 + p) * 3 + ch];
                bool found = v == pad;
                for (std::size_t q = 0; q < 1024 && !found; ++q) found = plain[(n * 1024 + q) * 3 + ch] == v;
                CHECK(found);
            }
        }
}

TEST_CASE("channel statistics of a constant image set") {
    std::vector<std::uint8_t> px(2 * kCifarPixels);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i % 3 == 0 ? 255 : (i % 3 == 1 ? 0 : 51));
    ImageDataset d(std::move(px), {0, 1});
    auto [mean, sd] = channel_statistics(d);
    CHECK(mean[0] == 1.0);
    CHECK(mean[1] == 0.0);
    CHECK(mean[2] == doctest::Approx(0.2));
    CHECK(sd[0] == doctest::Approx(0.0));
}

TEST_CASE("zero-epoch run records initialization metrics only") {
    auto train = make_synthetic_images(32, 10, 1);
    auto test = make_synthetic_images(20, 10, 2);
    auto r = run_training(build_vanilla_cnn("original"), train, test, small_config(0));
    CHECK(r.epochs.empty());
    CHECK_FALSE(r.diverged);
    CHECK(r.initial.epoch == 0);
    CHECK(std::isfinite(r.initial.test_loss));
    CHECK(r.initial.test_acc >= 0.0);
    CHECK(r.initial.test_acc <= 1.0);
    auto csv = metrics_csv(r);
    CHECK(csv.rfind("epoch,lr,train_loss,train_acc,test_loss,test_acc\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("training is deterministic and records one row per epoch") {
    auto train = make_synthetic_images(40, 10, 1);
    auto test = make_synthetic_images(20, 10, 2);
    auto cfg = small_config(2);
    auto a = run_training(build_vanilla_cnn("ds3"), train, test, cfg);
    auto b = run_training(build_vanilla_cnn("ds3"), train, test, cfg);
    CHECK(a.epochs.size() == 2);
    CHECK(metrics_csv(a) == metrics_csv(b));
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
        CHECK(a.epochs[i].test_acc == b.epochs[i].test_acc);
        CHECK(a.epochs[i].train_acc >= 0.0);
        CHECK(a.epochs[i].train_acc <= 1.0);
    }
    cfg.seed = 4;
    auto c = run_training(build_vanilla_cnn("ds3"), train, test, cfg);
    CHECK(metrics_csv(a) != metrics_csv(c));
}

TEST_CASE("non-finite loss stops training and flags divergence") {
    auto train = make_synthetic_images(32, 10, 1);
    auto test = make_synthetic_images(10, 10, 2);
    auto cfg = small_config(4);
    cfg.lr0 = 1e6;
    auto r = run_training(build_vanilla_cnn("ds5plus"), train, test, cfg);
    CHECK(r.diverged);
    REQUIRE(r.diverged_epoch.has_value());
    CHECK(r.epochs.size() + 1 == *r.diverged_epoch);
    CHECK(result_summary(r)["diverged"] == true);
}

TEST_CASE("weight decay skips parameters flagged decay=false") {
    Network net(build_vanilla_cnn("original"), 1);
    SgdOptimizer opt(net, 0.0, 0.5, true);
    for (auto& p : net.parameters()) {
        p.value.grad();  // zero gradients
        for (auto& v : p.value.data()) v = 1.0;
    }
    opt.step(net, 0.1);
    for (const auto& p : net.parameters()) CHECK(p.value[0] == (p.decay ? 1.0 - 0.1 * 0.5 : 1.0));
}

TEST_CASE("vanilla CNN memorizes a small synthetic subset") {
    auto train = make_synthetic_images(64, 10, 5);
    TrainConfig cfg = small_config(60);
    cfg.augmentation = Augmentation::none;
    cfg.dropout_rate = 0.0;
    cfg.weight_decay = 0.0;
    cfg.lr0 = 0.05;
    auto r = run_training(build_vanilla_cnn("original"), train, train.head(16), cfg);
    REQUIRE_FALSE(r.diverged);
    CHECK(r.epochs.back().train_loss < 0.05);
    CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
}
