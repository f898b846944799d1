#include "deepsquare/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace deepsquare {

ImageDataset::ImageDataset(std::vector<std::uint8_t> pixels, std::vector<std::size_t> labels, std::size_t num_classes)
    : pixels_(std::move(pixels)), labels_(std::move(labels)), num_classes_(num_classes) {
    if (pixels_.size() != labels_.size() * kCifarPixels) throw Error("image dataset: pixel/label count mismatch");
    for (auto l : labels_)
        if (l >= num_classes_) throw Error("image dataset: label " + std::to_string(l) + " out of range");
}

Tensor ImageDataset::batch(std::span<const std::size_t> indices, Augmentation aug, Rng* rng) const {
    if (indices.empty()) throw Error("empty batch");
    if (aug == Augmentation::crop_flip && !rng) throw Error("crop-flip augmentation needs a random stream");
    constexpr std::size_t S = kCifarSide, C = kCifarChannels;
    constexpr long pad = 4;
    Tensor out(Shape{indices.size(), S, S, C});
    auto dst = out.data();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        if (indices[b] >= size()) throw Error("batch index out of range");
        const std::uint8_t* img = pixels_.data() + indices[b] * kCifarPixels;
        long dy = 0, dx = 0;
        bool flip = false;
        if (aug == Augmentation::crop_flip) {
            dy = static_cast<long>(rng->below(2 * pad + 1)) - pad;
            dx = static_cast<long>(rng->below(2 * pad + 1)) - pad;
            flip = rng->bernoulli(0.5);
        }
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x) {
                long sy = static_cast<long>(y) + dy;
                long sx = static_cast<long>(flip ? S - 1 - x : x) + dx;
                bool inside = sy >= 0 && sy < long(S) && sx >= 0 && sx < long(S);
                for (std::size_t c = 0; c < C; ++c) {
                    double raw = inside ? img[(std::size_t(sy) * S + std::size_t(sx)) * C + c] / 255.0 : 0.0;
                    dst[((b * S + y) * S + x) * C + c] = (raw - kCifarMean[c]) / kCifarStd[c];
                }
            }
    }
    return out;
}

std::vector<std::size_t> ImageDataset::batch_labels(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels_.at(i));
    return out;
}

ImageDataset ImageDataset::head(std::size_t n) const {
    n = std::min(n, size());
    return ImageDataset(std::vector<std::uint8_t>(pixels_.begin(), pixels_.begin() + long(n * kCifarPixels)),
                        std::vector<std::size_t>(labels_.begin(), labels_.begin() + long(n)), num_classes_);
}

namespace {

ImageDataset parse_records(const std::filesystem::path& file, std::size_t bytes) {
    std::ifstream in(file, std::ios::binary);
    std::vector<std::uint8_t> raw(bytes);
    if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size())))
        throw IoError("short read from " + file.string());
    const std::size_t records = bytes / kCifarRecordBytes;
    std::vector<std::uint8_t> pixels(records * kCifarPixels);
    std::vector<std::size_t> labels(records);
    constexpr std::size_t plane = kCifarSide * kCifarSide;
    for (std::size_t r = 0; r < records; ++r) {
        const std::uint8_t* rec = raw.data() + r * kCifarRecordBytes;
        if (rec[0] > 9) throw IoError("CIFAR-10 file " + file.string() + ": label byte out of range");
        labels[r] = rec[0];
        // Channel planes (R, G, B) to interleaved HWC.
        for (std::size_t p = 0; p < plane; ++p)
            for (std::size_t c = 0; c < kCifarChannels; ++c)
                pixels[r * kCifarPixels + p * kCifarChannels + c] = rec[1 + c * plane + p];
    }
    return ImageDataset(std::move(pixels), std::move(labels), 10);
}

std::uintmax_t checked_size(const std::filesystem::path& file) {
    std::error_code ec;
    auto bytes = std::filesystem::file_size(file, ec);
    if (ec) throw IoError("cannot read CIFAR-10 file " + file.string() + ": " + ec.message());
    return bytes;
}

}  // namespace

ImageDataset load_cifar_batch(const std::filesystem::path& file) {
    const auto bytes = checked_size(file);
    if (bytes != kCifarBatchBytes)
        throw IoError("CIFAR-10 batch " + file.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(kCifarBatchBytes));
    return parse_records(file, bytes);
}

ImageDataset load_cifar_records(const std::filesystem::path& file) {
    const auto bytes = checked_size(file);
    if (bytes == 0 || bytes % kCifarRecordBytes != 0)
        throw IoError("CIFAR-10 file " + file.string() + " has " + std::to_string(bytes) +
                      " bytes, not a whole number of 3073-byte records");
    return parse_records(file, bytes);
}

namespace {
ImageDataset concat(const std::vector<ImageDataset>& parts) {
    std::vector<std::uint8_t> pixels;
    std::vector<std::size_t> labels;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            auto img = p.image(i);
            pixels.insert(pixels.end(), img.begin(), img.end());
        }
        labels.insert(labels.end(), p.labels().begin(), p.labels().end());
    }
    return ImageDataset(std::move(pixels), std::move(labels), 10);
}
}  // namespace

CifarSplit load_cifar10(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("CIFAR-10 directory not found: " + dir.string());
    std::vector<ImageDataset> parts;
    for (int i = 1; i <= 5; ++i) parts.push_back(load_cifar_batch(dir / ("data_batch_" + std::to_string(i) + ".bin")));
    return {concat(parts), load_cifar_batch(dir / "test_batch.bin")};
}

std::pair<std::array<double, 3>, std::array<double, 3>> channel_statistics(const ImageDataset& data) {
    std::array<double, 3> sum{}, sq{};
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto img = data.image(i);
        for (std::size_t p = 0; p < kCifarSide * kCifarSide; ++p)
            for (std::size_t c = 0; c < 3; ++c) {
                double v = img[p * 3 + c] / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
    }
    const double n = double(data.size() * kCifarSide * kCifarSide);
    std::array<double, 3> mean{}, sd{};
    for (std::size_t c = 0; c < 3; ++c) {
        mean[c] = sum[c] / n;
        sd[c] = std::sqrt(std::max(0.0, sq[c] / n - mean[c] * mean[c]));
    }
    return {mean, sd};
}

ImageDataset make_synthetic_images(std::size_t n, std::size_t num_classes, std::uint64_t seed) {
    if (num_classes == 0) throw Error("synthetic images: num_classes must be positive");
    Rng rng(seed, {0x5171});
    std::vector<std::uint8_t> pixels(n * kCifarPixels);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % num_classes;
        labels[i] = label;
        const double angle = std::numbers::pi * double(label) / double(num_classes);
        const double freq = 0.25 + 0.1 * double(label % 3);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        std::array<double, 3> tint{0.5 + 0.4 * std::cos(2.0 * angle), 0.5 + 0.4 * std::sin(3.0 * angle),
                                   0.5 - 0.3 * std::cos(angle)};
        for (std::size_t y = 0; y < kCifarSide; ++y)
            for (std::size_t x = 0; x < kCifarSide; ++x) {
                double wave = std::sin(freq * (std::cos(angle) * double(x) + std::sin(angle) * double(y)) + phase);
                for (std::size_t c = 0; c < 3; ++c) {
                    double v = 255.0 * (tint[c] * (0.6 + 0.4 * wave)) + rng.normal(0.0, 12.0);
                    pixels[i * kCifarPixels + (y * kCifarSide + x) * 3 + c] =
                        static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
                }
            }
    }
    return ImageDataset(std::move(pixels), std::move(labels), num_classes);
}

void write_cifar_records(const std::filesystem::path& file, const ImageDataset& data) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    constexpr std::size_t plane = kCifarSide * kCifarSide;
    std::vector<std::uint8_t> rec(kCifarRecordBytes);
    for (std::size_t i = 0; i < data.size(); ++i) {
        rec[0] = static_cast<std::uint8_t>(data.labels()[i]);
        auto img = data.image(i);
        for (std::size_t p = 0; p < plane; ++p)
            for (std::size_t c = 0; c < 3; ++c) rec[1 + c * plane + p] = img[p * 3 + c];
        out.write(reinterpret_cast<const char*>(rec.data()), std::streamsize(rec.size()));
    }
    if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace deepsquare
