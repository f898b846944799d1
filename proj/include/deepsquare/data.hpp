#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "deepsquare/rng.hpp"
#include "deepsquare/tensor.hpp"

namespace deepsquare {

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarPixels = kCifarSide * kCifarSide * kCifarChannels;  // 3072
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixels;                     // 3073
inline constexpr std::size_t kCifarRecordsPerBatch = 10000;
inline constexpr std::size_t kCifarBatchBytes = kCifarRecordBytes * kCifarRecordsPerBatch;  // 30,730,000

// Per-channel statistics of the CIFAR-10 training images after scaling to [0, 1].
inline constexpr std::array<double, 3> kCifarMean{0.4914, 0.4822, 0.4465};
inline constexpr std::array<double, 3> kCifarStd{0.2470, 0.2435, 0.2616};

enum class Augmentation { none, crop_flip };

// 32x32x3 images kept as raw bytes (HWC order); batches are materialized as
// normalized N x 32 x 32 x 3 tensors on demand.
class ImageDataset {
public:
    ImageDataset() = default;
    ImageDataset(std::vector<std::uint8_t> pixels, std::vector<std::size_t> labels, std::size_t num_classes = 10);

    std::size_t size() const noexcept { return labels_.size(); }
    std::size_t num_classes() const noexcept { return num_classes_; }
    const std::vector<std::size_t>& labels() const noexcept { return labels_; }
    std::span<const std::uint8_t> image(std::size_t i) const {
        return {pixels_.data() + i * kCifarPixels, kCifarPixels};
    }

    // Normalized batch of the given samples. crop_flip applies a random crop of the
    // 4-pixel zero-padded image and a horizontal flip with probability 1/2.
    Tensor batch(std::span<const std::size_t> indices, Augmentation aug = Augmentation::none,
                 Rng* rng = nullptr) const;
    std::vector<std::size_t> batch_labels(std::span<const std::size_t> indices) const;

    // First n samples.
    ImageDataset head(std::size_t n) const;

private:
    std::vector<std::uint8_t> pixels_;
    std::vector<std::size_t> labels_;
    std::size_t num_classes_ = 10;
};

struct CifarSplit {
    ImageDataset train;
    ImageDataset test;
};

// One binary batch file: exactly 10000 records of 1 label byte + 1024 R + 1024 G + 1024 B.
// Any other size raises IoError naming the path.
ImageDataset load_cifar_batch(const std::filesystem::path& file);

// Any whole number of records in the same layout (small subsets and fixtures).
ImageDataset load_cifar_records(const std::filesystem::path& file);

// data_batch_1.bin .. data_batch_5.bin and test_batch.bin under dir.
CifarSplit load_cifar10(const std::filesystem::path& dir);

// Mean and standard deviation per channel of pixels scaled to [0, 1].
std::pair<std::array<double, 3>, std::array<double, 3>> channel_statistics(const ImageDataset& data);

// Class-dependent textured images (colour, stripe orientation and frequency vary by
// class) with pixel noise. Deterministic given seed.
ImageDataset make_synthetic_images(std::size_t n, std::size_t num_classes, std::uint64_t seed);

// Writes records in the CIFAR-10 binary layout (used for fixtures and export).
void write_cifar_records(const std::filesystem::path& file, const ImageDataset& data);

}  // namespace deepsquare
