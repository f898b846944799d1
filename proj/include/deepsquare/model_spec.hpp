#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "deepsquare/ops.hpp"
#include "deepsquare/tensor.hpp"

namespace deepsquare {

struct ConvLayer {
    std::size_t in = 0, out = 0, kernel = 3, stride = 1, pad = 1;
};
struct BatchNormLayer {
    std::size_t channels = 0;
};
// relu, elesquare, relu_square or negate.
struct ActivationLayer {
    Ewise kind = Ewise::relu;
};
enum class PoolKind { gap, square, gem, moment };
struct PoolLayer {
    PoolKind kind = PoolKind::gap;
    double p = 2.0;  // gem exponent
    int order = 1;   // moment order
};
struct FcLayer {
    std::size_t in = 0, out = 0;
};
struct DropoutLayer {
    double rate = 0.0;
};
// y = s * x with one learnable scalar s = raw^2.
struct ScaleLayer {};
struct SoftminLayer {
    std::size_t channels = 0;
    bool shared = true;
};
// Square-Excitation over the running feature map. shared_alpha draws alpha from a
// single network-wide parameter instead of one per occurrence.
struct ExcitationLayer {
    bool shared_alpha = false;
};

struct Layer;

// Residual block: out = relu(main(x) + shortcut(x)); an empty shortcut is identity.
struct BlockLayer {
    std::vector<Layer> main;
    std::vector<Layer> shortcut;
};

struct Layer {
    std::variant<ConvLayer, BatchNormLayer, ActivationLayer, PoolLayer, FcLayer, DropoutLayer, ScaleLayer,
                 SoftminLayer, ExcitationLayer, BlockLayer>
        kind;
};

enum class Head { softmax_ce, mse };

struct ModelSpec {
    std::string builder;             // vanilla_cnn, mini_resnet, two_layer or custom
    std::string variant = "original";
    Shape input;                     // per-sample shape: {H, W, C} or {D}
    std::vector<Layer> layers;
    Head head = Head::softmax_ce;
};

inline constexpr double kDeepSquareDropout = 0.2;

// Throws Error if the layer shapes do not chain or more than one pooling head exists.
// Returns the per-sample output shape.
Shape validate(const ModelSpec& spec);

// Short descriptor names of every layer in order, blocks expanded as
// "block{main...|shortcut...}". Used for structural comparisons.
std::vector<std::string> layer_signature(const std::vector<Layer>& layers);

// --- Vanilla CNN (three stride-2 conv stages, GAP, FC) and its DeepSquare variants.

// Every accepted vanilla variant code, in table order.
const std::vector<std::string>& vanilla_variant_codes();
bool is_vanilla_variant(std::string_view code);

ModelSpec build_vanilla_cnn(std::string_view variant, std::size_t num_classes = 10,
                            double dropout_rate = kDeepSquareDropout);

// --- Mini residual network.

struct ModuleFlags {
    bool sp = false;   // square pooling head
    bool ss = false;   // square softmin after the final FC
    bool sex = false;  // square excitation in every block
    bool sen = false;  // square encoding in every block

    bool any() const { return sp || ss || sex || sen; }
    std::string code() const;  // "plain", or e.g. "sp+sex"
    static ModuleFlags parse(std::string_view text);  // "plain", "sp+sex", "sp,sex", ...
};

struct MiniResnetOptions {
    std::size_t num_blocks = 3;
    ModuleFlags flags;
    std::size_t num_classes = 10;
    bool shared_alpha = false;
    bool shared_softmin = true;
    double dropout_rate = kDeepSquareDropout;
};

ModelSpec build_mini_resnet(const MiniResnetOptions& options);

// Inserts an elesquare immediately before the last spatial (k > 1) convolution of the
// main branch. Rejects blocks without one and blocks that are already wrapped.
BlockLayer square_encoding_wrap(BlockLayer block);

// --- Two fully connected layers with a swappable activation.
ModelSpec build_two_layer(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, Ewise activation,
                          Head head = Head::softmax_ce);

}  // namespace deepsquare
