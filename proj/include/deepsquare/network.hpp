#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "deepsquare/model_spec.hpp"
#include "deepsquare/ops.hpp"
#include "deepsquare/rng.hpp"
#include "deepsquare/tape.hpp"

namespace deepsquare {

struct Parameter {
    std::string name;
    Tensor value;
    bool decay = true;  // weight decay applies (false for bn and scalar module parameters)
};

// A ModelSpec with instantiated parameters and batch-norm state.
class Network {
public:
    // Conv and FC weights are fan-in-scaled Gaussians drawn from init_seed in layer
    // order; nothing else consumes the init stream.
    Network(ModelSpec spec, std::uint64_t init_seed);

    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;
    Network(const Network&) = default;
    Network& operator=(const Network&) = default;

    const ModelSpec& spec() const noexcept { return spec_; }
    const Shape& output_shape() const noexcept { return output_shape_; }

    // input: batch x spec().input. dropout_rng may be null in inference mode.
    Var forward(Tape& tape, const Tensor& input, Mode mode, Rng* dropout_rng = nullptr);
    Var forward(Tape& tape, Var input, Mode mode, Rng* dropout_rng = nullptr);

    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const;
    void zero_grad();

    std::vector<BatchNormState>& batchnorm_states() noexcept { return bn_states_; }
    const std::vector<BatchNormState>& batchnorm_states() const noexcept { return bn_states_; }

private:
    struct Node {
        Layer layer;  // BlockLayer payload is ignored in favour of main/shortcut below
        std::vector<std::size_t> params;
        std::size_t bn_state = 0;
        std::vector<Node> main, shortcut;
    };

    std::vector<Node> compile(const std::vector<Layer>& layers, Rng& init);
    Var run(Tape& tape, const std::vector<Node>& nodes, Var x, Mode mode, Rng* dropout_rng,
            std::vector<Var>& leaves);
    std::size_t add_param(std::string name, Tensor value, bool decay);

    ModelSpec spec_;
    Shape output_shape_;
    std::vector<Parameter> params_;
    std::vector<BatchNormState> bn_states_;
    std::vector<Node> nodes_;
    std::size_t shared_alpha_ = static_cast<std::size_t>(-1);
};

}  // namespace deepsquare
