#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepsquare/tensor.hpp"

namespace deepsquare {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// What a backward rule sees. grad_in[i] is empty when input i needs no gradient;
// rules must accumulate (+=) into the non-empty ones.
struct BackwardContext {
    std::span<const double> grad_out;
    const Tensor& output;
    std::span<const Tensor* const> inputs;
    std::span<const std::span<double>> grad_in;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Ordered record of differentiable operations. Nodes are appended in execution
// order, so the sequence is topological by construction.
class Tape {
public:
    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf bound to an external tensor; backward() accumulates into tensor.grad().
    Var leaf(Tensor& tensor);
    // Leaf without a gradient.
    Var constant(Tensor value);

    Var record(std::string_view op, std::span<const Var> inputs, Tensor output, BackwardFn backward);
    Var record(std::string_view op, std::initializer_list<Var> inputs, Tensor output, BackwardFn backward) {
        return record(op, std::span<const Var>(inputs.begin(), inputs.size()), std::move(output),
                      std::move(backward));
    }

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    // Gradient of the last backward() target w.r.t. v; empty if none reached v.
    std::span<const double> grad(Var v) const;

    // Reverse traversal from a scalar loss. Each node is visited at most once.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

    // When on, every recorded output is checked for NaN/Inf. Defaults to on in debug builds.
    void set_check_finite(bool on) noexcept { check_finite_ = on; }

private:
    struct Node {
        std::string op;
        std::vector<std::size_t> inputs;
        Tensor value;
        std::vector<double> grad;
        BackwardFn backward;
        Tensor* leaf = nullptr;
        bool requires_grad = false;
    };

    std::size_t check(Var v) const;

    std::vector<Node> nodes_;
    bool check_finite_;
    bool backward_done_ = false;
};

namespace testing {
// Fault injection for the gradient checker: backward contributions of the named
// ops are scaled by 1.5. Process-wide; empty list disables.
void set_corrupted_ops(std::vector<std::string> ops);
const std::vector<std::string>& corrupted_ops();
}  // namespace testing

}  // namespace deepsquare
