#include "deepsquare/tape.hpp"

#include <algorithm>
#include <mutex>

namespace deepsquare {

namespace {
std::mutex g_fault_mutex;
std::vector<std::string> g_corrupted_ops;
}  // namespace

namespace testing {
void set_corrupted_ops(std::vector<std::string> ops) {
    std::lock_guard lock(g_fault_mutex);
    g_corrupted_ops = std::move(ops);
}
const std::vector<std::string>& corrupted_ops() { return g_corrupted_ops; }
}  // namespace testing

const Tensor& Var::value() const {
    if (!tape_) throw Error("use of an unbound Var");
    return tape_->value(*this);
}

bool Var::requires_grad() const {
    return tape_ && tape_->requires_grad(*this);
}

Tape::Tape() {
#ifdef NDEBUG
    check_finite_ = false;
#else
    check_finite_ = true;
#endif
}

std::size_t Tape::check(Var v) const {
    if (v.tape_ != this) throw Error("Var belongs to a different tape");
    if (v.id_ >= nodes_.size()) throw Error("Var id out of range");
    return v.id_;
}

Var Tape::leaf(Tensor& tensor) {
    Node n;
    n.op = "leaf";
    n.value = Tensor(tensor.shape(), std::vector<double>(tensor.data().begin(), tensor.data().end()));
    n.leaf = &tensor;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, std::span<const Var> inputs, Tensor output, BackwardFn backward) {
    if (check_finite_ && !output.all_finite())
        throw Error("non-finite value produced by " + std::string(op));
    Node n;
    n.op = std::string(op);
    n.inputs.reserve(inputs.size());
    for (const auto& v : inputs) {
        auto id = check(v);
        n.inputs.push_back(id);
        n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
    }
    n.value = std::move(output);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
    return nodes_[check(v)].value;
}

bool Tape::requires_grad(Var v) const {
    return nodes_[check(v)].requires_grad;
}

std::span<const double> Tape::grad(Var v) const {
    return nodes_[check(v)].grad;
}

void Tape::backward(Var loss) {
    if (loss.tape_ != this || loss.id_ >= nodes_.size()) throw Error("backward: loss is not recorded on this tape");
    auto root = loss.id_;
    if (nodes_[root].value.size() != 1) throw Error("backward: loss must be a scalar");
    if (backward_done_)
        for (auto& n : nodes_) n.grad.clear();
    backward_done_ = true;

    const auto& faulty = testing::corrupted_ops();
    nodes_[root].grad.assign(1, 1.0);

    std::vector<const Tensor*> in_values;
    std::vector<std::span<double>> in_grads;
    std::vector<std::vector<double>> scratch;

    for (std::size_t idx = root + 1; idx-- > 0;) {
        Node& node = nodes_[idx];
        if (node.grad.empty() || !node.requires_grad) continue;

        if (node.leaf) {
            auto g = node.leaf->grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
            continue;
        }
        if (!node.backward) continue;

        bool corrupt = !faulty.empty() && std::find(faulty.begin(), faulty.end(), node.op) != faulty.end();
        in_values.clear();
        in_grads.clear();
        scratch.assign(node.inputs.size(), {});
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            Node& in = nodes_[node.inputs[k]];
            in_values.push_back(&in.value);
            if (!in.requires_grad) {
                in_grads.emplace_back();
            } else if (corrupt) {
                scratch[k].assign(in.value.size(), 0.0);
                in_grads.emplace_back(scratch[k]);
            } else {
                if (in.grad.empty()) in.grad.assign(in.value.size(), 0.0);
                in_grads.emplace_back(in.grad);
            }
        }
        BackwardContext ctx{node.grad, node.value, in_values, in_grads};
        node.backward(ctx);

        if (corrupt) {
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                if (scratch[k].empty()) continue;
                Node& in = nodes_[node.inputs[k]];
                if (in.grad.empty()) in.grad.assign(in.value.size(), 0.0);
                for (std::size_t i = 0; i < scratch[k].size(); ++i) in.grad[i] += 1.5 * scratch[k][i];
            }
        }
    }
}

}  // namespace deepsquare
