#include "deepsquare/network.hpp"

#include <cmath>

#include "deepsquare/square_modules.hpp"

namespace deepsquare {

namespace {
constexpr std::uint64_t kInitStream = 0x1417;
}

Network::Network(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
    output_shape_ = validate(spec_);
    Rng init(init_seed, {kInitStream});
    nodes_ = compile(spec_.layers, init);
}

std::size_t Network::add_param(std::string name, Tensor value, bool decay) {
    params_.push_back(Parameter{std::move(name), std::move(value), decay});
    return params_.size() - 1;
}

std::vector<Network::Node> Network::compile(const std::vector<Layer>& layers, Rng& init) {
    std::vector<Node> nodes;
    for (const auto& layer : layers) {
        Node node;
        const std::string prefix = "l" + std::to_string(params_.size()) + ".";
        if (auto* c = std::get_if<ConvLayer>(&layer.kind)) {
            Tensor w(Shape{c->kernel, c->kernel, c->in, c->out});
            const double sd = std::sqrt(2.0 / double(c->kernel * c->kernel * c->in));
            for (auto& v : w.data()) v = init.normal(0.0, sd);
            node.params.push_back(add_param(prefix + "conv.weight", std::move(w), true));
        } else if (auto* b = std::get_if<BatchNormLayer>(&layer.kind)) {
            node.params.push_back(add_param(prefix + "bn.gamma", Tensor(Shape{b->channels}, 1.0), false));
            node.params.push_back(add_param(prefix + "bn.beta", Tensor(Shape{b->channels}, 0.0), false));
            bn_states_.emplace_back(b->channels);
            node.bn_state = bn_states_.size() - 1;
        } else if (auto* f = std::get_if<FcLayer>(&layer.kind)) {
            Tensor w(Shape{f->in, f->out});
            const double sd = std::sqrt(1.0 / double(f->in));
            for (auto& v : w.data()) v = init.normal(0.0, sd);
            node.params.push_back(add_param(prefix + "fc.weight", std::move(w), true));
            node.params.push_back(add_param(prefix + "fc.bias", Tensor(Shape{f->out}, 0.0), true));
        } else if (std::holds_alternative<ScaleLayer>(layer.kind)) {
            node.params.push_back(add_param(prefix + "scale.raw", Tensor(Shape{1}, 1.0), false));
        } else if (auto* s = std::get_if<SoftminLayer>(&layer.kind)) {
            auto p = SoftminParams::make(s->channels, s->shared);
            node.params.push_back(add_param(prefix + "softmin.raw", std::move(p.raw), false));
        } else if (auto* e = std::get_if<ExcitationLayer>(&layer.kind)) {
            if (e->shared_alpha) {
                if (shared_alpha_ == static_cast<std::size_t>(-1))
                    shared_alpha_ = add_param("excitation.alpha", ExcitationParams::make().alpha, false);
                node.params.push_back(shared_alpha_);
            } else {
                node.params.push_back(add_param(prefix + "excitation.alpha", ExcitationParams::make().alpha, false));
            }
        } else if (auto* blk = std::get_if<BlockLayer>(&layer.kind)) {
            node.main = compile(blk->main, init);
            node.shortcut = compile(blk->shortcut, init);
        }
        node.layer = std::holds_alternative<BlockLayer>(layer.kind) ? Layer{BlockLayer{}} : layer;
        nodes.push_back(std::move(node));
    }
    return nodes;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void Network::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

Var Network::forward(Tape& tape, const Tensor& input, Mode mode, Rng* dropout_rng) {
    return forward(tape, tape.constant(input), mode, dropout_rng);
}

Var Network::forward(Tape& tape, Var input, Mode mode, Rng* dropout_rng) {
    const Shape& s = input.shape();
    Shape per_sample(s.begin() + 1, s.end());
    if (s.size() != spec_.input.size() + 1 || per_sample != spec_.input)
        throw Error("network input " + shape_string(s) + " does not match batch x " + shape_string(spec_.input));
    std::vector<Var> leaves(params_.size());
    return run(tape, nodes_, input, mode, dropout_rng, leaves);
}

Var Network::run(Tape& tape, const std::vector<Node>& nodes, Var x, Mode mode, Rng* dropout_rng,
                 std::vector<Var>& leaves) {
    auto param = [&](std::size_t idx) {
        if (!leaves[idx].valid()) leaves[idx] = tape.leaf(params_[idx].value);
        return leaves[idx];
    };
    for (const auto& node : nodes) {
        const auto& kind = node.layer.kind;
        if (auto* c = std::get_if<ConvLayer>(&kind)) {
            x = conv2d(x, param(node.params[0]), c->stride, c->pad);
        } else if (std::holds_alternative<BatchNormLayer>(kind)) {
            x = batchnorm2d(x, param(node.params[0]), param(node.params[1]), bn_states_[node.bn_state], mode);
        } else if (auto* a = std::get_if<ActivationLayer>(&kind)) {
            x = ewise_apply(a->kind, x);
        } else if (auto* p = std::get_if<PoolLayer>(&kind)) {
            switch (p->kind) {
                case PoolKind::gap: x = gap(x); break;
                case PoolKind::square: x = square_pool(x); break;
                case PoolKind::gem: x = gem_pool(x, p->p); break;
                case PoolKind::moment: x = moment_pool(x, p->order); break;
            }
        } else if (std::holds_alternative<FcLayer>(kind)) {
            x = affine(x, param(node.params[0]), param(node.params[1]));
        } else if (auto* d = std::get_if<DropoutLayer>(&kind)) {
            if (mode == Mode::training && d->rate > 0.0) {
                if (!dropout_rng) throw Error("training-mode dropout requires a random stream");
                x = dropout(x, d->rate, *dropout_rng, mode);
            }
        } else if (std::holds_alternative<ScaleLayer>(kind)) {
            x = learnable_scale(x, param(node.params[0]));
        } else if (std::holds_alternative<SoftminLayer>(kind)) {
            x = square_softmin(x, param(node.params[0]));
        } else if (std::holds_alternative<ExcitationLayer>(kind)) {
            x = square_excitation(x, param(node.params[0]));
        } else if (std::holds_alternative<BlockLayer>(kind)) {
            Var main = run(tape, node.main, x, mode, dropout_rng, leaves);
            Var side = node.shortcut.empty() ? x : run(tape, node.shortcut, x, mode, dropout_rng, leaves);
            x = relu(add(main, side));
        }
    }
    return x;
}

}  // namespace deepsquare
