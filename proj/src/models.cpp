#include "deepsquare/model_spec.hpp"

#include <algorithm>
#include <array>
#include <sstream>

namespace deepsquare {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Shape chain(const std::vector<Layer>& layers, Shape shape, int& pools);

Shape chain_one(const Layer& layer, Shape s, int& pools) {
    auto need_map = [&](const char* what) {
        if (s.size() != 3) throw Error(std::string(what) + " expects an H x W x C feature map, got " + shape_string(s));
    };
    auto need_vec = [&](const char* what) {
        if (s.size() != 1) throw Error(std::string(what) + " expects a flat vector, got " + shape_string(s));
    };
    return std::visit(
        overloaded{
            [&](const ConvLayer& c) -> Shape {
                need_map("conv");
                if (s[2] != c.in)
                    throw Error("conv expects " + std::to_string(c.in) + " input channels, got " + std::to_string(s[2]));
                if (c.kernel == 0 || c.stride == 0 || c.out == 0) throw Error("conv: kernel, stride and out must be positive");
                auto ext = [&](std::size_t len) {
                    if (len + 2 * c.pad < c.kernel) throw Error("conv: non-positive output extent");
                    return (len + 2 * c.pad - c.kernel) / c.stride + 1;
                };
                return {ext(s[0]), ext(s[1]), c.out};
            },
            [&](const BatchNormLayer& b) -> Shape {
                need_map("batchnorm");
                if (s[2] != b.channels) throw Error("batchnorm channel count mismatch");
                return s;
            },
            [&](const ActivationLayer&) -> Shape { return s; },
            [&](const PoolLayer& p) -> Shape {
                need_map("pool");
                if (++pools > 1) throw Error("model has more than one pooling head");
                if (p.kind == PoolKind::moment && (p.order < 1 || p.order > 6)) throw Error("pool: moment order outside [1, 6]");
                if (p.kind == PoolKind::gem && !(p.p > 0.0)) throw Error("pool: gem exponent must be positive");
                return {s[2]};
            },
            [&](const FcLayer& f) -> Shape {
                need_vec("fc");
                if (s[0] != f.in) throw Error("fc expects " + std::to_string(f.in) + " inputs, got " + std::to_string(s[0]));
                if (f.out == 0) throw Error("fc: out must be positive");
                return {f.out};
            },
            [&](const DropoutLayer& d) -> Shape {
                if (!(d.rate >= 0.0) || d.rate >= 1.0) throw Error("dropout rate must lie in [0, 1)");
                return s;
            },
            [&](const ScaleLayer&) -> Shape { return s; },
            [&](const SoftminLayer& m) -> Shape {
                need_vec("softmin");
                if (s[0] != m.channels) throw Error("softmin channel count mismatch");
                return s;
            },
            [&](const ExcitationLayer&) -> Shape {
                need_map("excitation");
                return s;
            },
            [&](const BlockLayer& b) -> Shape {
                need_map("block");
                int inner = 0;
                Shape main = chain(b.main, s, inner);
                Shape side = b.shortcut.empty() ? s : chain(b.shortcut, s, inner);
                if (inner) throw Error("block branches may not pool");
                if (main != side)
                    throw Error("block main branch " + shape_string(main) + " does not match shortcut " + shape_string(side));
                return main;
            },
        },
        layer.kind);
}

Shape chain(const std::vector<Layer>& layers, Shape shape, int& pools) {
    for (const auto& l : layers) shape = chain_one(l, std::move(shape), pools);
    return shape;
}

std::string describe(const Layer& layer) {
    return std::visit(
        overloaded{
            [](const ConvLayer& c) {
                std::ostringstream os;
                os << "conv" << c.kernel << "x" << c.kernel << "s" << c.stride << "(" << c.in << "->" << c.out << ")";
                return os.str();
            },
            [](const BatchNormLayer&) { return std::string("bn"); },
            [](const ActivationLayer& a) {
                return a.kind == Ewise::square ? std::string("elesquare") : std::string(to_string(a.kind));
            },
            [](const PoolLayer& p) {
                switch (p.kind) {
                    case PoolKind::gap: return std::string("gap");
                    case PoolKind::square: return std::string("square_pool");
                    case PoolKind::gem: return "gem_pool" + std::to_string(p.p);
                    case PoolKind::moment: return "moment_pool" + std::to_string(p.order);
                }
                return std::string("pool");
            },
            [](const FcLayer& f) { return "fc(" + std::to_string(f.in) + "->" + std::to_string(f.out) + ")"; },
            [](const DropoutLayer&) { return std::string("dropout"); },
            [](const ScaleLayer&) { return std::string("scale"); },
            [](const SoftminLayer&) { return std::string("softmin"); },
            [](const ExcitationLayer&) { return std::string("excitation"); },
            [](const BlockLayer& b) {
                std::string s = "block{";
                for (const auto& n : layer_signature(b.main)) s += n + " ";
                s += "|";
                for (const auto& n : layer_signature(b.shortcut)) s += " " + n;
                return s + "}";
            },
        },
        layer.kind);
}

Layer conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride) {
    return {ConvLayer{in, out, k, stride, k / 2}};
}
Layer bn(std::size_t c) { return {BatchNormLayer{c}}; }
Layer act(Ewise e) { return {ActivationLayer{e}}; }
Layer elesquare() { return act(Ewise::square); }

}  // namespace

Shape validate(const ModelSpec& spec) {
    if (spec.input.empty()) throw Error("model input shape is empty");
    int pools = 0;
    return chain(spec.layers, spec.input, pools);
}

std::vector<std::string> layer_signature(const std::vector<Layer>& layers) {
    std::vector<std::string> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(describe(l));
    return out;
}

const std::vector<std::string>& vanilla_variant_codes() {
    static const std::vector<std::string> codes{
        "original", "ds1",  "ds2",  "ds3",     "ds4",     "ds5plus", "ds5minus", "ds5splus", "ds5sminus", "ds6",
        "ds7",      "ds8",  "gem2", "moment3", "moment4", "moment5", "moment6",  "sp",       "ss"};
    return codes;
}

bool is_vanilla_variant(std::string_view code) {
    const auto& c = vanilla_variant_codes();
    return std::find(c.begin(), c.end(), code) != c.end();
}

ModelSpec build_vanilla_cnn(std::string_view variant, std::size_t num_classes, double dropout_rate) {
    if (!is_vanilla_variant(variant))
        throw Error("variant: unknown vanilla CNN variant code '" + std::string(variant) + "'");
    if (num_classes == 0) throw Error("num_classes must be positive");
    const std::string v(variant);

    // EleSquare positions "a_b" between Layer a and Layer b; position 5 is after the FC.
    std::array<bool, 6> square_after{};
    if (v == "ds1") square_after[1] = true;
    if (v == "ds2") square_after[2] = true;
    if (v == "ds3" || v == "sp") square_after[3] = true;
    if (v == "ds4") square_after[4] = true;
    if (v == "ds5plus") square_after[5] = true;
    if (v == "ds6") square_after = {false, true, true, true, true, true};
    if (v == "ds7") square_after = {false, true, true, true, false, false};
    if (v == "ds8") square_after = {false, false, false, true, true, true};

    ModelSpec spec;
    spec.builder = "vanilla_cnn";
    spec.variant = v;
    spec.input = {32, 32, 3};
    const std::array<std::size_t, 4> width{3, 32, 64, 128};
    for (std::size_t l = 1; l <= 3; ++l) {
        spec.layers.push_back(conv(width[l - 1], width[l], 3, 2));
        spec.layers.push_back(bn(width[l]));
        spec.layers.push_back(act(Ewise::relu));
        if (square_after[l]) spec.layers.push_back(elesquare());
    }

    PoolLayer pool{PoolKind::gap};
    if (v == "gem2") pool = {PoolKind::gem, 2.0, 1};
    if (v.rfind("moment", 0) == 0) pool = {PoolKind::moment, 2.0, v.back() - '0'};
    spec.layers.push_back({pool});
    if (square_after[4]) spec.layers.push_back(elesquare());

    spec.layers.push_back({DropoutLayer{v == "original" ? 0.0 : dropout_rate}});
    spec.layers.push_back({FcLayer{width[3], num_classes}});

    if (square_after[5]) spec.layers.push_back(elesquare());
    if (v == "ds5minus") {
        spec.layers.push_back(elesquare());
        spec.layers.push_back(act(Ewise::negate));
    }
    if (v == "ds5splus") {
        spec.layers.push_back(elesquare());
        spec.layers.push_back({ScaleLayer{}});
    }
    if (v == "ds5sminus" || v == "ss") spec.layers.push_back({SoftminLayer{num_classes, true}});
    validate(spec);
    return spec;
}

std::string ModuleFlags::code() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!s.empty()) s += "+";
        s += name;
    };
    add(sp, "sp");
    add(ss, "ss");
    add(sex, "sex");
    add(sen, "sen");
    return s.empty() ? "plain" : s;
}

ModuleFlags ModuleFlags::parse(std::string_view text) {
    ModuleFlags f;
    if (text.empty() || text == "plain" || text == "none") return f;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find_first_of("+,", pos);
        if (end == std::string_view::npos) end = text.size();
        auto tok = text.substr(pos, end - pos);
        if (tok == "sp") f.sp = true;
        else if (tok == "ss") f.ss = true;
        else if (tok == "sex") f.sex = true;
        else if (tok == "sen") f.sen = true;
        else throw Error("flags: unknown module flag '" + std::string(tok) + "'");
        pos = end + 1;
    }
    return f;
}

BlockLayer square_encoding_wrap(BlockLayer block) {
    auto& main = block.main;
    auto it = std::find_if(main.rbegin(), main.rend(), [](const Layer& l) {
        auto* c = std::get_if<ConvLayer>(&l.kind);
        return c && c->kernel > 1;
    });
    if (it == main.rend()) throw Error("square_encoding_wrap: block has no spatial convolution in its main branch");
    auto pos = it.base() - 1;
    if (pos != main.begin()) {
        auto* a = std::get_if<ActivationLayer>(&std::prev(pos)->kind);
        if (a && a->kind == Ewise::square) throw Error("square_encoding_wrap: block is already square-encoded");
    }
    main.insert(pos, elesquare());
    return block;
}

ModelSpec build_mini_resnet(const MiniResnetOptions& o) {
    if (o.num_blocks == 0) throw Error("num_blocks must be positive");
    if (o.num_classes == 0) throw Error("num_classes must be positive");
    ModelSpec spec;
    spec.builder = "mini_resnet";
    spec.variant = o.flags.code();
    spec.input = {32, 32, 3};
    spec.layers.push_back(conv(3, 16, 3, 1));
    spec.layers.push_back(bn(16));
    spec.layers.push_back(act(Ewise::relu));

    std::size_t in = 16;
    const std::array<std::size_t, 3> widths{16, 32, 64};
    for (std::size_t stage = 0; stage < widths.size(); ++stage) {
        for (std::size_t b = 0; b < o.num_blocks; ++b) {
            const std::size_t out = widths[stage];
            const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
            BlockLayer block;
            block.main = {conv(in, out, 3, stride), bn(out), act(Ewise::relu), conv(out, out, 3, 1), bn(out)};
            if (o.flags.sex) block.main.push_back({ExcitationLayer{o.shared_alpha}});
            if (stride != 1 || in != out) block.shortcut = {conv(in, out, 1, stride), bn(out)};
            if (o.flags.sen) block = square_encoding_wrap(std::move(block));
            spec.layers.push_back({std::move(block)});
            in = out;
        }
    }
    spec.layers.push_back({PoolLayer{o.flags.sp ? PoolKind::square : PoolKind::gap}});
    spec.layers.push_back({DropoutLayer{o.flags.any() ? o.dropout_rate : 0.0}});
    spec.layers.push_back({FcLayer{in, o.num_classes}});
    if (o.flags.ss) spec.layers.push_back({SoftminLayer{o.num_classes, o.shared_softmin}});
    validate(spec);
    return spec;
}

ModelSpec build_two_layer(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, Ewise activation, Head head) {
    if (activation == Ewise::negate) throw Error("two_layer: activation must be relu, square or relu_square");
    if (in_dim == 0 || hidden == 0 || out_dim == 0) throw Error("two_layer: dimensions must be positive");
    ModelSpec spec;
    spec.builder = "two_layer";
    spec.variant = std::string(to_string(activation));
    spec.input = {in_dim};
    spec.layers = {{FcLayer{in_dim, hidden}}, act(activation), {FcLayer{hidden, out_dim}}};
    spec.head = head;
    validate(spec);
    return spec;
}

}  // namespace deepsquare
