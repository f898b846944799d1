#include "deepsquare/model_json.hpp"

#include <algorithm>

namespace deepsquare {

using nlohmann::json;

void require_known_keys(const json& obj, std::initializer_list<std::string_view> allowed, std::string_view where) {
    if (!obj.is_object()) throw Error(std::string(where) + ": expected a JSON object");
    for (const auto& [key, _] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw Error(std::string(where) + ": unknown key '" + key + "'");
}

namespace {

json layers_to_json(const std::vector<Layer>& layers);

json layer_to_json(const Layer& layer) {
    json j;
    if (auto* c = std::get_if<ConvLayer>(&layer.kind)) {
        j = {{"type", "conv"}, {"in", c->in}, {"out", c->out}, {"kernel", c->kernel}, {"stride", c->stride}, {"pad", c->pad}};
    } else if (auto* b = std::get_if<BatchNormLayer>(&layer.kind)) {
        j = {{"type", "batchnorm"}, {"channels", b->channels}};
    } else if (auto* a = std::get_if<ActivationLayer>(&layer.kind)) {
        j = {{"type", a->kind == Ewise::square ? "elesquare" : std::string(to_string(a->kind))}};
    } else if (auto* p = std::get_if<PoolLayer>(&layer.kind)) {
        switch (p->kind) {
            case PoolKind::gap: j = {{"type", "pool"}, {"kind", "gap"}}; break;
            case PoolKind::square: j = {{"type", "pool"}, {"kind", "square"}}; break;
            case PoolKind::gem: j = {{"type", "pool"}, {"kind", "gem"}, {"p", p->p}}; break;
            case PoolKind::moment: j = {{"type", "pool"}, {"kind", "moment"}, {"order", p->order}}; break;
        }
    } else if (auto* f = std::get_if<FcLayer>(&layer.kind)) {
        j = {{"type", "fc"}, {"in", f->in}, {"out", f->out}};
    } else if (auto* d = std::get_if<DropoutLayer>(&layer.kind)) {
        j = {{"type", "dropout"}, {"rate", d->rate}};
    } else if (std::holds_alternative<ScaleLayer>(layer.kind)) {
        j = {{"type", "scale"}};
    } else if (auto* s = std::get_if<SoftminLayer>(&layer.kind)) {
        j = {{"type", "softmin"}, {"channels", s->channels}, {"shared", s->shared}};
    } else if (auto* e = std::get_if<ExcitationLayer>(&layer.kind)) {
        j = {{"type", "excitation"}, {"shared_alpha", e->shared_alpha}};
    } else if (auto* blk = std::get_if<BlockLayer>(&layer.kind)) {
        j = {{"type", "block"}, {"main", layers_to_json(blk->main)}, {"shortcut", layers_to_json(blk->shortcut)}};
    }
    return j;
}

json layers_to_json(const std::vector<Layer>& layers) {
    json arr = json::array();
    for (const auto& l : layers) arr.push_back(layer_to_json(l));
    return arr;
}

std::vector<Layer> layers_from_json(const json& arr);

template <class T>
T get(const json& j, const char* key, const char* where) {
    if (!j.contains(key)) throw Error(std::string(where) + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(std::string(where) + ": key '" + key + "' has the wrong type");
    }
}

Layer layer_from_json(const json& j) {
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) throw Error("layer: missing 'type'");
    const auto type = j["type"].get<std::string>();
    if (type == "conv") {
        require_known_keys(j, {"type", "in", "out", "kernel", "stride", "pad"}, "conv layer");
        return {ConvLayer{get<std::size_t>(j, "in", "conv"), get<std::size_t>(j, "out", "conv"),
                          get<std::size_t>(j, "kernel", "conv"), get<std::size_t>(j, "stride", "conv"),
                          get<std::size_t>(j, "pad", "conv")}};
    }
    if (type == "batchnorm") {
        require_known_keys(j, {"type", "channels"}, "batchnorm layer");
        return {BatchNormLayer{get<std::size_t>(j, "channels", "batchnorm")}};
    }
    if (type == "relu" || type == "relu_square" || type == "negate" || type == "elesquare") {
        require_known_keys(j, {"type"}, "activation layer");
        return {ActivationLayer{type == "elesquare" ? Ewise::square : ewise_from_string(type)}};
    }
    if (type == "pool") {
        require_known_keys(j, {"type", "kind", "p", "order"}, "pool layer");
        const auto kind = get<std::string>(j, "kind", "pool");
        if (kind == "gap") return {PoolLayer{PoolKind::gap}};
        if (kind == "square") return {PoolLayer{PoolKind::square}};
        if (kind == "gem") return {PoolLayer{PoolKind::gem, get<double>(j, "p", "pool"), 1}};
        if (kind == "moment") return {PoolLayer{PoolKind::moment, 2.0, get<int>(j, "order", "pool")}};
        throw Error("pool layer: unknown kind '" + kind + "'");
    }
    if (type == "fc") {
        require_known_keys(j, {"type", "in", "out"}, "fc layer");
        return {FcLayer{get<std::size_t>(j, "in", "fc"), get<std::size_t>(j, "out", "fc")}};
    }
    if (type == "dropout") {
        require_known_keys(j, {"type", "rate"}, "dropout layer");
        return {DropoutLayer{get<double>(j, "rate", "dropout")}};
    }
    if (type == "scale") {
        require_known_keys(j, {"type"}, "scale layer");
        return {ScaleLayer{}};
    }
    if (type == "softmin") {
        require_known_keys(j, {"type", "channels", "shared"}, "softmin layer");
        return {SoftminLayer{get<std::size_t>(j, "channels", "softmin"), j.value("shared", true)}};
    }
    if (type == "excitation") {
        require_known_keys(j, {"type", "shared_alpha"}, "excitation layer");
        return {ExcitationLayer{j.value("shared_alpha", false)}};
    }
    if (type == "block") {
        require_known_keys(j, {"type", "main", "shortcut"}, "block layer");
        BlockLayer b;
        b.main = layers_from_json(j.at("main"));
        if (j.contains("shortcut")) b.shortcut = layers_from_json(j.at("shortcut"));
        return {std::move(b)};
    }
    throw Error("layer: unknown type '" + type + "'");
}

std::vector<Layer> layers_from_json(const json& arr) {
    if (!arr.is_array()) throw Error("layers: expected an array");
    std::vector<Layer> out;
    for (const auto& j : arr) out.push_back(layer_from_json(j));
    return out;
}

}  // namespace

json to_json(const ModelSpec& spec) {
    return {{"builder", spec.builder},
            {"variant", spec.variant},
            {"input", spec.input},
            {"head", spec.head == Head::mse ? "mse" : "softmax_ce"},
            {"layers", layers_to_json(spec.layers)}};
}

ModelSpec model_spec_from_json(const json& doc) {
    require_known_keys(doc, {"builder", "variant", "input", "head", "layers"}, "model spec");
    ModelSpec spec;
    spec.builder = doc.value("builder", std::string("custom"));
    spec.variant = doc.value("variant", std::string("original"));
    spec.input = get<Shape>(doc, "input", "model spec");
    const auto head = doc.value("head", std::string("softmax_ce"));
    if (head == "softmax_ce") spec.head = Head::softmax_ce;
    else if (head == "mse") spec.head = Head::mse;
    else throw Error("model spec: unknown head '" + head + "'");
    spec.layers = layers_from_json(doc.at("layers"));
    validate(spec);
    return spec;
}

std::string model_spec_to_string(const ModelSpec& spec) {
    return to_json(spec).dump(2);
}

ModelSpec model_spec_from_string(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(std::string("model spec: malformed JSON: ") + e.what());
    }
    return model_spec_from_json(doc);
}

}  // namespace deepsquare
