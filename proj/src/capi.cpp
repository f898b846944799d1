#include "deepsquare/deepsquare.h"

#include <cstring>
#include <new>
#include <string>

#include "deepsquare/experiments.hpp"
#include "deepsquare/spiral.hpp"
#include "deepsquare/square_modules.hpp"

using namespace deepsquare;
using nlohmann::json;

struct ds_tensor {
    Tensor value;
};

struct ds_model {
    Network net;
};

namespace {

thread_local std::string g_last_error;

ds_status fail(ds_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

template <class F>
ds_status guarded(F&& body) {
    g_last_error.clear();
    try {
        return body();
    } catch (const IoError& e) {
        return fail(DS_ERR_IO, e.what());
    } catch (const Error& e) {
        return fail(DS_ERR_INVALID_ARGUMENT, e.what());
    } catch (const json::exception& e) {
        return fail(DS_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(DS_ERR_IO, e.what());
    } catch (const std::bad_alloc&) {
        return fail(DS_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(DS_ERR_INTERNAL, e.what());
    }
}

char* copy_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void require(bool cond, const char* what) {
    if (!cond) throw Error(what);
}

ds_status emit(Tensor value, ds_tensor** out) {
    *out = new ds_tensor{std::move(value)};
    return DS_OK;
}

template <class F>
ds_status unary_module(const ds_tensor* in, ds_tensor** out, F&& f) {
    return guarded([&] {
        require(in && out, "null argument");
        Tape tape;
        Var x = tape.constant(in->value);
        return emit(tape.value(f(tape, x)), out);
    });
}

}  // namespace

extern "C" {

const char* ds_version(void) {
    static const std::string v = version_string();
    return v.c_str();
}

const char* ds_last_error(void) { return g_last_error.c_str(); }

ds_status ds_tensor_create(const size_t* shape, size_t rank, const double* data, ds_tensor** out) {
    return guarded([&] {
        require(out && (shape || rank == 0), "null argument");
        require(rank > 0, "tensor rank must be positive");
        Shape s(shape, shape + rank);
        Tensor t(s);
        if (data) std::copy(data, data + t.size(), t.data().begin());
        return emit(std::move(t), out);
    });
}

void ds_tensor_free(ds_tensor* t) { delete t; }

size_t ds_tensor_rank(const ds_tensor* t) { return t ? t->value.rank() : 0; }

ds_status ds_tensor_shape(const ds_tensor* t, size_t* shape, size_t capacity) {
    return guarded([&] {
        require(t && shape, "null argument");
        require(capacity >= t->value.rank(), "shape buffer too small");
        std::copy(t->value.shape().begin(), t->value.shape().end(), shape);
        return DS_OK;
    });
}

size_t ds_tensor_size(const ds_tensor* t) { return t ? t->value.size() : 0; }

const double* ds_tensor_data(const ds_tensor* t) { return t ? t->value.data().data() : nullptr; }

ds_status ds_square_pool(const ds_tensor* feature, ds_tensor** out) {
    return unary_module(feature, out, [](Tape&, Var x) { return square_pool(x); });
}

ds_status ds_moment_pool(const ds_tensor* feature, int order, ds_tensor** out) {
    return unary_module(feature, out, [order](Tape&, Var x) { return moment_pool(x, order); });
}

ds_status ds_gem_pool(const ds_tensor* feature, double p, ds_tensor** out) {
    return unary_module(feature, out, [p](Tape&, Var x) { return gem_pool(x, p); });
}

ds_status ds_square_softmin(const ds_tensor* x, const ds_tensor* raw, ds_tensor** out) {
    return guarded([&] {
        require(x && raw && out, "null argument");
        Tape tape;
        return emit(tape.value(square_softmin(tape.constant(x->value), tape.constant(raw->value))), out);
    });
}

ds_status ds_scale_proportion(const ds_tensor* energy, double alpha, ds_tensor** out) {
    return unary_module(energy, out, [alpha](Tape& tape, Var x) {
        return scale_proportion(x, tape.constant(Tensor::scalar(alpha)));
    });
}

ds_status ds_square_excitation(const ds_tensor* feature, double alpha, ds_tensor** out) {
    return unary_module(feature, out, [alpha](Tape& tape, Var x) {
        return square_excitation(x, tape.constant(Tensor::scalar(alpha)));
    });
}

ds_status ds_model_build(const char* model_json, uint64_t init_seed, ds_model** out) {
    return guarded([&] {
        require(model_json && out, "null argument");
        auto config = model_config_from_json(json::parse(model_json));
        *out = new ds_model{Network(build_model(config, TrainConfig{}), init_seed)};
        return DS_OK;
    });
}

ds_status ds_model_load(const char* network_json, ds_model** out) {
    return guarded([&] {
        require(network_json && out, "null argument");
        *out = new ds_model{network_from_json(json::parse(network_json))};
        return DS_OK;
    });
}

ds_status ds_model_to_json(const ds_model* model, char** out) {
    return guarded([&] {
        require(model && out, "null argument");
        *out = copy_string(network_to_json(model->net).dump());
        return DS_OK;
    });
}

ds_status ds_model_parameter_count(const ds_model* model, size_t* out) {
    return guarded([&] {
        require(model && out, "null argument");
        *out = model->net.parameter_count();
        return DS_OK;
    });
}

ds_status ds_model_forward(ds_model* model, const ds_tensor* input, ds_tensor** out) {
    return guarded([&] {
        require(model && input && out, "null argument");
        Tape tape;
        Var y = model->net.forward(tape, input->value, Mode::inference, nullptr);
        return emit(tape.value(y), out);
    });
}

void ds_model_free(ds_model* model) { delete model; }

ds_status ds_boundary_coefficients(const double w[4], const double b[2], double* a, double* b_out, double* c,
                                   const char** type) {
    return guarded([&] {
        require(w && b && a && b_out && c, "null argument");
        BoundaryProblem p{{w[0], w[1], w[2], w[3]}, {b[0], b[1]}, Ewise::square};
        auto k = boundary_coefficients(p);
        *a = k.a;
        *b_out = k.b;
        *c = k.c;
        if (type) *type = to_string(k.type).data();
        return DS_OK;
    });
}

ds_status ds_run_command(const char* command, const char* options_json, char** summary_json, char** summary_path) {
    if (summary_json) *summary_json = nullptr;
    if (summary_path) *summary_path = nullptr;
    return guarded([&] {
        require(command != nullptr, "null command");
        json options = options_json && *options_json ? json::parse(options_json) : json::object();
        require(options.is_object(), "options must be a JSON object");
        auto outcome = run_command(command, options);
        if (summary_json) *summary_json = copy_string(outcome.summary.dump(2));
        if (summary_path) *summary_path = copy_string(outcome.summary_path.string());
        if (!outcome.ok) {
            g_last_error = command + std::string(": validation failed");
            return DS_ERR_CHECK_FAILED;
        }
        return DS_OK;
    });
}

void ds_string_free(char* s) { delete[] s; }

ds_status ds_set_fault_injection(const char* const* ops, size_t count) {
    return guarded([&] {
        require(ops || count == 0, "null argument");
        std::vector<std::string> names;
        for (size_t i = 0; i < count; ++i) {
            require(ops[i] != nullptr, "null op name");
            names.emplace_back(ops[i]);
        }
        testing::set_corrupted_ops(std::move(names));
        return DS_OK;
    });
}

}  // extern "C"
