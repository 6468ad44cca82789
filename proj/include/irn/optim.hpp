#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "irn/errors.hpp"
#include "irn/tensor.hpp"

namespace irn {

// A named trainable tensor plus its Adam moment buffers.
template <typename T>
struct ParameterT {
    std::string name;
    TensorT<T> value;
    std::vector<T> m, v;  // first/second moment estimates
    int64_t step = 0;

    ParameterT() = default;
    ParameterT(std::string n, TensorT<T> t) : name(std::move(n)), value(std::move(t)) {
        value.set_requires_grad(true);
        m.assign(value.numel(), T(0));
        v.assign(value.numel(), T(0));
    }
};

using Parameter = ParameterT<float>;

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// ---- little-endian checkpoint primitives ----

namespace ckpt {

inline void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_f32(std::ostream& os, float v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline float read_f32(std::istream& is) {
    float v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

// Named, shape-checked parameter blob. Loading requires the exact parameter
// order and shapes of the receiving module, so checkpoints roundtrip
// bit-exactly or fail loudly.
template <typename T>
void save_params(std::ostream& os, const std::vector<ParameterT<T>*>& params) {
    write_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto* p : params) {
        write_u32(os, static_cast<uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_u32(os, static_cast<uint32_t>(p->value.shape().size()));
        for (int d : p->value.shape()) write_u32(os, static_cast<uint32_t>(d));
        for (size_t i = 0; i < p->value.numel(); ++i)
            write_f32(os, static_cast<float>(p->value.data()[i]));
    }
}

template <typename T>
void load_params(std::istream& is, const std::vector<ParameterT<T>*>& params) {
    const uint32_t count = read_u32(is);
    if (!is || count != params.size())
        throw FormatError("checkpoint: parameter count mismatch (found " + std::to_string(count) +
                          ", module has " + std::to_string(params.size()) + ")");
    for (auto* p : params) {
        const uint32_t name_len = read_u32(is);
        if (name_len > 4096) throw FormatError("checkpoint: implausible parameter name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (name != p->name)
            throw FormatError("checkpoint: expected parameter '" + p->name + "', found '" + name +
                              "'");
        const uint32_t rank = read_u32(is);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(read_u32(is));
        if (shape != p->value.shape())
            throw FormatError("checkpoint: shape mismatch for parameter '" + name + "'");
        for (size_t i = 0; i < p->value.numel(); ++i)
            p->value.data()[i] = static_cast<T>(read_f32(is));
        if (!is) throw FormatError("checkpoint: truncated data for parameter '" + name + "'");
    }
}

}  // namespace ckpt

// Standard Adam with bias correction; clears gradients afterwards.
template <typename T>
void adam_step(const std::vector<ParameterT<T>*>& params, const AdamConfig& cfg) {
    for (ParameterT<T>* p : params) {
        p->step += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
        T* w = p->value.data();
        T* g = p->value.grad();
        const size_t n = p->value.numel();
        for (size_t i = 0; i < n; ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * gi * gi;
            p->m[i] = static_cast<T>(mi);
            p->v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            w[i] = static_cast<T>(w[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
        p->value.zero_grad();
    }
}

}  // namespace irn
