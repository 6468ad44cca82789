#pragma once

// Dense CHW tensors with reverse-mode autodiff on a define-by-run tape.
// The tape is rebuilt on every forward pass: each op that has a
// grad-requiring input stores its parents plus a pullback closure on the
// result node, and backward() walks the graph once in reverse topological
// order, then releases it. Scalar type is a template parameter; float is
// the working precision, double instantiations exist for numeric checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace irn {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::string r = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
        n *= static_cast<size_t>(d);
    }
    return n;
}

// Deterministic RNG: all randomness in the project flows through this so a
// seed pins every run bit-exactly. Normal deviates use Box-Muller instead of
// std::normal_distribution, whose algorithm is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(static_cast<std::mt19937::result_type>(seed)) {}

    uint32_t next_u32() { return gen_(); }

    // uniform in [0,1)
    double uniform() { return (next_u32() >> 8) * (1.0 / 16777216.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) {  // [0, n)
        return static_cast<int>(uniform() * n) % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-12) u1 = 1e-12;
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * 3.14159265358979323846 * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::mt19937 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Thread-local switch for tape recording; inference paths wrap themselves in
// a NoGradGuard so ops on parameters do not accumulate graph nodes.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated on demand, same length as data
    bool requires_grad = false;
    bool leaf = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> pullback;  // pushes this->grad into parents

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(Shape s) {
        TensorT t;
        t.n_ = std::make_shared<TensorNode<T>>();
        t.n_->shape = std::move(s);
        t.n_->data.assign(shape_numel(t.n_->shape), T(0));
        return t;
    }

    static TensorT full(Shape s, T v) {
        TensorT t = zeros(std::move(s));
        std::fill(t.n_->data.begin(), t.n_->data.end(), v);
        return t;
    }

    static TensorT from_data(Shape s, std::vector<T> d) {
        if (shape_numel(s) != d.size())
            throw std::invalid_argument("data length does not match shape " + shape_str(s));
        TensorT t;
        t.n_ = std::make_shared<TensorNode<T>>();
        t.n_->shape = std::move(s);
        t.n_->data = std::move(d);
        return t;
    }

    static TensorT scalar(T v) { return full({1}, v); }

    static TensorT randn(Shape s, Rng& rng, T stddev = T(1)) {
        TensorT t = zeros(std::move(s));
        for (auto& x : t.n_->data) x = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    int dim(int i) const { return node().shape.at(static_cast<size_t>(i)); }
    size_t numel() const { return node().data.size(); }

    T* data() { return node().data.data(); }
    const T* data() const { return node().data.data(); }
    std::vector<T>& vec() { return node().data; }
    const std::vector<T>& vec() const { return node().data; }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
        return node().data[0];
    }

    bool requires_grad() const { return node().requires_grad; }

    // Marks this tensor as a gradient leaf (a trainable parameter or a test
    // probe). Only leaves may be flagged directly; interior nodes inherit.
    void set_requires_grad(bool b) {
        node().requires_grad = b;
        node().leaf = b;
        if (b) node().ensure_grad();
    }

    T* grad() { return node().grad.data(); }
    const T* grad() const { return node().grad.data(); }

    void zero_grad() {
        if (!node().grad.empty()) std::fill(node().grad.begin(), node().grad.end(), T(0));
    }

    void assert_finite(const char* what) const {
        for (T v : node().data)
            if (!std::isfinite(static_cast<double>(v)))
                throw std::runtime_error(std::string("non-finite value in ") + what);
    }

    TensorT clone() const {
        TensorT t;
        t.n_ = std::make_shared<TensorNode<T>>();
        t.n_->shape = node().shape;
        t.n_->data = node().data;
        return t;
    }

    // Same data, detached from the tape.
    TensorT detach() const { return clone(); }

    std::shared_ptr<TensorNode<T>>& handle() { return n_; }
    const std::shared_ptr<TensorNode<T>>& handle() const { return n_; }
    TensorNode<T>& node() {
        if (!n_) throw std::logic_error("use of undefined tensor");
        return *n_;
    }
    const TensorNode<T>& node() const {
        if (!n_) throw std::logic_error("use of undefined tensor");
        return *n_;
    }

private:
    std::shared_ptr<TensorNode<T>> n_;
};

using Tensor = TensorT<float>;

namespace detail {

template <typename T>
bool track(std::initializer_list<const TensorT<T>*> inputs) {
    if (!grad_mode_flag()) return false;
    for (auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T, typename Fn>
void attach(TensorT<T>& out, std::vector<TensorT<T>> parents, Fn&& pullback) {
    auto& n = out.node();
    n.requires_grad = true;
    n.parents.reserve(parents.size());
    for (auto& p : parents) n.parents.push_back(p.handle());
    n.pullback = std::forward<Fn>(pullback);
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise ----

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::track<T>({&a, &b})) {
        auto pan = a.handle();
        auto pbn = b.handle();
        detail::attach(out, {a, b}, [pan, pbn](TensorNode<T>& self) {
            pan->ensure_grad();
            pbn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                pan->grad[i] += self.grad[i];
                pbn->grad[i] += self.grad[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) po[i] = pa[i] - pb[i];
    if (detail::track<T>({&a, &b})) {
        auto pan = a.handle();
        auto pbn = b.handle();
        detail::attach(out, {a, b}, [pan, pbn](TensorNode<T>& self) {
            pan->ensure_grad();
            pbn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                pan->grad[i] += self.grad[i];
                pbn->grad[i] -= self.grad[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) po[i] = pa[i] * pb[i];
    if (detail::track<T>({&a, &b})) {
        auto pan = a.handle();
        auto pbn = b.handle();
        detail::attach(out, {a, b}, [pan, pbn](TensorNode<T>& self) {
            pan->ensure_grad();
            pbn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                pan->grad[i] += self.grad[i] * pbn->data[i];
                pbn->grad[i] += self.grad[i] * pan->data[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) po[i] = -pa[i];
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pan->grad[i] -= self.grad[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> exp(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) po[i] = std::exp(pa[i]);
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pan->grad[i] += self.grad[i] * self.data[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> abs(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) po[i] = std::fabs(pa[i]);
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pan->grad[i] += pan->data[i] < T(0) ? -self.grad[i] : self.grad[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) po[i] = pa[i] * s;
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, s](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pan->grad[i] += self.grad[i] * s;
        });
    }
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) po[i] = pa[i] + s;
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pan->grad[i] += self.grad[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& a, T slope) {
    if (!(slope > T(0) && slope < T(1)))
        throw std::invalid_argument("leaky_relu: slope must be in (0,1)");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : slope * pa[i];
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, slope](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pan->grad[i] += pan->data[i] > T(0) ? self.grad[i] : slope * self.grad[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) {
        T x = pa[i];
        if (x >= T(0)) {
            po[i] = T(1) / (T(1) + std::exp(-x));
        } else {
            T e = std::exp(x);
            po[i] = e / (T(1) + e);
        }
    }
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                T s = self.data[i];
                pan->grad[i] += self.grad[i] * s * (T(1) - s);
            }
        });
    }
    return out;
}

// Inverse of sigmoid with the input clamped into [eps, 1-eps]; gradient is
// zero in the clamped region.
template <typename T>
TensorT<T> logit_clamped(const TensorT<T>& a, T eps) {
    if (!(eps > T(0) && eps < T(0.5)))
        throw std::invalid_argument("logit_clamped: eps must be in (0, 0.5)");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) {
        T x = std::min(std::max(pa[i], eps), T(1) - eps);
        po[i] = std::log(x / (T(1) - x));
    }
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, eps](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                T x = pan->data[i];
                if (x > eps && x < T(1) - eps) pan->grad[i] += self.grad[i] / (x * (T(1) - x));
            }
        });
    }
    return out;
}

// ---- reductions ----

template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& a) {
    if (a.numel() == 0) throw std::invalid_argument("reduce: empty tensor");
    double acc = 0.0;
    const T* pa = a.data();
    for (size_t i = 0, n = a.numel(); i < n; ++i) acc += static_cast<double>(pa[i]);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan](TensorNode<T>& self) {
            pan->ensure_grad();
            T g = self.grad[0];
            for (size_t i = 0; i < pan->grad.size(); ++i) pan->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& a) {
    if (a.numel() == 0) throw std::invalid_argument("reduce: empty tensor");
    double acc = 0.0;
    const T* pa = a.data();
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(pa[i]);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, n](TensorNode<T>& self) {
            pan->ensure_grad();
            T g = self.grad[0] / static_cast<T>(n);
            for (size_t i = 0; i < pan->grad.size(); ++i) pan->grad[i] += g;
        });
    }
    return out;
}

// ---- shape / channel ops (CHW) ----

namespace detail {
template <typename T>
void check_chw(const TensorT<T>& t, const char* op) {
    if (t.shape().size() != 3)
        throw std::invalid_argument(std::string(op) + ": expected (C,H,W) tensor, got " +
                                    shape_str(t.shape()));
}
}  // namespace detail

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& a, int c0, int c1) {
    detail::check_chw(a, "slice_channels");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (c0 < 0 || c1 > C || c0 >= c1)
        throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for C=" + std::to_string(C));
    const size_t plane = static_cast<size_t>(H) * W;
    TensorT<T> out = TensorT<T>::zeros({c1 - c0, H, W});
    std::copy(a.data() + c0 * plane, a.data() + c1 * plane, out.data());
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, c0, plane](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pan->grad[c0 * plane + i] += self.grad[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty list");
    for (const auto& p : parts) detail::check_chw(p, "concat_channels");
    const int H = parts[0].dim(1), W = parts[0].dim(2);
    int C = 0;
    for (const auto& p : parts) {
        if (p.dim(1) != H || p.dim(2) != W)
            throw std::invalid_argument("concat_channels: spatial extents differ");
        C += p.dim(0);
    }
    TensorT<T> out = TensorT<T>::zeros({C, H, W});
    T* po = out.data();
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data(), p.data() + p.numel(), po + off);
        off += p.numel();
    }
    bool needs = false;
    if (grad_mode_flag())
        for (const auto& p : parts)
            if (p.requires_grad()) needs = true;
    if (needs) {
        std::vector<std::shared_ptr<TensorNode<T>>> handles;
        for (const auto& p : parts) handles.push_back(p.handle());
        detail::attach(out, parts, [handles](TensorNode<T>& self) {
            size_t off2 = 0;
            for (auto& h : handles) {
                h->ensure_grad();
                for (size_t i = 0; i < h->grad.size(); ++i) h->grad[i] += self.grad[off2 + i];
                off2 += h->grad.size();
            }
        });
    }
    return out;
}

// Per-pixel mean across channels, result has a single channel.
template <typename T>
TensorT<T> channel_mean(const TensorT<T>& a) {
    detail::check_chw(a, "channel_mean");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    const size_t plane = static_cast<size_t>(H) * W;
    TensorT<T> out = TensorT<T>::zeros({1, H, W});
    const T* pa = a.data();
    T* po = out.data();
    for (int c = 0; c < C; ++c)
        for (size_t i = 0; i < plane; ++i) po[i] += pa[c * plane + i];
    const T inv = T(1) / static_cast<T>(C);
    for (size_t i = 0; i < plane; ++i) po[i] *= inv;
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, C, plane, inv](TensorNode<T>& self) {
            pan->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (size_t i = 0; i < plane; ++i) pan->grad[c * plane + i] += self.grad[i] * inv;
        });
    }
    return out;
}

template <typename T>
TensorT<T> pixel_unshuffle(const TensorT<T>& a, int r) {
    detail::check_chw(a, "pixel_unshuffle");
    if (r < 1) throw std::invalid_argument("pixel_unshuffle: r must be >= 1");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (H % r != 0 || W % r != 0)
        throw std::invalid_argument("pixel_unshuffle: extents " + shape_str(a.shape()) +
                                    " not divisible by r=" + std::to_string(r));
    const int Ho = H / r, Wo = W / r;
    TensorT<T> out = TensorT<T>::zeros({C * r * r, Ho, Wo});
    const T* pa = a.data();
    T* po = out.data();
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                const size_t co = (static_cast<size_t>(c) * r * r + dy * r + dx) * Ho * Wo;
                for (int y = 0; y < Ho; ++y)
                    for (int x = 0; x < Wo; ++x)
                        po[co + static_cast<size_t>(y) * Wo + x] =
                            pa[(static_cast<size_t>(c) * H + (y * r + dy)) * W + (x * r + dx)];
            }
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, C, H, W, r, Ho, Wo](TensorNode<T>& self) {
            pan->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        const size_t co = (static_cast<size_t>(c) * r * r + dy * r + dx) * Ho * Wo;
                        for (int y = 0; y < Ho; ++y)
                            for (int x = 0; x < Wo; ++x)
                                pan->grad[(static_cast<size_t>(c) * H + (y * r + dy)) * W +
                                          (x * r + dx)] +=
                                    self.grad[co + static_cast<size_t>(y) * Wo + x];
                    }
        });
    }
    return out;
}

template <typename T>
TensorT<T> pixel_shuffle(const TensorT<T>& a, int r) {
    detail::check_chw(a, "pixel_shuffle");
    if (r < 1) throw std::invalid_argument("pixel_shuffle: r must be >= 1");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (C % (r * r) != 0)
        throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
    const int Co = C / (r * r), Ho = H * r, Wo = W * r;
    TensorT<T> out = TensorT<T>::zeros({Co, Ho, Wo});
    const T* pa = a.data();
    T* po = out.data();
    for (int c = 0; c < Co; ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                const size_t ci = (static_cast<size_t>(c) * r * r + dy * r + dx) * H * W;
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        po[(static_cast<size_t>(c) * Ho + (y * r + dy)) * Wo + (x * r + dx)] =
                            pa[ci + static_cast<size_t>(y) * W + x];
            }
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, Co, H, W, r, Ho, Wo](TensorNode<T>& self) {
            pan->ensure_grad();
            for (int c = 0; c < Co; ++c)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        const size_t ci = (static_cast<size_t>(c) * r * r + dy * r + dx) * H * W;
                        for (int y = 0; y < H; ++y)
                            for (int x = 0; x < W; ++x)
                                pan->grad[ci + static_cast<size_t>(y) * W + x] +=
                                    self.grad[(static_cast<size_t>(c) * Ho + (y * r + dy)) * Wo +
                                              (x * r + dx)];
                    }
        });
    }
    return out;
}

// ---- pooling / resampling ----

template <typename T>
TensorT<T> maxpool2(const TensorT<T>& a) {
    detail::check_chw(a, "maxpool2");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("maxpool2: extents must be even, got " + shape_str(a.shape()));
    const int Ho = H / 2, Wo = W / 2;
    TensorT<T> out = TensorT<T>::zeros({C, Ho, Wo});
    std::vector<int64_t> argmax(out.numel());
    const T* pa = a.data();
    T* po = out.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y)
            for (int x = 0; x < Wo; ++x) {
                // first occurrence in row-major order wins ties
                int64_t base = (static_cast<int64_t>(c) * H + 2 * y) * W + 2 * x;
                int64_t best = base;
                T bv = pa[base];
                const int64_t cand[3] = {base + 1, base + W, base + W + 1};
                for (int64_t idx : cand)
                    if (pa[idx] > bv) {
                        bv = pa[idx];
                        best = idx;
                    }
                const size_t o = (static_cast<size_t>(c) * Ho + y) * Wo + x;
                po[o] = bv;
                argmax[o] = best;
            }
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, argmax = std::move(argmax)](TensorNode<T>& self) {
            pan->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pan->grad[argmax[i]] += self.grad[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> upsample_nearest2(const TensorT<T>& a) {
    detail::check_chw(a, "upsample_nearest2");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    const int Ho = H * 2, Wo = W * 2;
    TensorT<T> out = TensorT<T>::zeros({C, Ho, Wo});
    const T* pa = a.data();
    T* po = out.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y) {
            const T* row = pa + (static_cast<size_t>(c) * H + y) * W;
            T* o0 = po + (static_cast<size_t>(c) * Ho + 2 * y) * Wo;
            T* o1 = o0 + Wo;
            for (int x = 0; x < W; ++x) {
                o0[2 * x] = o0[2 * x + 1] = row[x];
                o1[2 * x] = o1[2 * x + 1] = row[x];
            }
        }
    if (detail::track<T>({&a})) {
        auto pan = a.handle();
        detail::attach(out, {a}, [pan, C, H, W, Ho, Wo](TensorNode<T>& self) {
            pan->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y) {
                    T* g = pan->grad.data() + (static_cast<size_t>(c) * H + y) * W;
                    const T* s0 = self.grad.data() + (static_cast<size_t>(c) * Ho + 2 * y) * Wo;
                    const T* s1 = s0 + Wo;
                    for (int x = 0; x < W; ++x)
                        g[x] += s0[2 * x] + s0[2 * x + 1] + s1[2 * x] + s1[2 * x + 1];
                }
        });
    }
    return out;
}

// ---- convolution ----

namespace detail {

// copies (C,H,W) planes into (C,H+2,W+2) zero-padded scratch
template <typename T>
void pad1(const T* src, T* dst, int C, int H, int W) {
    const int Wp = W + 2;
    std::fill(dst, dst + static_cast<size_t>(C) * (H + 2) * Wp, T(0));
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            std::copy(src + (static_cast<size_t>(c) * H + y) * W,
                      src + (static_cast<size_t>(c) * H + y) * W + W,
                      dst + (static_cast<size_t>(c) * (H + 2) + y + 1) * Wp + 1);
}

// out[co] += sum_ci 9-tap correlation of padded in[ci]; rows are full width
// and branch-free so the inner loop vectorizes
template <typename T>
void conv3_accumulate(const T* pad, const T* wt, T* out, int Cin, int co, int H, int W) {
    const int Wp = W + 2;
    T* op = out + static_cast<size_t>(co) * H * W;
    for (int ci = 0; ci < Cin; ++ci) {
        const T* pp = pad + static_cast<size_t>(ci) * (H + 2) * Wp;
        const T* wp = wt + (static_cast<size_t>(co) * Cin + ci) * 9;
        const T w0 = wp[0], w1 = wp[1], w2 = wp[2];
        const T w3 = wp[3], w4 = wp[4], w5 = wp[5];
        const T w6 = wp[6], w7 = wp[7], w8 = wp[8];
        for (int y = 0; y < H; ++y) {
            const T* r0 = pp + static_cast<size_t>(y) * Wp;
            const T* r1 = r0 + Wp;
            const T* r2 = r1 + Wp;
            T* orow = op + static_cast<size_t>(y) * W;
            for (int x = 0; x < W; ++x)
                orow[x] += w0 * r0[x] + w1 * r0[x + 1] + w2 * r0[x + 2] + w3 * r1[x] +
                           w4 * r1[x + 1] + w5 * r1[x + 2] + w6 * r2[x] + w7 * r2[x + 1] +
                           w8 * r2[x + 2];
        }
    }
}

// wg[co][ci] taps += correlation of out-grad plane with padded input plane
template <typename T>
void conv3_weight_grad(const T* pad, const T* og, T* wg, int Cin, int co, int H, int W) {
    const int Wp = W + 2;
    const T* gp = og + static_cast<size_t>(co) * H * W;
    for (int ci = 0; ci < Cin; ++ci) {
        const T* pp = pad + static_cast<size_t>(ci) * (H + 2) * Wp;
        T* w = wg + (static_cast<size_t>(co) * Cin + ci) * 9;
        for (int t = 0; t < 9; ++t) {
            const int ky = t / 3, kx = t % 3;
            T lanes[8] = {};
            for (int y = 0; y < H; ++y) {
                const T* irow = pp + (static_cast<size_t>(y) + ky) * Wp + kx;
                const T* grow = gp + static_cast<size_t>(y) * W;
                int x = 0;
                for (; x + 8 <= W; x += 8)
                    for (int l = 0; l < 8; ++l) lanes[l] += grow[x + l] * irow[x + l];
                for (; x < W; ++x) lanes[x & 7] += grow[x] * irow[x];
            }
            w[t] += ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                    ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
        }
    }
}

}  // namespace detail

// Same-size cross-correlation with square odd kernels and zero padding.
// The 3x3 case runs through branch-free padded-row kernels; summation order
// is fixed in all paths, so results are identical regardless of threading.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int padding) {
    detail::check_chw(input, "conv2d");
    if (weight.shape().size() != 4)
        throw std::invalid_argument("conv2d: weight must be (Cout,Cin,k,k), got " +
                                    shape_str(weight.shape()));
    const int Cin = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int Cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != Cin)
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                    " input channels, input has " + std::to_string(Cin));
    if (weight.dim(3) != k || k % 2 == 0)
        throw std::invalid_argument("conv2d: kernel must be square with odd extent");
    if (padding != (k - 1) / 2)
        throw std::invalid_argument("conv2d: padding must be (k-1)/2 for same-size output");
    if (bias.shape() != Shape{Cout})
        throw std::invalid_argument("conv2d: bias must be (Cout)");

    TensorT<T> out = TensorT<T>::zeros({Cout, H, W});
    const T* in = input.data();
    const T* wt = weight.data();
    const T* bs = bias.data();
    T* po = out.data();
    const size_t plane = static_cast<size_t>(H) * W;

    if (k == 3) {
        std::vector<T> pad(static_cast<size_t>(Cin) * (H + 2) * (W + 2));
        detail::pad1(in, pad.data(), Cin, H, W);
#pragma omp parallel for schedule(static)
        for (int co = 0; co < Cout; ++co) {
            T* op = po + co * plane;
            for (size_t i = 0; i < plane; ++i) op[i] = bs[co];
            detail::conv3_accumulate(pad.data(), wt, po, Cin, co, H, W);
        }
    } else {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < Cout; ++co) {
            T* op = po + co * plane;
            for (size_t i = 0; i < plane; ++i) op[i] = bs[co];
            for (int ci = 0; ci < Cin; ++ci) {
                const T* ip = in + ci * plane;
                const T* wp = wt + ((static_cast<size_t>(co) * Cin + ci) * k) * k;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wp[ky * k + kx];
                        const int y0 = std::max(0, padding - ky), y1 = std::min(H, H + padding - ky);
                        const int x0 = std::max(0, padding - kx), x1 = std::min(W, W + padding - kx);
                        for (int y = y0; y < y1; ++y) {
                            const T* irow = ip + static_cast<size_t>(y + ky - padding) * W + (kx - padding);
                            T* orow = op + static_cast<size_t>(y) * W;
                            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                        }
                    }
            }
        }
    }

    if (detail::track<T>({&input, &weight, &bias})) {
        auto in_n = input.handle();
        auto wt_n = weight.handle();
        auto bs_n = bias.handle();
        detail::attach(out, {input, weight, bias},
                       [in_n, wt_n, bs_n, Cin, Cout, H, W, k, padding, plane](TensorNode<T>& self) {
            const T* og = self.grad.data();
            // bias: plain sum per output channel
            if (bs_n->requires_grad) {
                bs_n->ensure_grad();
                for (int co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    const T* gp = og + co * plane;
                    for (size_t i = 0; i < plane; ++i) acc += static_cast<double>(gp[i]);
                    bs_n->grad[co] += static_cast<T>(acc);
                }
            }
            // weights: each (co,ci,ky,kx) is an independent dot product.
            // Partial sums run in 8 fixed lanes so the loop vectorizes while
            // the summation order stays pinned (thread-count independent).
            if (wt_n->requires_grad) {
                wt_n->ensure_grad();
                const T* in = in_n->data.data();
                if (k == 3) {
                    std::vector<T> pad(static_cast<size_t>(Cin) * (H + 2) * (W + 2));
                    detail::pad1(in, pad.data(), Cin, H, W);
#pragma omp parallel for schedule(static)
                    for (int co = 0; co < Cout; ++co)
                        detail::conv3_weight_grad(pad.data(), og, wt_n->grad.data(), Cin, co, H, W);
                } else {
#pragma omp parallel for schedule(static)
                    for (int co = 0; co < Cout; ++co) {
                        const T* gp = og + co * plane;
                        for (int ci = 0; ci < Cin; ++ci) {
                            const T* ip = in + ci * plane;
                            T* wg = wt_n->grad.data() + ((static_cast<size_t>(co) * Cin + ci) * k) * k;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const int y0 = std::max(0, padding - ky),
                                              y1 = std::min(H, H + padding - ky);
                                    const int x0 = std::max(0, padding - kx),
                                              x1 = std::min(W, W + padding - kx);
                                    T lanes[8] = {};
                                    for (int y = y0; y < y1; ++y) {
                                        const T* irow =
                                            ip + static_cast<size_t>(y + ky - padding) * W + (kx - padding);
                                        const T* grow = gp + static_cast<size_t>(y) * W;
                                        int x = x0;
                                        for (; x + 8 <= x1; x += 8)
                                            for (int l = 0; l < 8; ++l)
                                                lanes[l] += grow[x + l] * irow[x + l];
                                        for (; x < x1; ++x) lanes[(x - x0) & 7] += grow[x] * irow[x];
                                    }
                                    wg[ky * k + kx] += ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                                                       ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
                                }
                        }
                    }
                }
            }
            // input: full correlation with the flipped kernel; parallel over
            // input channels so each thread owns a disjoint gradient plane
            if (in_n->requires_grad) {
                in_n->ensure_grad();
                const T* wt = wt_n->data.data();
                if (k == 3) {
                    std::vector<T> pad(static_cast<size_t>(Cout) * (H + 2) * (W + 2));
                    detail::pad1(og, pad.data(), Cout, H, W);
                    // transposed, spatially flipped weights: role swap ci<->co
                    std::vector<T> wt_t(static_cast<size_t>(Cin) * Cout * 9);
                    for (int co = 0; co < Cout; ++co)
                        for (int ci = 0; ci < Cin; ++ci)
                            for (int t = 0; t < 9; ++t)
                                wt_t[(static_cast<size_t>(ci) * Cout + co) * 9 + t] =
                                    wt[(static_cast<size_t>(co) * Cin + ci) * 9 + (8 - t)];
#pragma omp parallel for schedule(static)
                    for (int ci = 0; ci < Cin; ++ci)
                        detail::conv3_accumulate(pad.data(), wt_t.data(), in_n->grad.data(), Cout,
                                                 ci, H, W);
                } else {
#pragma omp parallel for schedule(static)
                    for (int ci = 0; ci < Cin; ++ci) {
                        T* ig = in_n->grad.data() + ci * plane;
                        for (int co = 0; co < Cout; ++co) {
                            const T* gp = og + co * plane;
                            const T* wp = wt + ((static_cast<size_t>(co) * Cin + ci) * k) * k;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const T wv = wp[ky * k + kx];
                                    const int y0 = std::max(0, padding - ky),
                                              y1 = std::min(H, H + padding - ky);
                                    const int x0 = std::max(0, padding - kx),
                                              x1 = std::min(W, W + padding - kx);
                                    for (int y = y0; y < y1; ++y) {
                                        T* irow =
                                            ig + static_cast<size_t>(y + ky - padding) * W + (kx - padding);
                                        const T* grow = gp + static_cast<size_t>(y) * W;
                                        for (int x = x0; x < x1; ++x) irow[x] += wv * grow[x];
                                    }
                                }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---- backward ----

template <typename T>
void backward(TensorT<T>& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!loss.requires_grad())
        throw std::invalid_argument("backward: loss is not connected to any gradient-enabled leaf");

    // reverse topological order via iterative post-order DFS
    std::vector<TensorNode<T>*> order;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    std::unordered_set<TensorNode<T>*> seen;
    stack.push_back({&loss.node(), 0});
    seen.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode<T>* p = node->parents[idx].get();
            ++idx;
            if ((p->pullback || p->leaf) && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : order) n->ensure_grad();
    loss.node().grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* n = *it;
        if (n->pullback) n->pullback(*n);
    }
    // tape is single-use: release interior graph, keep leaf grads
    for (auto* n : order) {
        if (!n->leaf) {
            n->pullback = nullptr;
            n->parents.clear();
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

}  // namespace irn
