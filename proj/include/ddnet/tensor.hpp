#pragma once

// Dense rank-4 tensors with reverse-mode differentiation.
//
// A Tensor4 is a value handle over shared storage (data + optional grad).
// Forward operations optionally record a backward rule on a Tape; calling
// Tape::backward replays the rules in reverse order and accumulates
// gradients into the storage of every tensor that requires them.
// Gradients accumulate across backward calls until zero_grad.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddnet {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
    bool same_spatial(const Shape& o) const {
        return n == o.n && h == o.h && w == o.w;
    }
    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first needed
    bool requires_grad = false;
};

template <typename T>
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape s, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("negative dimension in " + s.str());
        impl_->shape = s;
        impl_->data.assign(s.numel(), T(0));
        impl_->requires_grad = requires_grad;
    }
    Tensor4(Shape s, std::vector<T> values, bool requires_grad = false)
        : Tensor4(s, requires_grad) {
        if (values.size() != s.numel())
            throw ShapeError("value count does not match shape " + s.str());
        impl_->data = std::move(values);
    }

    static Tensor4 full(Shape s, T value) {
        Tensor4 t(s);
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }
    static Tensor4 scalar(T value) {
        Tensor4 t(Shape{1, 1, 1, 1});
        t.data()[0] = value;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->shape.numel(); }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    std::vector<T>& data() { return impl_->data; }
    const std::vector<T>& data() const { return impl_->data; }

    T& at(int n, int c, int h, int w) {
        return impl_->data[index(n, c, h, w)];
    }
    T at(int n, int c, int h, int w) const {
        return impl_->data[index(n, c, h, w)];
    }
    std::size_t index(int n, int c, int h, int w) const {
        const Shape& s = impl_->shape;
        return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::vector<T>& grad() {
        ensure_grad();
        return impl_->grad;
    }
    const std::vector<T>& grad() const { return impl_->grad; }
    void ensure_grad() {
        if (impl_->grad.empty()) impl_->grad.assign(numel(), T(0));
    }
    void zero_grad() {
        if (!impl_->grad.empty())
            std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1)
            throw std::invalid_argument("item() on non-scalar tensor " +
                                        shape().str());
        return impl_->data[0];
    }

    // Identity of the underlying storage, for graph bookkeeping.
    const void* id() const { return impl_.get(); }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
struct Parameter {
    std::string name;
    Tensor4<T> value;
};

// Records forward operations in execution order; replays them backward.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_rule) {
        ops_.push_back(std::move(backward_rule));
    }
    bool empty() const { return ops_.empty(); }
    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

    // Seeds d(loss)/d(loss)=1 and runs every recorded rule in reverse.
    // The tape is cleared afterwards.
    void backward(Tensor4<T>& loss) {
        if (loss.shape() != Shape{1, 1, 1, 1})
            throw std::invalid_argument("backward requires a (1,1,1,1) loss, got " +
                                        loss.shape().str());
        loss.grad()[0] += T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {

template <typename T>
inline bool any_requires_grad(const Tensor4<T>& a) {
    return a.requires_grad();
}
template <typename T>
inline bool any_requires_grad(const Tensor4<T>& a, const Tensor4<T>& b) {
    return a.requires_grad() || b.requires_grad();
}

template <typename T>
inline void mark_out(Tensor4<T>& out) {
    out.set_requires_grad(true);
    out.ensure_grad();
}

}  // namespace detail

enum class EwKind { add, sub, mul, div, scale, relu, sigmoid, log };

// ---- binary elementwise -------------------------------------------------

template <typename T>
Tensor4<T> add(Tape<T>* tape, const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: " + a.shape().str() + " vs " + b.shape().str());
    Tensor4<T> out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (tape && detail::any_requires_grad(a, b)) {
        detail::mark_out(out);
        Tensor4<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor4<T> sub(Tape<T>* tape, const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("sub: " + a.shape().str() + " vs " + b.shape().str());
    Tensor4<T> out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (tape && detail::any_requires_grad(a, b)) {
        detail::mark_out(out);
        Tensor4<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor4<T> mul(Tape<T>* tape, const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: " + a.shape().str() + " vs " + b.shape().str());
    Tensor4<T> out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (tape && detail::any_requires_grad(a, b)) {
        detail::mark_out(out);
        Tensor4<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * bc.data()[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    gb[i] += g[i] * ac.data()[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor4<T> div(Tape<T>* tape, const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("div: " + a.shape().str() + " vs " + b.shape().str());
    Tensor4<T> out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] / b.data()[i];
    if (tape && detail::any_requires_grad(a, b)) {
        detail::mark_out(out);
        Tensor4<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] / bc.data()[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const T d = bc.data()[i];
                    gb[i] -= g[i] * ac.data()[i] / (d * d);
                }
            }
        });
    }
    return out;
}

// ---- unary elementwise --------------------------------------------------

// alpha * x + beta
template <typename T>
Tensor4<T> affine(Tape<T>* tape, const Tensor4<T>& a, T alpha, T beta = T(0)) {
    Tensor4<T> out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = alpha * a.data()[i] + beta;
    if (tape && a.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> ac = a, oc = out;
        tape->record([ac, oc, alpha]() mutable {
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
        });
    }
    return out;
}

template <typename T>
Tensor4<T> scale(Tape<T>* tape, const Tensor4<T>& a, T alpha) {
    return affine(tape, a, alpha, T(0));
}

template <typename T>
Tensor4<T> relu(Tape<T>* tape, const Tensor4<T>& a) {
    Tensor4<T> out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    if (tape && a.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> ac = a, oc = out;
        tape->record([ac, oc]() mutable {
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            // derivative at exactly 0 is 0
            for (std::size_t i = 0; i < g.size(); ++i)
                if (ac.data()[i] > T(0)) ga[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor4<T> sigmoid(Tape<T>* tape, const Tensor4<T>& a) {
    Tensor4<T> out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.data()[i] = T(1) / (T(1) + std::exp(-a.data()[i]));
    if (tape && a.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> ac = a, oc = out;
        tape->record([ac, oc]() mutable {
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T s = oc.data()[i];
                ga[i] += g[i] * s * (T(1) - s);
            }
        });
    }
    return out;
}

template <typename T>
Tensor4<T> log_op(Tape<T>* tape, const Tensor4<T>& a) {
    Tensor4<T> out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::log(a.data()[i]);
    if (tape && a.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> ac = a, oc = out;
        tape->record([ac, oc]() mutable {
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / ac.data()[i];
        });
    }
    return out;
}

// Clamp with pass-through gradient on the interior, zero outside.
template <typename T>
Tensor4<T> clamp(Tape<T>* tape, const Tensor4<T>& a, T lo, T hi) {
    Tensor4<T> out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.data()[i] = std::min(hi, std::max(lo, a.data()[i]));
    if (tape && a.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> ac = a, oc = out;
        tape->record([ac, oc, lo, hi]() mutable {
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T x = ac.data()[i];
                if (x > lo && x < hi) ga[i] += g[i];
            }
        });
    }
    return out;
}

// Dispatch form matching the op-kind interface; binary kinds require b.
template <typename T>
Tensor4<T> elementwise(Tape<T>* tape, EwKind kind, const Tensor4<T>& a,
                       const Tensor4<T>* b = nullptr, T alpha = T(1)) {
    switch (kind) {
        case EwKind::add: return add(tape, a, *b);
        case EwKind::sub: return sub(tape, a, *b);
        case EwKind::mul: return mul(tape, a, *b);
        case EwKind::div: return div(tape, a, *b);
        case EwKind::scale: return scale(tape, a, alpha);
        case EwKind::relu: return relu(tape, a);
        case EwKind::sigmoid: return sigmoid(tape, a);
        case EwKind::log: return log_op(tape, a);
    }
    throw std::invalid_argument("unknown elementwise kind");
}

// ---- reductions ---------------------------------------------------------

template <typename T>
Tensor4<T> sum(Tape<T>* tape, const Tensor4<T>& a) {
    T acc = T(0);
    for (T v : a.data()) acc += v;
    Tensor4<T> out = Tensor4<T>::scalar(acc);
    if (tape && a.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> ac = a, oc = out;
        tape->record([ac, oc]() mutable {
            const T g = oc.grad()[0];
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor4<T> mean(Tape<T>* tape, const Tensor4<T>& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
    Tensor4<T> s = sum(tape, a);
    return scale(tape, s, T(1) / static_cast<T>(a.numel()));
}

// ---- concat -------------------------------------------------------------

template <typename T>
Tensor4<T> concat_channels(Tape<T>* tape, const std::vector<Tensor4<T>>& parts) {
    if (parts.empty())
        throw std::invalid_argument("concat_channels: empty part list");
    const Shape& first = parts.front().shape();
    int total_c = 0;
    for (const auto& p : parts) {
        if (!p.shape().same_spatial(first))
            throw ShapeError("concat_channels: mismatched dims " +
                             p.shape().str() + " vs " + first.str());
        total_c += p.shape().c;
    }
    Shape out_shape{first.n, total_c, first.h, first.w};
    Tensor4<T> out(out_shape);
    const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
    bool needs_grad = false;
    for (const auto& p : parts) needs_grad = needs_grad || p.requires_grad();

    for (int n = 0; n < first.n; ++n) {
        int c_off = 0;
        for (const auto& p : parts) {
            const int pc = p.shape().c;
            const T* src = p.data().data() + static_cast<std::size_t>(n) * pc * plane;
            T* dst = out.data().data() +
                     (static_cast<std::size_t>(n) * total_c + c_off) * plane;
            std::copy(src, src + static_cast<std::size_t>(pc) * plane, dst);
            c_off += pc;
        }
    }

    if (tape && needs_grad) {
        detail::mark_out(out);
        std::vector<Tensor4<T>> pc = parts;
        Tensor4<T> oc = out;
        tape->record([pc, oc, plane, total_c, first]() mutable {
            const auto& g = oc.grad();
            for (int n = 0; n < first.n; ++n) {
                int c_off = 0;
                for (auto& p : pc) {
                    const int cc = p.shape().c;
                    if (p.requires_grad()) {
                        auto& gp = p.grad();
                        const T* gsrc =
                            g.data() +
                            (static_cast<std::size_t>(n) * total_c + c_off) * plane;
                        T* gdst = gp.data() +
                                  static_cast<std::size_t>(n) * cc * plane;
                        const std::size_t len = static_cast<std::size_t>(cc) * plane;
                        for (std::size_t i = 0; i < len; ++i) gdst[i] += gsrc[i];
                    }
                    c_off += cc;
                }
            }
        });
    }
    return out;
}

// Channel slice [c0, c1); inverse of concat_channels for bookkeeping.
template <typename T>
Tensor4<T> slice_channels(Tape<T>* tape, const Tensor4<T>& x, int c0, int c1) {
    const Shape& xs = x.shape();
    if (c0 < 0 || c1 > xs.c || c0 >= c1)
        throw ShapeError("slice_channels: bad range [" + std::to_string(c0) +
                         "," + std::to_string(c1) + ") for " + xs.str());
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    Tensor4<T> out(Shape{xs.n, c1 - c0, xs.h, xs.w});
    for (int n = 0; n < xs.n; ++n) {
        const T* src = x.data().data() +
                       (static_cast<std::size_t>(n) * xs.c + c0) * plane;
        T* dst = out.data().data() +
                 static_cast<std::size_t>(n) * (c1 - c0) * plane;
        std::copy(src, src + static_cast<std::size_t>(c1 - c0) * plane, dst);
    }
    if (tape && x.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc, c0, plane]() mutable {
            const Shape& xs = xc.shape();
            const int sc = oc.shape().c;
            for (int n = 0; n < xs.n; ++n) {
                T* gdst = xc.grad().data() +
                          (static_cast<std::size_t>(n) * xs.c + c0) * plane;
                const T* gsrc = oc.grad().data() +
                                static_cast<std::size_t>(n) * sc * plane;
                const std::size_t len = static_cast<std::size_t>(sc) * plane;
                for (std::size_t i = 0; i < len; ++i) gdst[i] += gsrc[i];
            }
        });
    }
    return out;
}

// ---- misc ---------------------------------------------------------------

template <typename T>
bool all_finite(const Tensor4<T>& t) {
    for (T v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
void fill_random_normal(Tensor4<T>& t, std::mt19937& rng, T stddev) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_random_uniform(Tensor4<T>& t, std::mt19937& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                static_cast<double>(hi));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

}  // namespace ddnet
