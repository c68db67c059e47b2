#include "facecap/nncore.hpp"

#include <cmath>

#include "facecap/errors.hpp"

namespace facecap {

Tensor& ParamStore::add(const std::string& name, std::vector<std::size_t> shape) {
    if (has(name)) throw Error("param store: duplicate name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({name, Tensor(shape), Tensor(shape)});
    return entries_.back().value;
}

std::size_t ParamStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("param store: unknown name '" + name + "'");
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e.grad.fill(0.0);
}

void ParamStore::scale_grads(double factor) {
    for (auto& e : entries_)
        for (double& g : e.grad.values()) g *= factor;
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

AdamState AdamState::for_params(const ParamStore& params) {
    AdamState s;
    s.m.reserve(params.count());
    s.v.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
        s.m.emplace_back(params.at(i).value.shape());
        s.v.emplace_back(params.at(i).value.shape());
    }
    return s;
}

void adam_step(ParamStore& params, AdamState& state, double lr) {
    if (state.m.size() != params.count())
        throw Error("adam: state does not match parameter store");
    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& e = params.at(i);
        for (double g : e.grad.values())
            if (!std::isfinite(g))
                throw NumericError("adam: non-finite gradient in parameter '" + e.name + "'");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.count(); ++i) {
        auto& e = params.at(i);
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < e.value.size(); ++k) {
            const double g = e.grad[k];
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            e.value[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
    if (W.rank() != 2 || x.rank() != 1 || b.rank() != 1 || W.dim(1) != x.dim(0) ||
        W.dim(0) != b.dim(0))
        throw Error("affine: shape mismatch");
    const std::size_t out = W.dim(0), in = W.dim(1);
    Tensor y({out});
    for (std::size_t r = 0; r < out; ++r) {
        double acc = b[r];
        const double* wrow = W.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) acc += wrow[c] * x[c];
        y[r] = acc;
    }
    return y;
}

AffineGrads affine_backward(const Tensor& x, const Tensor& W, const Tensor& dy) {
    const std::size_t out = W.dim(0), in = W.dim(1);
    if (dy.size() != out || x.size() != in) throw Error("affine_backward: shape mismatch");
    AffineGrads g{Tensor({in}), Tensor({out, in}), Tensor({out})};
    for (std::size_t r = 0; r < out; ++r) {
        const double d = dy[r];
        g.db[r] = d;
        const double* wrow = W.data() + r * in;
        double* dwrow = g.dW.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) {
            dwrow[c] = d * x[c];
            g.dx[c] += d * wrow[c];
        }
    }
    return g;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
    return dx;
}

Tensor tanh_act(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
    return y;
}

Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
    return dx;
}

namespace {

void softmax_row(const double* x, double* y, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        sum += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= sum;
}

}  // namespace

Tensor softmax(const Tensor& x) {
    Tensor y(x.shape());
    if (x.rank() == 1) {
        softmax_row(x.data(), y.data(), x.size());
    } else if (x.rank() == 2) {
        for (std::size_t r = 0; r < x.dim(0); ++r)
            softmax_row(x.data() + r * x.dim(1), y.data() + r * x.dim(1), x.dim(1));
    } else {
        throw Error("softmax: rank must be 1 or 2");
    }
    return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx(y.shape());
    const std::size_t rows = y.rank() == 2 ? y.dim(0) : 1;
    const std::size_t n = y.rank() == 2 ? y.dim(1) : y.size();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = y.data() + r * n;
        const double* dr = dy.data() + r * n;
        double* xr = dx.data() + r * n;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += yr[i] * dr[i];
        for (std::size_t i = 0; i < n; ++i) xr[i] = yr[i] * (dr[i] - dot);
    }
    return dx;
}

double cross_entropy(const Tensor& probs, std::size_t target) {
    if (target >= probs.size()) throw Error("cross_entropy: target index out of range");
    return -std::log(std::max(probs[target], kLogClamp));
}

void init_uniform(Tensor& w, double radius, Rng& rng) {
    for (double& x : w.values()) x = rng.uniform(-radius, radius);
}

void init_uniform_glorot(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    init_uniform(w, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

double grad_check(const std::function<double(ParamStore&)>& loss_fn, ParamStore& params,
                  double eps) {
    // Snapshot the analytic gradients; loss_fn is forward-only but callers may
    // share buffers.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i)
        analytic.push_back(params.at(i).grad.values());

    double worst = 0.0;
    for (std::size_t i = 0; i < params.count(); ++i) {
        auto& value = params.at(i).value;
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double saved = value[k];
            value[k] = saved + eps;
            const double fp = loss_fn(params);
            value[k] = saved - eps;
            const double fm = loss_fn(params);
            value[k] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[i][k];
            const double rel =
                std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace facecap
