#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "facecap/rng.hpp"
#include "facecap/tensor.hpp"

namespace facecap {

// Ordered table of learned tensors. Each entry pairs the value with a
// gradient of identical shape; iteration follows insertion order, which keeps
// optimizer updates and checkpoint layout deterministic.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor value;
        Tensor grad;
    };

    Tensor& add(const std::string& name, std::vector<std::size_t> shape);

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Tensor& value(const std::string& name) { return entries_[index_of(name)].value; }
    const Tensor& value(const std::string& name) const { return entries_[index_of(name)].value; }
    Tensor& grad(const std::string& name) { return entries_[index_of(name)].grad; }
    const Tensor& grad(const std::string& name) const { return entries_[index_of(name)].grad; }

    std::size_t count() const { return entries_.size(); }
    Entry& at(std::size_t i) { return entries_[i]; }
    const Entry& at(std::size_t i) const { return entries_[i]; }

    void zero_grads();
    void scale_grads(double factor);
    std::size_t total_size() const;

  private:
    std::size_t index_of(const std::string& name) const;

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Adam optimizer state: first/second moments mirroring the ParamStore layout
// plus the shared step counter.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    static AdamState for_params(const ParamStore& params);
};

// One bias-corrected Adam update over every parameter. Throws NumericError
// naming the parameter if any gradient entry is non-finite.
void adam_step(ParamStore& params, AdamState& state, double lr);

// ---- elementwise / linear ops with explicit backward ----------------------

// y = W x + b for a 1-d x, W of shape [out, in], b of shape [out].
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);

struct AffineGrads {
    Tensor dx;
    Tensor dW;
    Tensor db;
};
AffineGrads affine_backward(const Tensor& x, const Tensor& W, const Tensor& dy);

Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);  // y = sigmoid(x)

Tensor tanh_act(const Tensor& x);
Tensor tanh_backward(const Tensor& y, const Tensor& dy);  // y = tanh(x)

// Row-wise for rank-2 input, plain for rank-1. Max-subtracted for stability;
// rows sum to 1.
Tensor softmax(const Tensor& x);
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

// -log(probs[target]) with probabilities clamped below at 1e-12.
double cross_entropy(const Tensor& probs, std::size_t target);

inline constexpr double kLogClamp = 1e-12;

// ---- initialization --------------------------------------------------------

// Glorot-style uniform U(-r, r), r = sqrt(6 / (fan_in + fan_out)).
void init_uniform_glorot(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);
void init_uniform(Tensor& w, double radius, Rng& rng);

// ---- finite-difference gradient checking -----------------------------------

// Compares the analytic gradients already stored in `params` against central
// differences of `loss_fn` (forward-only). Returns the worst relative error,
// |a - n| / max(|a|, |n|, 1e-8), over every parameter entry.
double grad_check(const std::function<double(ParamStore&)>& loss_fn, ParamStore& params,
                  double eps = 1e-5);

}  // namespace facecap
