#pragma once
// Dense row-major f64 tensor, the one value type for features, parameters and
// losses. Gradients live beside the data; shapes are fixed at creation.
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gdd {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;   // row-major, size == product(shape)
    std::vector<double> grad;   // empty until an adjoint is accumulated
    bool requires_grad = false;

    std::size_t size() const { return data.size(); }

    int dim(int i) const { return shape.at((std::size_t)i); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape dims must be positive");
        n *= (std::size_t)d;
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

inline TensorPtr tensor_zeros(std::vector<int> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor>();
    std::size_t n = shape_numel(shape);
    t->shape = std::move(shape);
    t->data.assign(n, 0.0);
    t->requires_grad = requires_grad;
    return t;
}

inline TensorPtr tensor_full(std::vector<int> shape, double value, bool requires_grad = false) {
    auto t = tensor_zeros(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

inline TensorPtr tensor_from(std::vector<int> shape, std::vector<double> data,
                             bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("tensor_from: data length does not match shape " +
                                    shape_str(shape));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

inline TensorPtr tensor_scalar(double v, bool requires_grad = false) {
    return tensor_from({1}, {v}, requires_grad);
}

inline TensorPtr zeros_like(const TensorPtr& a, bool requires_grad = false) {
    return tensor_zeros(a->shape, requires_grad);
}

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace gdd
