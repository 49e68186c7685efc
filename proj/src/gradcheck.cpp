#include "gdd/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "gdd/tape.hpp"

namespace gdd {

double check_gradients(const ScalarFn& f, const std::vector<TensorPtr>& inputs, double h) {
    if (Tape::active())
        throw std::logic_error("check_gradients: must not run under an active tape");
    if (!(h > 0.0)) throw std::invalid_argument("check_gradients: h must be > 0");

    for (auto& t : inputs) t->zero_grad();
    std::vector<std::vector<double>> analytic(inputs.size());
    {
        Tape tape;
        TensorPtr y = f(inputs);
        if (y->size() != 1)
            throw std::invalid_argument("check_gradients: f must return a scalar");
        tape.backward(y);
    }
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        analytic[t] = inputs[t]->grad.empty() ? std::vector<double>(inputs[t]->size(), 0.0)
                                              : inputs[t]->grad;
    }

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!inputs[t]->requires_grad) continue;
        Tensor& x = *inputs[t];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x.data[i];
            x.data[i] = saved + h;
            const double fp = f(inputs)->data[0];
            x.data[i] = saved - h;
            const double fm = f(inputs)->data[0];
            x.data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[t][i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace gdd
