#include "archtune/numkernel/optim.hpp"

#include <cmath>

namespace archtune::nk {

void Optimizer::step(std::span<Parameter* const> params) {
    for (Parameter* p : params) {
        if (!p->trainable || p->frozen) continue;
        if (p->grad.shape() != p->value.shape()) {
            throw ShapeError("optimizer: gradient shape of '" + p->name + "' does not match its value");
        }
        if (!p->grad.all_finite()) throw NumericError("optimizer: non-finite gradient in '" + p->name + "'");
    }
    for (Parameter* p : params) {
        if (!p->trainable || p->frozen) continue;
        update(*p);
    }
}

Sgd::Sgd(OptimizerConfig cfg) : Optimizer(cfg) {
    cfg_.kind = OptimizerKind::sgd;
    if (!(cfg_.learning_rate >= 0.0)) throw std::invalid_argument("sgd: learning rate must be non-negative");
}

void Sgd::update(Parameter& p) {
    const double lr = cfg_.learning_rate;
    if (cfg_.momentum == 0.0) {
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr * p.grad[i];
        return;
    }
    auto [it, fresh] = velocity_.try_emplace(&p);
    NdArray& vel = it->second;
    if (fresh) {
        vel = p.grad;
    } else {
        for (std::size_t i = 0; i < vel.size(); ++i) vel[i] = cfg_.momentum * vel[i] + p.grad[i];
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr * vel[i];
}

Adam::Adam(OptimizerConfig cfg) : Optimizer(cfg) {
    cfg_.kind = OptimizerKind::adam;
    if (!(cfg_.learning_rate >= 0.0)) throw std::invalid_argument("adam: learning rate must be non-negative");
}

long Adam::steps(const Parameter& p) const {
    auto it = moments_.find(&p);
    return it == moments_.end() ? 0 : it->second.t;
}

void Adam::update(Parameter& p) {
    auto [it, fresh] = moments_.try_emplace(&p);
    Moments& st = it->second;
    if (fresh) {
        st.m = NdArray(p.value.shape());
        st.v = NdArray(p.value.shape());
    }
    st.t += 1;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        p.value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg) {
    if (cfg.kind == OptimizerKind::adam) return std::make_unique<Adam>(cfg);
    return std::make_unique<Sgd>(cfg);
}

}  // namespace archtune::nk
