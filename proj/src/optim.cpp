// SPDX-License-Identifier: Apache-2.0

#include "cap/optim.hpp"

#include <cmath>

namespace cap {

void AdamOptimizer::attach(Mat* value, const Mat* grad, const Mat* mask) {
    entries_.push_back({value, grad, mask, Mat::Zero(value->rows(), value->cols()),
                        Mat::Zero(value->rows(), value->cols())});
}

void AdamOptimizer::attach_model(Model& model) {
    for (auto* p : model.dense_params()) attach(&p->value, &p->grad);
    for (auto* s : model.prunable_sites()) attach(&s->weight, &s->grad_eff, &s->mask);
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& e : entries_) {
        const Mat g = e.mask ? e.grad->cwiseProduct(*e.mask) : *e.grad;
        e.m = beta1_ * e.m + (1.0 - beta1_) * g;
        e.v = beta2_ * e.v + (1.0 - beta2_) * g.cwiseProduct(g);
        const Mat m_hat = e.m / bc1;
        const Mat v_hat = e.v / bc2;
        e.value->array() -= lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
    }
}

}  // namespace cap
