// SPDX-License-Identifier: Apache-2.0
//
// Adam with a fixed learning rate. Prunable sites are updated with their
// straight-through gradient re-masked, so masked-out weights stay frozen.

#pragma once

#include <vector>

#include "cap/model.hpp"

namespace cap {

class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // `mask` may be null; when set, the applied gradient is grad .* mask.
    void attach(Mat* value, const Mat* grad, const Mat* mask = nullptr);
    void attach_model(Model& model);

    void step();

private:
    struct Entry {
        Mat* value;
        const Mat* grad;
        const Mat* mask;
        Mat m;
        Mat v;
    };

    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Entry> entries_;
};

}  // namespace cap
