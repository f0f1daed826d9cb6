// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <unordered_map>
#include <vector>

#include "trialfuse/numerics/autograd.hpp"

namespace trialfuse {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with independent parameter groups (each group has its own learning rate).
/// Frozen parameters are skipped entirely, so their values never change.
template <typename T>
class Adam {
public:
    explicit Adam(AdamOptions defaults = {}) : defaults_(defaults) {}

    void add_group(const ParameterList<T>& params, double lr)
    {
        Group g;
        g.lr = lr;
        for (const auto& p : params) {
            g.params.push_back(p.param);
        }
        groups_.push_back(std::move(g));
    }

    void step()
    {
        ++t_;
        const double bc1 = 1.0 - std::pow(defaults_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(defaults_.beta2, static_cast<double>(t_));
        for (auto& g : groups_) {
            for (Parameter<T>* p : g.params) {
                if (!p->trainable()) {
                    continue;
                }
                auto& state = state_[p];
                auto& value = p->mutable_value();
                const auto& grad = p->gradient();
                if (state.m.empty()) {
                    state.m.assign(value.size(), 0.0);
                    state.v.assign(value.size(), 0.0);
                }
                for (std::size_t i = 0; i < value.size(); ++i) {
                    const double gi = grad[i];
                    state.m[i] = defaults_.beta1 * state.m[i] + (1.0 - defaults_.beta1) * gi;
                    state.v[i] = defaults_.beta2 * state.v[i] + (1.0 - defaults_.beta2) * gi * gi;
                    const double mhat = state.m[i] / bc1;
                    const double vhat = state.v[i] / bc2;
                    value[i] = static_cast<T>(value[i] - g.lr * mhat / (std::sqrt(vhat) + defaults_.eps));
                }
            }
        }
    }

    void zero_grad()
    {
        for (auto& g : groups_) {
            for (Parameter<T>* p : g.params) {
                p->zero_grad();
            }
        }
    }

    [[nodiscard]] std::size_t steps() const noexcept { return t_; }

private:
    struct Group {
        double lr = 0.0;
        std::vector<Parameter<T>*> params;
    };
    struct State {
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamOptions defaults_;
    std::vector<Group> groups_;
    std::unordered_map<Parameter<T>*, State> state_;
    std::size_t t_ = 0;
};

} // namespace trialfuse
