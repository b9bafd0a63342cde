#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mclner/common.hpp"
#include "mclner/tensor.hpp"

namespace mclner {

struct AdamWHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8; // added outside the square root
    double weight_decay = 0.01; // decoupled: p *= (1 - lr*wd) before the Adam update
};

// Adam with decoupled weight decay and bias correction. Moments live in double
// regardless of the parameter scalar type; one step() advances the shared
// bias-correction clock for every slot. Slots carry their own learning rate so
// parameter groups can train at different speeds.
template <typename T>
class AdamWT {
public:
    explicit AdamWT(AdamWHyper hp = {}) : hp_(hp) {}

    std::size_t add_slot(std::size_t size, double lr) {
        slots_.push_back(Slot{lr, std::vector<double>(size, 0.0), std::vector<double>(size, 0.0)});
        return slots_.size() - 1;
    }

    std::size_t slot_count() const { return slots_.size(); }
    std::uint64_t steps() const { return t_; }
    const AdamWHyper& hyper() const { return hp_; }
    void set_lr(std::size_t slot, double lr) { slots_[slot].lr = lr; }
    double lr(std::size_t slot) const { return slots_[slot].lr; }

    // One update across all slots; params/grads are parallel to registration
    // order and must match the registered sizes.
    void step(const std::vector<TensorT<T>*>& params, const std::vector<const TensorT<T>*>& grads) {
        if (params.size() != slots_.size() || grads.size() != slots_.size())
            throw ContractError("optimizer step: expected " + std::to_string(slots_.size()) +
                                " slots, got " + std::to_string(params.size()) + " params / " +
                                std::to_string(grads.size()) + " grads");
        for (std::size_t s = 0; s < slots_.size(); ++s)
            if (params[s]->size() != slots_[s].m.size() || grads[s]->size() != slots_[s].m.size())
                throw ContractError("optimizer step: size mismatch in slot " + std::to_string(s));
        ++t_;
        const double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
        for (std::size_t s = 0; s < slots_.size(); ++s) {
            Slot& sl = slots_[s];
            TensorT<T>& p = *params[s];
            const TensorT<T>& g = *grads[s];
            const double decay = 1.0 - sl.lr * hp_.weight_decay;
            for (std::size_t i = 0; i < sl.m.size(); ++i) {
                const double gi = static_cast<double>(g.v[i]);
                sl.m[i] = hp_.beta1 * sl.m[i] + (1.0 - hp_.beta1) * gi;
                sl.v[i] = hp_.beta2 * sl.v[i] + (1.0 - hp_.beta2) * gi * gi;
                const double mhat = sl.m[i] / bc1;
                const double vhat = sl.v[i] / bc2;
                double pi = static_cast<double>(p.v[i]) * decay;
                pi -= sl.lr * mhat / (std::sqrt(vhat) + hp_.eps);
                p.v[i] = static_cast<T>(pi);
            }
        }
    }

private:
    struct Slot {
        double lr;
        std::vector<double> m, v;
    };
    AdamWHyper hp_;
    std::vector<Slot> slots_;
    std::uint64_t t_ = 0;
};

using AdamW = AdamWT<float>;

} // namespace mclner
