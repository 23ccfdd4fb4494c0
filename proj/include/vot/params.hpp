#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>

#include "vot/tensor.hpp"

namespace vot {

template <typename T>
struct ParamEntry {
    Tensor<T> value;
    Tensor<T> m;  // first moment
    Tensor<T> v;  // second moment
    std::int64_t step = 0;
};

// Named trainable tensors plus their Adam state. Confined to one logical
// thread; iteration order is the lexicographic name order of std::map.
template <typename T>
class ParameterStore {
public:
    void add(const std::string& name, Tensor<T> value) {
        if (entries_.count(name)) throw ConfigError("parameter registered twice: " + name);
        ParamEntry<T> e;
        e.m = Tensor<T>::zeros(value.shape());
        e.v = Tensor<T>::zeros(value.shape());
        e.value = std::move(value);
        entries_.emplace(name, std::move(e));
    }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    ParamEntry<T>& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    const ParamEntry<T>& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    size_t count() const { return entries_.size(); }

    std::int64_t scalar_count() const {
        std::int64_t n = 0;
        for (const auto& [k, e] : entries_) n += e.value.numel();
        return n;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    template <typename U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& [k, e] : entries_) out.add(k, e.value.template cast<U>());
        return out;
    }

private:
    std::map<std::string, ParamEntry<T>> entries_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction. Gradients must be keyed exactly like
// the store.
template <typename T>
void adam_step(ParameterStore<T>& store, const std::map<std::string, Tensor<T>>& grads,
               const AdamConfig& cfg) {
    std::set<std::string> missing, extra;
    for (const auto& [k, e] : store)
        if (!grads.count(k)) missing.insert(k);
    for (const auto& [k, g] : grads)
        if (!store.has(k)) extra.insert(k);
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "adam_step: gradient keys do not match parameters;";
        for (const auto& k : missing) msg += " missing:" + k;
        for (const auto& k : extra) msg += " extra:" + k;
        throw ConfigError(msg);
    }
    for (auto& [name, e] : store) {
        const Tensor<T>& g = grads.at(name);
        if (g.shape() != e.value.shape())
            throw ShapeError("adam_step: gradient shape mismatch for " + name);
        e.step += 1;
        const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
        const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(e.step)));
        const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(e.step)));
        const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            e.m[i] = b1 * e.m[i] + (T(1) - b1) * g[i];
            e.v[i] = b2 * e.v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = e.m[i] / bc1;
            const T vhat = e.v[i] / bc2;
            e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace vot
