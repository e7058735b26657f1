#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "rmm/rng.hpp"
#include "rmm/tensor.hpp"

namespace rmm {

// Named, ordered parameter set. Order is creation order and defines both the
// optimizer slot layout and the checkpoint serialization order.
class ParamStore {
public:
    size_t create(const std::string& name, Tensor t) {
        require(index_.find(name) == index_.end(), ErrorCode::Contract, "param already exists: ", name);
        index_[name] = names_.size();
        names_.push_back(name);
        values_.push_back(std::move(t));
        return names_.size() - 1;
    }

    // fan-in scaled uniform init: +-sqrt(6/fan_in)
    size_t create_fan_in(const std::string& name, std::vector<int> shape, int fan_in, Rng& rng) {
        Tensor t(std::move(shape));
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : t.data) v = rng.uniform(-bound, bound);
        return create(name, std::move(t));
    }

    size_t create_zeros(const std::string& name, std::vector<int> shape) {
        return create(name, Tensor(std::move(shape)));
    }

    size_t count() const { return values_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    Tensor& value(size_t i) { return values_[i]; }
    const Tensor& value(size_t i) const { return values_[i]; }
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), ErrorCode::Contract, "unknown param: ", name);
        return it->second;
    }
    Tensor& value(const std::string& name) { return values_[index_of(name)]; }

    // Binds every parameter as a trainable leaf on the graph; result is
    // indexed by parameter slot.
    std::vector<NodeId> bind(Graph& g, bool trainable = true) const {
        std::vector<NodeId> ids(values_.size());
        for (size_t i = 0; i < values_.size(); ++i) ids[i] = g.leaf(values_[i], trainable);
        return ids;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, size_t> index_;
};

// Adam with bias correction.
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params, const Graph& g, const std::vector<NodeId>& bound) {
        if (m_.empty()) {
            m_.resize(params.count());
            v_.resize(params.count());
            for (size_t i = 0; i < params.count(); ++i) {
                m_[i].assign(params.value(i).data.size(), 0.0);
                v_[i].assign(params.value(i).data.size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params.count(); ++i) {
            const auto& grad = g.grad(bound[i]);
            auto& val = params.value(i).data;
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < val.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad[j] * grad[j];
                val[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace rmm
