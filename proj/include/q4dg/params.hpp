#pragma once

#include "q4dg/rng.hpp"
#include "q4dg/tensor.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4dg {

// Named registry of learnable tensors. Names are dotted, with the first
// segment identifying the parameter group (encoder., cvgf., ctlf., head_cam.,
// head_dense., head_track.). std::map keeps iteration order stable so
// checkpoints and optimizer state are reproducible.
class ParamStore {
public:
    Tensor create(const std::string& name, Shape shape, Rng& rng, double init_scale) {
        if (params_.count(name)) throw std::logic_error("duplicate parameter: " + name);
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = rng.uniform(-init_scale, init_scale);
        Tensor t = Tensor::from(std::move(shape), std::move(data), /*requires_grad=*/true);
        params_.emplace(name, t);
        return t;
    }
    Tensor create_zeros(const std::string& name, Shape shape) {
        if (params_.count(name)) throw std::logic_error("duplicate parameter: " + name);
        Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
        params_.emplace(name, t);
        return t;
    }
    Tensor create_const(const std::string& name, Shape shape, double v) {
        if (params_.count(name)) throw std::logic_error("duplicate parameter: " + name);
        Tensor t = Tensor::full(std::move(shape), v, /*requires_grad=*/true);
        params_.emplace(name, t);
        return t;
    }

    Tensor get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    const std::map<std::string, Tensor>& all() const { return params_; }

    std::vector<std::string> group_names(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [name, t] : params_)
            if (name.rfind(prefix, 0) == 0) out.push_back(name);
        return out;
    }
    std::vector<Tensor> group(const std::string& prefix) const {
        std::vector<Tensor> out;
        for (const auto& [name, t] : params_)
            if (name.rfind(prefix, 0) == 0) out.push_back(t);
        return out;
    }

    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    // FNV-1a over the raw f64 bytes of every parameter in a group; used to
    // enforce the freeze contract during staged training.
    std::uint64_t checksum(const std::string& prefix) const {
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& [name, t] : params_) {
            if (name.rfind(prefix, 0) != 0) continue;
            const auto* bytes = reinterpret_cast<const unsigned char*>(t.value().data());
            for (std::size_t i = 0; i < t.value().size() * sizeof(double); ++i) {
                h ^= bytes[i];
                h *= 1099511628211ULL;
            }
        }
        return h;
    }

private:
    std::map<std::string, Tensor> params_;
};

}  // namespace q4dg
