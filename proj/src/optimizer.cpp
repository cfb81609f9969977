#include "headsplat/optimizer.hpp"

#include <cmath>

#include "headsplat/errors.hpp"

namespace headsplat {

void Adam::add(const std::string& name, torch::Tensor param, double lr) {
    require(param.requires_grad(), ErrorCode::InvalidArgument, "optimizer tensor '" + name + "' does not require grad");
    require(lr >= 0.0, ErrorCode::InvalidArgument, "learning rate must be non-negative");
    for (const auto& s : slots_) {
        require(s.name != name, ErrorCode::InvalidArgument, "duplicate optimizer tensor '" + name + "'");
    }
    slots_.push_back({name, param, lr, torch::zeros_like(param), torch::zeros_like(param), 0});
}

void Adam::step() {
    torch::NoGradGuard guard;
    for (auto& s : slots_) {
        const auto& g = s.param.grad();
        if (!g.defined()) {
            continue;
        }
        ++s.t;
        s.m.mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
        s.v.mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
        const double bc1 = 1.0 - std::pow(options_.beta1, double(s.t));
        const double bc2 = 1.0 - std::pow(options_.beta2, double(s.t));
        auto denom = (s.v / bc2).sqrt_().add_(options_.eps);
        s.param.addcdiv_(s.m, denom, -s.lr * lr_scale_ / bc1);
    }
}

void Adam::zero_grad() {
    for (auto& s : slots_) {
        auto& g = s.param.mutable_grad();
        if (g.defined()) {
            g = torch::Tensor();
        }
    }
}

std::vector<std::string> Adam::names() const {
    std::vector<std::string> out;
    for (const auto& s : slots_) out.push_back(s.name);
    return out;
}

TensorMap Adam::state(const std::string& prefix) const {
    TensorMap out;
    for (const auto& s : slots_) {
        out[prefix + s.name + ".m"] = s.m;
        out[prefix + s.name + ".v"] = s.v;
        out[prefix + s.name + ".t"] = torch::tensor({s.t}, torch::kInt64);
    }
    return out;
}

void Adam::load_state(const TensorStore& store, const std::string& prefix) {
    for (auto& s : slots_) {
        assign_checked(s.m, store, prefix + s.name + ".m");
        assign_checked(s.v, store, prefix + s.name + ".v");
        s.t = store.at(prefix + s.name + ".t").item<std::int64_t>();
    }
}

} // namespace headsplat
