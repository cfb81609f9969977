#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "headsplat/tensor_store.hpp"

namespace headsplat {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over an explicit list of named tensors, each with its own learning
/// rate. Moments are kept per tensor so the state can be checkpointed and
/// restored exactly.
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    /// Registers `param` (must require grad). Names must be unique.
    void add(const std::string& name, torch::Tensor param, double lr);

    /// One update from the current `.grad()` of every registered tensor.
    /// Tensors without a gradient are skipped.
    void step();
    void zero_grad();

    void set_lr_scale(double scale) { lr_scale_ = scale; }
    std::size_t size() const { return slots_.size(); }
    std::vector<std::string> names() const;

    /// Moments and step counts as "<prefix><name>.m", ".v", ".t".
    TensorMap state(const std::string& prefix = "adam.") const;
    /// Restores moments saved by state(); throws SchemaMismatch when a
    /// registered tensor has no saved state.
    void load_state(const TensorStore& store, const std::string& prefix = "adam.");

private:
    struct Slot {
        std::string name;
        torch::Tensor param;
        double lr;
        torch::Tensor m;
        torch::Tensor v;
        std::int64_t t = 0;
    };
    AdamOptions options_;
    double lr_scale_ = 1.0;
    std::vector<Slot> slots_;
};

} // namespace headsplat
