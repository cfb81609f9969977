#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <torch/torch.h>

#include <nlohmann/json.hpp>

namespace headsplat {

using TensorMap = std::map<std::string, torch::Tensor>;

/// On-disk tensor container shared by checkpoints, generator weights and raw
/// render dumps. A store is a directory holding
///
///   manifest.json  {"format", "version", "meta", "tensors": {name: {shape, dtype, offset, nbytes}}}
///   tensors.bin    concatenated little-endian tensor payloads
///
/// Supported dtypes are "f32", "f64" and "i64". Payloads are written verbatim,
/// so a save/load round trip is bit-exact.
struct TensorStore {
    TensorMap tensors;
    nlohmann::json meta = nlohmann::json::object();

    bool contains(const std::string& name) const { return tensors.count(name) != 0; }

    /// Throws SchemaMismatch naming the tensor when absent.
    const torch::Tensor& at(const std::string& name) const;
};

void save_tensor_store(const std::filesystem::path& dir, const TensorMap& tensors,
                       const nlohmann::json& meta = nlohmann::json::object());
TensorStore load_tensor_store(const std::filesystem::path& dir);

/// Copies `source` into `target` in place, checking name and shape.
void assign_checked(torch::Tensor& target, const TensorStore& store, const std::string& name);

/// FNV-1a over the raw bytes of every tensor, in key order.
std::uint64_t checksum(const TensorMap& tensors);
std::uint64_t checksum(const torch::nn::Module& module);

TensorMap named_parameters(const torch::nn::Module& module, const std::string& prefix = "");

/// Git blob-style SHA-1 of a byte string, hex encoded.
std::string content_hash(std::string_view bytes);
std::string content_hash_file(const std::filesystem::path& path);

} // namespace headsplat
