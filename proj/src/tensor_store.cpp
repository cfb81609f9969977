#include "headsplat/tensor_store.hpp"

#include <bit>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "headsplat/errors.hpp"

namespace headsplat {

static_assert(std::endian::native == std::endian::little, "tensor store assumes a little-endian host");

namespace {

std::string dtype_name(torch::ScalarType t) {
    switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: fail(ErrorCode::SchemaMismatch, std::string("unsupported dtype ") + c10::toString(t));
    }
}

torch::ScalarType dtype_from(const std::string& name) {
    if (name == "f32") return torch::kFloat32;
    if (name == "f64") return torch::kFloat64;
    if (name == "i64") return torch::kInt64;
    fail(ErrorCode::SchemaMismatch, "unknown dtype '" + name + "'");
}

} // namespace

const torch::Tensor& TensorStore::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        fail(ErrorCode::SchemaMismatch, "missing tensor '" + name + "'");
    }
    return it->second;
}

void save_tensor_store(const std::filesystem::path& dir, const TensorMap& tensors, const nlohmann::json& meta) {
    std::filesystem::create_directories(dir);
    nlohmann::json index = nlohmann::json::object();
    std::ofstream blob(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
    require(blob.good(), ErrorCode::Io, "cannot write " + (dir / "tensors.bin").string());

    std::int64_t offset = 0;
    for (const auto& [name, tensor] : tensors) {
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        const auto nbytes = static_cast<std::int64_t>(t.numel() * t.element_size());
        blob.write(static_cast<const char*>(t.data_ptr()), nbytes);
        index[name] = {{"shape", t.sizes().vec()}, {"dtype", dtype_name(t.scalar_type())},
                       {"offset", offset}, {"nbytes", nbytes}};
        offset += nbytes;
    }
    require(blob.good(), ErrorCode::Io, "short write to " + (dir / "tensors.bin").string());

    nlohmann::json manifest = {{"format", "headsplat-tensors"}, {"version", 1}, {"meta", meta}, {"tensors", index}};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
    require(out.good(), ErrorCode::Io, "cannot write " + (dir / "manifest.json").string());
}

TensorStore load_tensor_store(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    require(in.good(), ErrorCode::MissingCheckpoint, "no manifest.json in " + dir.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::SchemaMismatch, "unreadable manifest in " + dir.string() + ": " + e.what());
    }
    require(manifest.value("format", "") == "headsplat-tensors", ErrorCode::SchemaMismatch,
            "not a tensor store: " + dir.string());

    std::ifstream blob(dir / "tensors.bin", std::ios::binary);
    require(blob.good(), ErrorCode::SchemaMismatch, "missing tensors.bin in " + dir.string());
    blob.seekg(0, std::ios::end);
    const std::int64_t blob_size = blob.tellg();

    TensorStore store;
    store.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& [name, entry] : manifest.at("tensors").items()) {
        const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
        const auto dtype = dtype_from(entry.at("dtype").get<std::string>());
        const auto offset = entry.at("offset").get<std::int64_t>();
        const auto nbytes = entry.at("nbytes").get<std::int64_t>();
        auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
        require(nbytes == static_cast<std::int64_t>(t.numel() * t.element_size()), ErrorCode::SchemaMismatch,
                "byte count mismatch for tensor '" + name + "'");
        require(offset >= 0 && offset + nbytes <= blob_size, ErrorCode::SchemaMismatch,
                "tensor '" + name + "' extends past end of blob");
        blob.seekg(offset);
        blob.read(static_cast<char*>(t.data_ptr()), nbytes);
        store.tensors.emplace(name, std::move(t));
    }
    return store;
}

void assign_checked(torch::Tensor& target, const TensorStore& store, const std::string& name) {
    const auto& source = store.at(name);
    if (source.sizes() != target.sizes()) {
        std::ostringstream msg;
        msg << "tensor '" << name << "' has shape " << source.sizes() << ", expected " << target.sizes();
        fail(ErrorCode::SchemaMismatch, msg.str());
    }
    torch::NoGradGuard guard;
    target.copy_(source);
}

std::uint64_t checksum(const TensorMap& tensors) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, tensor] : tensors) {
        mix(reinterpret_cast<const unsigned char*>(name.data()), name.size());
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        mix(static_cast<const unsigned char*>(t.data_ptr()), t.numel() * t.element_size());
    }
    return h;
}

TensorMap named_parameters(const torch::nn::Module& module, const std::string& prefix) {
    TensorMap out;
    for (const auto& item : module.named_parameters(true)) {
        out.emplace(prefix + item.key(), item.value());
    }
    for (const auto& item : module.named_buffers(true)) {
        out.emplace(prefix + item.key(), item.value());
    }
    return out;
}

std::uint64_t checksum(const torch::nn::Module& module) { return checksum(named_parameters(module)); }

std::string content_hash(std::string_view bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

std::string content_hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::Io, "cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return content_hash(buf.str());
}

} // namespace headsplat
