#include "headsplat/image_io.hpp"

#include <cstring>
#include <vector>

#include <png.h>

#include "headsplat/errors.hpp"
#include "headsplat/tensor_store.hpp"

namespace headsplat {

torch::Tensor read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        fail(ErrorCode::Io, "cannot read PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        fail(ErrorCode::Io, "cannot decode PNG " + path.string() + ": " + image.message);
    }
    const auto h = static_cast<std::int64_t>(image.height);
    const auto w = static_cast<std::int64_t>(image.width);
    auto bytes = torch::from_blob(buffer.data(), {h, w, 3}, torch::kUInt8);
    return bytes.to(torch::kFloat32).div_(255.0f);
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
    require(image.dim() == 3 && image.size(2) >= 3, ErrorCode::ShapeMismatch, "write_png expects H×W×C with C>=3");
    auto rgb = image.detach()
                   .to(torch::kCPU)
                   .slice(2, 0, 3)
                   .to(torch::kFloat64)
                   .clamp(0.0, 1.0)
                   .mul(255.0)
                   .round()
                   .to(torch::kUInt8)
                   .contiguous();
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    png_image out;
    std::memset(&out, 0, sizeof(out));
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(rgb.size(1));
    out.height = static_cast<png_uint_32>(rgb.size(0));
    out.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&out, path.c_str(), 0, rgb.data_ptr<std::uint8_t>(), 0, nullptr)) {
        fail(ErrorCode::Io, "cannot write PNG " + path.string() + ": " + out.message);
    }
}

void write_raw_dump(const std::filesystem::path& dir, const std::map<std::string, torch::Tensor>& tensors) {
    TensorMap f32;
    for (const auto& [name, t] : tensors) {
        f32.emplace(name, t.detach().to(torch::kCPU, torch::kFloat32));
    }
    save_tensor_store(dir, f32, {{"kind", "raw_dump"}});
}

} // namespace headsplat
