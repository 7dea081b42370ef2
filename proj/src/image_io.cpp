#include "accsampler/image_io.hpp"

#include <png.h>

#include <cstring>

#include "accsampler/common.hpp"

namespace accsampler {

torch::Tensor read_png(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw MissingPathError(path.string());
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw Error("cannot decode png " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    auto hwc = torch::empty({static_cast<int64_t>(image.height), static_cast<int64_t>(image.width), 3},
                            torch::kUInt8);
    if (!png_image_finish_read(&image, nullptr, hwc.data_ptr<uint8_t>(), 0, nullptr)) {
        png_image_free(&image);
        throw Error("cannot decode png " + path.string() + ": " + image.message);
    }
    return hwc.permute({2, 0, 1}).contiguous();
}

void write_png(const std::filesystem::path& path, const torch::Tensor& chw) {
    TORCH_CHECK(chw.dim() == 3 && chw.size(0) == 3, "write_png expects a [3, H, W] tensor");
    torch::Tensor bytes = chw;
    if (chw.scalar_type() != torch::kUInt8) {
        bytes = chw.to(torch::kFloat32).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
    }
    auto hwc = bytes.permute({1, 2, 0}).contiguous();

    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(chw.size(2));
    image.height = static_cast<png_uint_32>(chw.size(1));
    image.format = PNG_FORMAT_RGB;
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!png_image_write_to_file(&image, path.c_str(), 0, hwc.data_ptr<uint8_t>(), 0, nullptr)) {
        throw Error("cannot write png " + path.string() + ": " + image.message);
    }
}

} // namespace accsampler
