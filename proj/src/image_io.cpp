#include "rmm/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace rmm::io {

Tensor read_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    require(png_image_begin_read_from_file(&image, path.c_str()) != 0, ErrorCode::Io,
            "cannot read png: ", path, " (", image.message, ")");
    image.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
        const std::string msg = image.message;
        png_image_free(&image);
        raise(ErrorCode::Io, "png decode failed: ", path, " (", msg, ")");
    }
    const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
    Tensor out({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at3(c, y, x) = buffer[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0;
    return out;
}

void write_png(const std::string& path, const Tensor& img) {
    require(img.rank() == 3 && (img.shape[0] == 1 || img.shape[0] == 3), ErrorCode::Contract,
            "write_png: need [1,H,W] or [3,H,W]");
    const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    std::vector<uint8_t> buffer(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < 3; ++k) {
                const double v = img.at3(c == 1 ? 0 : k, y, x);
                buffer[(static_cast<size_t>(y) * w + x) * 3 + k] =
                    static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_RGB;
    require(png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr) != 0,
            ErrorCode::Io, "cannot write png: ", path, " (", image.message, ")");
}

Tensor normalize01(const Tensor& t) {
    double lo = t.data[0], hi = t.data[0];
    for (double v : t.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor out = t;
    if (hi - lo < 1e-12) {
        for (auto& v : out.data) v = 0.5;
        return out;
    }
    for (auto& v : out.data) v = (v - lo) / (hi - lo);
    return out;
}

Tensor tile_grid(const std::vector<Tensor>& tiles, int cols) {
    require(!tiles.empty() && cols >= 1, ErrorCode::Contract, "tile_grid: nothing to tile");
    const int c = tiles[0].shape[0], th = tiles[0].shape[1], tw = tiles[0].shape[2];
    for (const auto& t : tiles)
        require(t.shape == tiles[0].shape, ErrorCode::Contract, "tile_grid: tiles must share a shape");
    const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
    const int gh = rows * th + (rows - 1), gw = cols * tw + (cols - 1);
    Tensor grid = Tensor::full({c, gh, gw}, 1.0);
    for (size_t i = 0; i < tiles.size(); ++i) {
        const int r = static_cast<int>(i) / cols, col = static_cast<int>(i) % cols;
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x)
                    grid.at3(ch, r * (th + 1) + y, col * (tw + 1) + x) = tiles[i].at3(ch, y, x);
    }
    return grid;
}

}  // namespace rmm::io
