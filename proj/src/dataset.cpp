#include "rmm/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace rmm::dataset {

namespace {

void sample_color(Rng& rng, double out[3], double lo, double hi) {
    for (int i = 0; i < 3; ++i) out[i] = rng.uniform(lo, hi);
}

// smooth coverage of an implicit ellipse: 1 inside, 0 outside, ~1px falloff
double ellipse_coverage(double x, double y, double cx, double cy, double rx, double ry, double soft) {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    const double f = dx * dx + dy * dy;
    return std::clamp((1.0 - f) / soft + 0.5, 0.0, 1.0);
}

objectives::CropBox ellipse_box(double cx, double cy, double rx, double ry, int res, int min_size) {
    const double margin = 2.0 / res;
    int y0 = static_cast<int>(std::floor((cy - ry - margin) * res));
    int x0 = static_cast<int>(std::floor((cx - rx - margin) * res));
    int y1 = static_cast<int>(std::ceil((cy + ry + margin) * res));
    int x1 = static_cast<int>(std::ceil((cx + rx + margin) * res));
    while (y1 - y0 < min_size) { --y0; ++y1; }
    while (x1 - x0 < min_size) { --x0; ++x1; }
    y0 = std::clamp(y0, 0, res - min_size);
    x0 = std::clamp(x0, 0, res - min_size);
    y1 = std::clamp(y1, y0 + min_size, res);
    x1 = std::clamp(x1, x0 + min_size, res);
    return {y0, x0, y1 - y0, x1 - x0};
}

}  // namespace

ToyFaceSpec ToyFaceSpec::sample(Rng& rng) {
    ToyFaceSpec s{};
    s.head_cx = rng.uniform(0.47, 0.53);
    s.head_cy = rng.uniform(0.49, 0.55);
    s.head_rx = rng.uniform(0.30, 0.36);
    s.head_ry = rng.uniform(0.36, 0.42);
    s.eye_off_x = rng.uniform(0.36, 0.46);   // in head radii; box stays inside the head bbox
    s.eye_off_y = rng.uniform(-0.32, -0.16);
    s.eye_rx = rng.uniform(0.13, 0.19);
    s.eye_ry = rng.uniform(0.11, 0.17);
    s.mouth_off_y = rng.uniform(0.38, 0.52);
    s.mouth_rx = rng.uniform(0.34, 0.48);
    s.mouth_ry = rng.uniform(0.22, 0.34);
    s.mouth_band = rng.uniform(0.18, 0.30);
    sample_color(rng, s.bg_top, 0.1, 0.9);
    sample_color(rng, s.bg_bottom, 0.1, 0.9);
    sample_color(rng, s.skin, 0.35, 0.9);
    sample_color(rng, s.eye_color, 0.0, 0.25);
    sample_color(rng, s.mouth_color, 0.1, 0.5);
    s.mouth_color[0] = rng.uniform(0.5, 0.9);  // reddish
    s.texture_amp = rng.uniform(0.0, 0.03);
    s.texture_seed = rng.next_u64();
    return s;
}

Tensor render_face(const ToyFaceSpec& s, int resolution) {
    require(resolution >= 16, ErrorCode::Contract, "render_face: resolution must be >= 16");
    const int r = resolution;
    Tensor img({3, r, r});
    const double soft = 2.0 / r;  // ~1px smoothing in implicit units

    const double eye_l_cx = s.head_cx - s.eye_off_x * s.head_rx;
    const double eye_r_cx = s.head_cx + s.eye_off_x * s.head_rx;
    const double eye_cy = s.head_cy + s.eye_off_y * s.head_ry;
    const double eye_rx = s.eye_rx * s.head_rx, eye_ry = s.eye_ry * s.head_ry;
    const double mouth_cy = s.head_cy + s.mouth_off_y * s.head_ry;
    const double mouth_rx = s.mouth_rx * s.head_rx, mouth_ry = s.mouth_ry * s.head_ry;

    Rng texture(s.texture_seed);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
            const double uy = (y + 0.5) / r, ux = (x + 0.5) / r;
            double px[3];
            for (int c = 0; c < 3; ++c) px[c] = s.bg_top[c] + (s.bg_bottom[c] - s.bg_top[c]) * uy;

            const double head = ellipse_coverage(ux, uy, s.head_cx, s.head_cy, s.head_rx, s.head_ry, soft);
            for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - head) + s.skin[c] * head;

            const double eyes =
                std::max(ellipse_coverage(ux, uy, eye_l_cx, eye_cy, eye_rx, eye_ry, soft),
                         ellipse_coverage(ux, uy, eye_r_cx, eye_cy, eye_rx, eye_ry, soft));
            for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - eyes) + s.eye_color[c] * eyes;

            // lower half of an elliptical ring
            double mouth = 0.0;
            if (uy > mouth_cy - 0.5 * soft) {
                const double dx = (ux - s.head_cx) / mouth_rx, dy = (uy - mouth_cy) / mouth_ry;
                const double f = dx * dx + dy * dy;
                const double band = s.mouth_band;
                const double inner = std::clamp((f - (1.0 - band)) / soft + 0.5, 0.0, 1.0);
                const double outer = std::clamp(((1.0 + band) - f) / soft + 0.5, 0.0, 1.0);
                mouth = inner * outer;
            }
            for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - mouth) + s.mouth_color[c] * mouth;

            for (int c = 0; c < 3; ++c) {
                double v = px[c] + (s.texture_amp > 0.0 ? texture.uniform(-s.texture_amp, s.texture_amp) : 0.0);
                img.at3(c, y, x) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
            }
        }
    return img;
}

ComponentBoxes component_boxes(const ToyFaceSpec& s, int resolution) {
    const double eye_cy = s.head_cy + s.eye_off_y * s.head_ry;
    const double eye_rx = s.eye_rx * s.head_rx, eye_ry = s.eye_ry * s.head_ry;
    const int min_size = std::max(8, resolution / 8);
    ComponentBoxes b;
    b.left_eye = ellipse_box(s.head_cx - s.eye_off_x * s.head_rx, eye_cy, eye_rx, eye_ry, resolution, min_size);
    b.right_eye = ellipse_box(s.head_cx + s.eye_off_x * s.head_rx, eye_cy, eye_rx, eye_ry, resolution, min_size);
    b.mouth = ellipse_box(s.head_cx, s.head_cy + s.mouth_off_y * s.head_ry, s.mouth_rx * s.head_rx,
                          (s.mouth_ry * s.mouth_band + 0.05) * s.head_ry + s.mouth_ry * s.head_ry * 0.4,
                          resolution, min_size);
    return b;
}

std::vector<DatasetItem> synth_dataset(int count, int resolution, uint64_t seed) {
    require(count >= 1, ErrorCode::Contract, "synth_dataset: count must be >= 1");
    std::vector<DatasetItem> items;
    items.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng = Rng::substream(seed, "face", static_cast<uint64_t>(i));
        DatasetItem item;
        item.spec = ToyFaceSpec::sample(rng);
        item.image = render_face(item.spec, resolution);
        item.boxes = component_boxes(item.spec, resolution);
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace rmm::dataset
