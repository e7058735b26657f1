#pragma once

#include <cstdint>
#include <vector>

#include "rmm/objectives.hpp"
#include "rmm/rng.hpp"
#include "rmm/tensor.hpp"

namespace rmm::dataset {

// Procedural face-like images: background gradient, head ellipse, two eyes,
// a mouth arc, and texture noise, all sampled from one seed. Component crop
// rectangles follow analytically from the geometry.
struct ToyFaceSpec {
    // geometry in unit image coordinates; radii as fractions of the head radii
    double head_cx, head_cy, head_rx, head_ry;
    double eye_off_x, eye_off_y;  // eye center offset from head center, in head radii
    double eye_rx, eye_ry;        // in head radii
    double mouth_off_y, mouth_rx, mouth_ry, mouth_band;
    double bg_top[3], bg_bottom[3], skin[3], eye_color[3], mouth_color[3];
    double texture_amp;
    uint64_t texture_seed;

    static ToyFaceSpec sample(Rng& rng);
};

struct ComponentBoxes {
    objectives::CropBox left_eye, right_eye, mouth;
};

// [3,R,R] in [0,1], quantized to 8 bits so the in-memory image equals its
// PNG round trip
Tensor render_face(const ToyFaceSpec& spec, int resolution);

ComponentBoxes component_boxes(const ToyFaceSpec& spec, int resolution);

struct DatasetItem {
    Tensor image;  // [3,R,R] in [0,1]
    ComponentBoxes boxes;
    ToyFaceSpec spec;
};

std::vector<DatasetItem> synth_dataset(int count, int resolution, uint64_t seed);

}  // namespace rmm::dataset
