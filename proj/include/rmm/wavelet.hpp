#pragma once

#include <vector>

#include "rmm/tensor.hpp"

namespace rmm::wavelet {

// Full wavelet packet decomposition with the orthonormal Haar pair
// ([1/sqrt2, 1/sqrt2], [1/sqrt2, -1/sqrt2]). Every band splits into four
// children per level, giving 4^n equal-size subbands; index 0 is the
// all-lowpass band. Subband order within a split: (row-low,col-low),
// (row-low,col-high), (row-high,col-low), (row-high,col-high), where the
// "row" filter runs along each row and the "col" filter down each column.
struct WaveletPacketTree {
    int levels = 0;
    int channel_count = 0;
    int original_h = 0, original_w = 0;  // pre-padding image size
    int band_h = 0, band_w = 0;
    // channel-major: subbands[ch * 4^n + k], each a [band_h, band_w] tensor
    std::vector<Tensor> subbands;

    int bands_per_channel() const { return 1 << (2 * levels); }
    const Tensor& band(int channel, int index) const {
        return subbands[static_cast<size_t>(channel) * bands_per_channel() + index];
    }
};

enum class CodePooling { SignedMean, AbsMean };

// Per-channel spatial means of the detail subbands (index >= 1), channel
// major. Length channel_count * (4^n - 1); 765 for n=4 on 3 channels.
struct WaveletCode {
    std::vector<double> values;
    int channel_count = 0;
    int levels = 0;
};

// image is [C,H,W] with H and W divisible by 2^levels
WaveletPacketTree wpd_forward(const Tensor& image, int levels);
Tensor wpd_inverse(const WaveletPacketTree& tree);

WaveletCode wavelet_style_code(const WaveletPacketTree& tree, CodePooling pooling = CodePooling::SignedMean);

// Reflect-pads bottom/right to the next multiple of `multiple`.
Tensor reflect_pad_to_multiple(const Tensor& image, int multiple);

// Pads as needed, decomposes, and records the unpadded size in the tree.
WaveletPacketTree wpd_forward_padded(const Tensor& image, int levels);

// Inverse followed by a crop back to original_h x original_w.
Tensor wpd_inverse_cropped(const WaveletPacketTree& tree);

int code_length(int channel_count, int levels);

}  // namespace rmm::wavelet
