#include "rmm/wavelet.hpp"

#include <cmath>

namespace rmm::wavelet {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;

// one analysis split: band [h,w] -> four children [h/2, w/2]
void split4(const Tensor& src, Tensor out[4]) {
    const int h = src.shape[0], w = src.shape[1];
    const int hh = h / 2, hw = w / 2;
    Tensor row_lo({h, hw}), row_hi({h, hw});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < hw; ++j) {
            const double a = src.data[static_cast<size_t>(i) * w + 2 * j];
            const double b = src.data[static_cast<size_t>(i) * w + 2 * j + 1];
            row_lo.data[static_cast<size_t>(i) * hw + j] = (a + b) * kInvSqrt2;
            row_hi.data[static_cast<size_t>(i) * hw + j] = (a - b) * kInvSqrt2;
        }
    for (int k = 0; k < 4; ++k) out[k] = Tensor({hh, hw});
    const Tensor* rows[2] = {&row_lo, &row_hi};
    for (int r = 0; r < 2; ++r)
        for (int i = 0; i < hh; ++i)
            for (int j = 0; j < hw; ++j) {
                const double a = rows[r]->data[static_cast<size_t>(2 * i) * hw + j];
                const double b = rows[r]->data[static_cast<size_t>(2 * i + 1) * hw + j];
                out[2 * r + 0].data[static_cast<size_t>(i) * hw + j] = (a + b) * kInvSqrt2;
                out[2 * r + 1].data[static_cast<size_t>(i) * hw + j] = (a - b) * kInvSqrt2;
            }
}

// exact synthesis of one split
Tensor merge4(const Tensor children[4]) {
    const int hh = children[0].shape[0], hw = children[0].shape[1];
    Tensor row_lo({2 * hh, hw}), row_hi({2 * hh, hw});
    Tensor* rows[2] = {&row_lo, &row_hi};
    for (int r = 0; r < 2; ++r)
        for (int i = 0; i < hh; ++i)
            for (int j = 0; j < hw; ++j) {
                const double lo = children[2 * r + 0].data[static_cast<size_t>(i) * hw + j];
                const double hi = children[2 * r + 1].data[static_cast<size_t>(i) * hw + j];
                rows[r]->data[static_cast<size_t>(2 * i) * hw + j] = (lo + hi) * kInvSqrt2;
                rows[r]->data[static_cast<size_t>(2 * i + 1) * hw + j] = (lo - hi) * kInvSqrt2;
            }
    Tensor out({2 * hh, 2 * hw});
    for (int i = 0; i < 2 * hh; ++i)
        for (int j = 0; j < hw; ++j) {
            const double lo = row_lo.data[static_cast<size_t>(i) * hw + j];
            const double hi = row_hi.data[static_cast<size_t>(i) * hw + j];
            out.data[static_cast<size_t>(i) * 2 * hw + 2 * j] = (lo + hi) * kInvSqrt2;
            out.data[static_cast<size_t>(i) * 2 * hw + 2 * j + 1] = (lo - hi) * kInvSqrt2;
        }
    return out;
}

void decompose(const Tensor& band, int level, std::vector<Tensor>& out) {
    if (level == 0) {
        out.push_back(band);
        return;
    }
    Tensor children[4];
    split4(band, children);
    for (int k = 0; k < 4; ++k) decompose(children[k], level - 1, out);
}

Tensor rebuild(const std::vector<Tensor>& bands, size_t base, int level) {
    if (level == 0) return bands[base];
    const size_t step = static_cast<size_t>(1) << (2 * (level - 1));
    Tensor children[4];
    for (int k = 0; k < 4; ++k) children[k] = rebuild(bands, base + static_cast<size_t>(k) * step, level - 1);
    return merge4(children);
}

}  // namespace

int code_length(int channel_count, int levels) {
    return channel_count * ((1 << (2 * levels)) - 1);
}

WaveletPacketTree wpd_forward(const Tensor& image, int levels) {
    require(image.rank() == 3, ErrorCode::Contract, "wpd_forward: need [C,H,W]");
    require(levels >= 1, ErrorCode::Contract, "wpd_forward: levels must be >= 1, got ", levels);
    const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
    const int m = 1 << levels;
    require(h % m == 0 && w % m == 0, ErrorCode::Contract,
            "wpd_forward: dimensions ", h, "x", w, " must be divisible by 2^levels = ", m);

    WaveletPacketTree tree;
    tree.levels = levels;
    tree.channel_count = c;
    tree.original_h = h;
    tree.original_w = w;
    tree.band_h = h / m;
    tree.band_w = w / m;
    tree.subbands.reserve(static_cast<size_t>(c) * tree.bands_per_channel());
    for (int ch = 0; ch < c; ++ch) {
        Tensor plane({h, w});
        for (int i = 0; i < h * w; ++i)
            plane.data[static_cast<size_t>(i)] = image.data[static_cast<size_t>(ch) * h * w + i];
        decompose(plane, levels, tree.subbands);
    }
    return tree;
}

Tensor wpd_inverse(const WaveletPacketTree& tree) {
    const int expected = tree.bands_per_channel();
    require(static_cast<int>(tree.subbands.size()) == expected * tree.channel_count, ErrorCode::Contract,
            "wpd_inverse: expected ", expected * tree.channel_count, " subbands, got ", tree.subbands.size());
    const int h = tree.band_h << tree.levels;
    const int w = tree.band_w << tree.levels;
    Tensor out({tree.channel_count, h, w});
    for (int ch = 0; ch < tree.channel_count; ++ch) {
        Tensor plane = rebuild(tree.subbands, static_cast<size_t>(ch) * expected, tree.levels);
        for (int i = 0; i < h * w; ++i)
            out.data[static_cast<size_t>(ch) * h * w + i] = plane.data[static_cast<size_t>(i)];
    }
    return out;
}

WaveletCode wavelet_style_code(const WaveletPacketTree& tree, CodePooling pooling) {
    require(tree.bands_per_channel() >= 2, ErrorCode::Contract, "wavelet_style_code: tree has no detail bands");
    WaveletCode code;
    code.channel_count = tree.channel_count;
    code.levels = tree.levels;
    const int per = tree.bands_per_channel();
    code.values.reserve(static_cast<size_t>(code_length(tree.channel_count, tree.levels)));
    for (int ch = 0; ch < tree.channel_count; ++ch)
        for (int k = 1; k < per; ++k) {
            const Tensor& band = tree.band(ch, k);
            double acc = 0.0;
            if (pooling == CodePooling::SignedMean)
                for (double v : band.data) acc += v;
            else
                for (double v : band.data) acc += std::fabs(v);
            code.values.push_back(acc / static_cast<double>(band.numel()));
        }
    return code;
}

Tensor reflect_pad_to_multiple(const Tensor& image, int multiple) {
    require(image.rank() == 3 && multiple >= 1, ErrorCode::Contract, "reflect_pad_to_multiple: need [C,H,W]");
    const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
    const int nh = (h + multiple - 1) / multiple * multiple;
    const int nw = (w + multiple - 1) / multiple * multiple;
    if (nh == h && nw == w) return image;
    require(nh - h < h && nw - w < w, ErrorCode::Contract,
            "reflect_pad_to_multiple: image ", h, "x", w, " too small for multiple ", multiple);
    Tensor out({c, nh, nw});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < nh; ++y) {
            const int sy = y < h ? y : 2 * h - 2 - y;
            for (int x = 0; x < nw; ++x) {
                const int sx = x < w ? x : 2 * w - 2 - x;
                out.at3(ch, y, x) = image.at3(ch, sy, sx);
            }
        }
    return out;
}

WaveletPacketTree wpd_forward_padded(const Tensor& image, int levels) {
    const int h = image.shape[1], w = image.shape[2];
    Tensor padded = reflect_pad_to_multiple(image, 1 << levels);
    WaveletPacketTree tree = wpd_forward(padded, levels);
    tree.original_h = h;
    tree.original_w = w;
    return tree;
}

Tensor wpd_inverse_cropped(const WaveletPacketTree& tree) {
    Tensor full = wpd_inverse(tree);
    if (full.shape[1] == tree.original_h && full.shape[2] == tree.original_w) return full;
    Tensor out({tree.channel_count, tree.original_h, tree.original_w});
    for (int c = 0; c < tree.channel_count; ++c)
        for (int y = 0; y < tree.original_h; ++y)
            for (int x = 0; x < tree.original_w; ++x) out.at3(c, y, x) = full.at3(c, y, x);
    return out;
}

}  // namespace rmm::wavelet
