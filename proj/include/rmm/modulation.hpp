#pragma once

#include <span>
#include <string>

#include "rmm/optim.hpp"
#include "rmm/tensor.hpp"

namespace rmm::modulation {

// Attentional denormalization block. The input feature is normalized at
// instance and layer level, each normalization is re-modulated by three
// affine sources (spatial map, noise vector, wavelet code) blended through a
// per-pixel softmax over the sources, and the two results are fused by a
// sigmoid gate computed from the un-normalized feature.
struct Rm3Config {
    int feature_channels = 0;  // C of the block input
    int spatial_channels = 0;  // channels of z_S
    int noise_dim = 0;
    int wavelet_dim = 0;
    bool per_channel_gate = false;  // gate emits C channels instead of 1
    double eps = 1e-5;
};

// parameter slots in a ParamStore
struct Rm3Params {
    Rm3Config cfg;
    size_t spatial_w = 0, spatial_b = 0;  // conv z_S -> [2C,H,W], split into gamma/beta
    size_t noise_w = 0, noise_b = 0;      // fc z_N -> [2C]
    size_t wavelet_w = 0, wavelet_b = 0;  // fc z_W -> [2C]
    size_t attn_i_w = 0, attn_i_b = 0;    // conv h_I -> 3 source logits
    size_t attn_l_w = 0, attn_l_b = 0;    // conv h_L -> 3 source logits
    size_t attn_o_w = 0, attn_o_b = 0;    // conv h -> gate logits

    static Rm3Params create(ParamStore& store, const std::string& prefix, const Rm3Config& cfg, Rng& rng);
};

// the same parameters as graph leaves
struct Rm3Nodes {
    Rm3Config cfg;
    NodeId spatial_w, spatial_b, noise_w, noise_b, wavelet_w, wavelet_b;
    NodeId attn_i_w, attn_i_b, attn_l_w, attn_l_b, attn_o_w, attn_o_b;
};

Rm3Nodes bind_rm3(const Rm3Params& p, std::span<const NodeId> bound);

struct BlockInput {
    NodeId h;          // [C,H,W]
    NodeId z_spatial;  // [C_S,Hs,Ws], resampled to (H,W) internally
    NodeId z_noise;    // [noise_dim]
    NodeId z_wavelet;  // [wavelet_dim]
};

struct NormResult {
    NodeId normalized;
    std::vector<double> mu, sigma;
};

NormResult instance_normalize(Graph& g, NodeId h, double eps = 1e-5);
NormResult layer_normalize(Graph& g, NodeId h, double eps = 1e-5);

// gamma (x) h_norm + beta; gamma/beta either [C,H,W] maps or [C] vectors
NodeId denormalize_branch(Graph& g, NodeId h_norm, NodeId gamma, NodeId beta);

struct AttentionMaps {
    NodeId spatial, noise, wavelet;  // each [1,H,W], summing to one pointwise
};

AttentionMaps attention_maps(Graph& g, NodeId h_norm, NodeId head_w, NodeId head_b);

// per-block attention tensors, retained for visualization
struct Rm3Trace {
    AttentionMaps instance;
    AttentionMaps layer;
    NodeId gate;
};

NodeId rm3_forward(Graph& g, const BlockInput& input, const Rm3Nodes& nodes, Rm3Trace* trace = nullptr);

}  // namespace rmm::modulation
