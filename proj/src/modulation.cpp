#include "rmm/modulation.hpp"

namespace rmm::modulation {

Rm3Params Rm3Params::create(ParamStore& store, const std::string& prefix, const Rm3Config& cfg, Rng& rng) {
    require(cfg.feature_channels > 0 && cfg.spatial_channels > 0 && cfg.noise_dim > 0 && cfg.wavelet_dim > 0,
            ErrorCode::Contract, "rm3: config dims must be positive");
    const int c = cfg.feature_channels;
    Rm3Params p;
    p.cfg = cfg;
    p.spatial_w = store.create_fan_in(prefix + ".spatial.w", {2 * c, cfg.spatial_channels, 3, 3},
                                      cfg.spatial_channels * 9, rng);
    p.spatial_b = store.create_fan_in(prefix + ".spatial.b", {2 * c}, cfg.spatial_channels * 9, rng);
    p.noise_w = store.create_fan_in(prefix + ".noise.w", {2 * c, cfg.noise_dim}, cfg.noise_dim, rng);
    p.noise_b = store.create_fan_in(prefix + ".noise.b", {2 * c}, cfg.noise_dim, rng);
    p.wavelet_w = store.create_fan_in(prefix + ".wavelet.w", {2 * c, cfg.wavelet_dim}, cfg.wavelet_dim, rng);
    p.wavelet_b = store.create_fan_in(prefix + ".wavelet.b", {2 * c}, cfg.wavelet_dim, rng);
    p.attn_i_w = store.create_fan_in(prefix + ".attn_i.w", {3, c, 3, 3}, c * 9, rng);
    p.attn_i_b = store.create_fan_in(prefix + ".attn_i.b", {3}, c * 9, rng);
    p.attn_l_w = store.create_fan_in(prefix + ".attn_l.w", {3, c, 3, 3}, c * 9, rng);
    p.attn_l_b = store.create_fan_in(prefix + ".attn_l.b", {3}, c * 9, rng);
    const int gate_c = cfg.per_channel_gate ? c : 1;
    p.attn_o_w = store.create_fan_in(prefix + ".attn_o.w", {gate_c, c, 3, 3}, c * 9, rng);
    p.attn_o_b = store.create_fan_in(prefix + ".attn_o.b", {gate_c}, c * 9, rng);
    return p;
}

Rm3Nodes bind_rm3(const Rm3Params& p, std::span<const NodeId> bound) {
    Rm3Nodes n;
    n.cfg = p.cfg;
    n.spatial_w = bound[p.spatial_w];
    n.spatial_b = bound[p.spatial_b];
    n.noise_w = bound[p.noise_w];
    n.noise_b = bound[p.noise_b];
    n.wavelet_w = bound[p.wavelet_w];
    n.wavelet_b = bound[p.wavelet_b];
    n.attn_i_w = bound[p.attn_i_w];
    n.attn_i_b = bound[p.attn_i_b];
    n.attn_l_w = bound[p.attn_l_w];
    n.attn_l_b = bound[p.attn_l_b];
    n.attn_o_w = bound[p.attn_o_w];
    n.attn_o_b = bound[p.attn_o_b];
    return n;
}

NormResult instance_normalize(Graph& g, NodeId h, double eps) {
    // copy the shape: node creation below may reallocate graph storage
    const std::vector<int> shape = g.value(h).shape;
    require(shape.size() == 3 && shape[1] * shape[2] >= 2, ErrorCode::Contract,
            "instance_normalize: need [C,H,W] with at least 2 spatial positions");
    NodeId out = g.instance_norm(h, eps);
    const auto& stats = g.norm_stats(out);
    const int c = shape[0];
    NormResult r;
    r.normalized = out;
    r.mu.assign(stats.begin(), stats.begin() + c);
    r.sigma.assign(stats.begin() + c, stats.end());
    return r;
}

NormResult layer_normalize(Graph& g, NodeId h, double eps) {
    require(g.value(h).rank() == 3 && g.value(h).numel() >= 2, ErrorCode::Contract,
            "layer_normalize: need [C,H,W]");
    NodeId out = g.layer_norm(h, eps);
    const auto& stats = g.norm_stats(out);
    return {out, {stats[0]}, {stats[1]}};
}

NodeId denormalize_branch(Graph& g, NodeId h_norm, NodeId gamma, NodeId beta) {
    const std::vector<int> shape = g.value(h_norm).shape;
    require(shape.size() == 3, ErrorCode::Contract, "denormalize_branch: need [C,H,W]");
    NodeId gm = gamma, bt = beta;
    if (g.value(gamma).rank() == 1) gm = g.broadcast_vec(gamma, shape[1], shape[2]);
    if (g.value(beta).rank() == 1) bt = g.broadcast_vec(beta, shape[1], shape[2]);
    require(g.value(gm).shape == shape && g.value(bt).shape == shape, ErrorCode::Contract,
            "denormalize_branch: gamma/beta not broadcastable to the feature shape");
    return g.add(g.mul(gm, h_norm), bt);
}

AttentionMaps attention_maps(Graph& g, NodeId h_norm, NodeId head_w, NodeId head_b) {
    require(g.value(head_w).shape[0] == 3, ErrorCode::Contract, "attention_maps: head must emit 3 channels");
    NodeId logits = g.conv2d(h_norm, head_w, head_b, 1, 1);
    NodeId soft = g.softmax(logits, 0);
    return {g.slice0(soft, 0, 1), g.slice0(soft, 1, 1), g.slice0(soft, 2, 1)};
}

namespace {

// one denormalization level: shared affine sources, per-level attention head
NodeId denormalize_level(Graph& g, NodeId h_norm, NodeId gamma_s, NodeId beta_s, NodeId gamma_n,
                         NodeId beta_n, NodeId gamma_w, NodeId beta_w, NodeId attn_w, NodeId attn_b,
                         AttentionMaps* maps_out) {
    const AttentionMaps maps = attention_maps(g, h_norm, attn_w, attn_b);
    if (maps_out) *maps_out = maps;
    NodeId s = g.mul_map(denormalize_branch(g, h_norm, gamma_s, beta_s), maps.spatial);
    NodeId n = g.mul_map(denormalize_branch(g, h_norm, gamma_n, beta_n), maps.noise);
    NodeId w = g.mul_map(denormalize_branch(g, h_norm, gamma_w, beta_w), maps.wavelet);
    return g.add(g.add(s, n), w);
}

}  // namespace

NodeId rm3_forward(Graph& g, const BlockInput& input, const Rm3Nodes& nodes, Rm3Trace* trace) {
    const Rm3Config& cfg = nodes.cfg;
    const std::vector<int> hshape = g.value(input.h).shape;
    require(hshape.size() == 3 && hshape[0] == cfg.feature_channels, ErrorCode::Contract,
            "rm3_forward: feature has ", hshape[0], " channels, config says ", cfg.feature_channels);
    const int c = cfg.feature_channels, h = hshape[1], w = hshape[2];

    NodeId z_s = input.z_spatial;
    const std::vector<int> zshape = g.value(z_s).shape;
    require(zshape.size() == 3 && zshape[0] == cfg.spatial_channels, ErrorCode::Contract,
            "rm3_forward: z_S has ", zshape[0], " channels, config says ", cfg.spatial_channels);
    if (zshape[1] != h || zshape[2] != w) z_s = g.resize_bilinear(z_s, h, w);

    // shared affine heads: 2C outputs split into gamma and beta
    NodeId sp = g.conv2d(z_s, nodes.spatial_w, nodes.spatial_b, 1, 1);
    NodeId gamma_s = g.slice0(sp, 0, c), beta_s = g.slice0(sp, c, c);
    NodeId nv = g.fully_connected(input.z_noise, nodes.noise_w, nodes.noise_b);
    NodeId gamma_n = g.slice0(nv, 0, c), beta_n = g.slice0(nv, c, c);
    NodeId wv = g.fully_connected(input.z_wavelet, nodes.wavelet_w, nodes.wavelet_b);
    NodeId gamma_w = g.slice0(wv, 0, c), beta_w = g.slice0(wv, c, c);

    NodeId h_i = instance_normalize(g, input.h, cfg.eps).normalized;
    NodeId h_l = layer_normalize(g, input.h, cfg.eps).normalized;

    AttentionMaps maps_i, maps_l;
    NodeId denorm_i = denormalize_level(g, h_i, gamma_s, beta_s, gamma_n, beta_n, gamma_w, beta_w,
                                        nodes.attn_i_w, nodes.attn_i_b, &maps_i);
    NodeId denorm_l = denormalize_level(g, h_l, gamma_s, beta_s, gamma_n, beta_n, gamma_w, beta_w,
                                        nodes.attn_l_w, nodes.attn_l_b, &maps_l);

    NodeId gate_logits = g.conv2d(input.h, nodes.attn_o_w, nodes.attn_o_b, 1, 1);
    NodeId gate = g.sigmoid(gate_logits);
    NodeId out;
    if (cfg.per_channel_gate) {
        NodeId inv_gate = g.add_scalar(g.mul_scalar(gate, -1.0), 1.0);
        out = g.add(g.mul(denorm_i, gate), g.mul(denorm_l, inv_gate));
    } else {
        NodeId inv_gate = g.add_scalar(g.mul_scalar(gate, -1.0), 1.0);
        out = g.add(g.mul_map(denorm_i, gate), g.mul_map(denorm_l, inv_gate));
    }
    if (trace) *trace = {maps_i, maps_l, gate};
    return out;
}

}  // namespace rmm::modulation
