#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rmm/gradcheck.hpp"
#include "rmm/modulation.hpp"
#include "rmm/rng.hpp"

using namespace rmm;
using namespace rmm::modulation;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

constexpr int kC = 3, kH = 6, kW = 6, kCs = 2, kNd = 5, kWd = 4;

// leaf order used by all block-level checks below:
// [h, z_S, z_N, z_W, spatial_w, spatial_b, noise_w, noise_b, wavelet_w,
//  wavelet_b, attn_i_w, attn_i_b, attn_l_w, attn_l_b, attn_o_w, attn_o_b]
std::vector<Tensor> random_block_inputs(Rng& rng) {
    std::vector<Tensor> in;
    in.push_back(random_tensor({kC, kH, kW}, rng));
    in.push_back(random_tensor({kCs, 4, 4}, rng));
    in.push_back(random_tensor({kNd}, rng));
    in.push_back(random_tensor({kWd}, rng));
    in.push_back(random_tensor({2 * kC, kCs, 3, 3}, rng, -0.4, 0.4));
    in.push_back(random_tensor({2 * kC}, rng, -0.2, 0.2));
    in.push_back(random_tensor({2 * kC, kNd}, rng, -0.4, 0.4));
    in.push_back(random_tensor({2 * kC}, rng, -0.2, 0.2));
    in.push_back(random_tensor({2 * kC, kWd}, rng, -0.4, 0.4));
    in.push_back(random_tensor({2 * kC}, rng, -0.2, 0.2));
    in.push_back(random_tensor({3, kC, 3, 3}, rng, -0.4, 0.4));
    in.push_back(random_tensor({3}, rng, -0.2, 0.2));
    in.push_back(random_tensor({3, kC, 3, 3}, rng, -0.4, 0.4));
    in.push_back(random_tensor({3}, rng, -0.2, 0.2));
    in.push_back(random_tensor({1, kC, 3, 3}, rng, -0.4, 0.4));
    in.push_back(random_tensor({1}, rng, -0.2, 0.2));
    return in;
}

Rm3Nodes nodes_from_ids(const std::vector<NodeId>& in) {
    Rm3Nodes n;
    n.cfg = {kC, kCs, kNd, kWd, false, 1e-5};
    n.spatial_w = in[4];
    n.spatial_b = in[5];
    n.noise_w = in[6];
    n.noise_b = in[7];
    n.wavelet_w = in[8];
    n.wavelet_b = in[9];
    n.attn_i_w = in[10];
    n.attn_i_b = in[11];
    n.attn_l_w = in[12];
    n.attn_l_b = in[13];
    n.attn_o_w = in[14];
    n.attn_o_b = in[15];
    return n;
}

NodeId forward_from_ids(Graph& g, const std::vector<NodeId>& in, Rm3Trace* trace = nullptr) {
    return rm3_forward(g, {in[0], in[1], in[2], in[3]}, nodes_from_ids(in), trace);
}

}  // namespace

TEST_CASE("instance normalization: constant channel maps to zero") {
    Graph g;
    Tensor t = Tensor::full({2, 4, 4}, 3.7);
    auto r = instance_normalize(g, g.leaf(t));
    for (double v : g.value(r.normalized).data) CHECK(std::fabs(v) < 1e-9);
    CHECK(r.mu[0] == doctest::Approx(3.7));
}

TEST_CASE("instance normalization: already standardized channel passes through") {
    Graph g;
    Tensor t({1, 1, 2}, {-1.0, 1.0});
    auto r = instance_normalize(g, g.leaf(t));
    CHECK(g.value(r.normalized).data[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(g.value(r.normalized).data[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("instance normalization moments match a direct oracle") {
    Rng rng(3);
    Tensor t = random_tensor({8, 16, 16}, rng);
    Graph g;
    auto r = instance_normalize(g, g.leaf(t));
    const auto& out = g.value(r.normalized);
    for (int c = 0; c < 8; ++c) {
        double mu = 0.0;
        for (int i = 0; i < 256; ++i) mu += t.data[static_cast<size_t>(c) * 256 + i];
        mu /= 256.0;
        double var = 0.0;
        for (int i = 0; i < 256; ++i) {
            const double d = t.data[static_cast<size_t>(c) * 256 + i] - mu;
            var += d * d;
        }
        var /= 256.0;
        const double sigma = std::sqrt(var + 1e-5);
        CHECK(r.mu[static_cast<size_t>(c)] == doctest::Approx(mu).epsilon(1e-12));
        CHECK(r.sigma[static_cast<size_t>(c)] == doctest::Approx(sigma).epsilon(1e-12));
        double out_mu = 0.0;
        for (int i = 0; i < 256; ++i) out_mu += out.data[static_cast<size_t>(c) * 256 + i];
        CHECK(std::fabs(out_mu / 256.0) < 1e-9);
        for (int i = 0; i < 256; ++i) {
            const double expected = (t.data[static_cast<size_t>(c) * 256 + i] - mu) / sigma;
            CHECK(std::fabs(out.data[static_cast<size_t>(c) * 256 + i] - expected) < 1e-9);
        }
    }
}

TEST_CASE("layer normalization: constant map is zero, channel-flat map is not") {
    Graph g;
    auto r = layer_normalize(g, g.leaf(Tensor::full({3, 4, 4}, -2.0)));
    for (double v : g.value(r.normalized).data) CHECK(std::fabs(v) < 1e-9);

    // equal along channels, varying spatially: instance norm sees per-channel
    // structure, layer norm sees the shared spatial ramp
    Tensor t({2, 2, 2});
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 4; ++i) t.data[static_cast<size_t>(c) * 4 + i] = static_cast<double>(i);
    Graph g2;
    NodeId leaf = g2.leaf(t);
    auto rl = layer_normalize(g2, leaf);
    auto ri = instance_normalize(g2, leaf);
    double l_mass = 0.0, i_mass = 0.0;
    for (double v : g2.value(rl.normalized).data) l_mass += std::fabs(v);
    for (double v : g2.value(ri.normalized).data) i_mass += std::fabs(v);
    CHECK(l_mass > 1.0);
    CHECK(i_mass > 1.0);  // here both are nonzero; the distinguishing case follows
    Tensor flat({2, 1, 2}, {5.0, 5.0, -5.0, -5.0});  // constant per channel
    Graph g3;
    NodeId leaf3 = g3.leaf(flat);
    auto ri3 = instance_normalize(g3, leaf3);
    auto rl3 = layer_normalize(g3, leaf3);
    for (double v : g3.value(ri3.normalized).data) CHECK(std::fabs(v) < 1e-6);
    double l3 = 0.0;
    for (double v : g3.value(rl3.normalized).data) l3 += std::fabs(v);
    CHECK(l3 > 1.0);
}

TEST_CASE("layer normalization moments match a direct oracle") {
    Rng rng(5);
    Tensor t = random_tensor({4, 8, 8}, rng);
    Graph g;
    auto r = layer_normalize(g, g.leaf(t));
    double mu = 0.0;
    for (double v : t.data) mu += v;
    mu /= static_cast<double>(t.numel());
    double var = 0.0;
    for (double v : t.data) var += (v - mu) * (v - mu);
    var /= static_cast<double>(t.numel());
    CHECK(r.mu[0] == doctest::Approx(mu).epsilon(1e-12));
    CHECK(r.sigma[0] == doctest::Approx(std::sqrt(var + 1e-5)).epsilon(1e-12));
    for (size_t i = 0; i < t.data.size(); ++i)
        CHECK(std::fabs(g.value(r.normalized).data[i] - (t.data[i] - mu) / r.sigma[0]) < 1e-9);
}

TEST_CASE("denormalize_branch identity, constant, and oracle") {
    Rng rng(7);
    Tensor h = random_tensor({2, 3, 3}, rng);
    Graph g;
    NodeId hn = g.leaf(h);
    NodeId one = g.leaf(Tensor::full({2}, 1.0));
    NodeId zero = g.leaf(Tensor({2}));
    NodeId ident = denormalize_branch(g, hn, one, zero);
    for (size_t i = 0; i < h.data.size(); ++i) CHECK(g.value(ident).data[i] == h.data[i]);

    NodeId beta = g.leaf(Tensor({2}, {0.5, -1.5}));
    NodeId flat = denormalize_branch(g, hn, zero, beta);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 9; ++i)
            CHECK(g.value(flat).data[static_cast<size_t>(c) * 9 + i] == (c == 0 ? 0.5 : -1.5));

    Tensor gamma_map = random_tensor({2, 3, 3}, rng);
    Tensor beta_map = random_tensor({2, 3, 3}, rng);
    NodeId full = denormalize_branch(g, hn, g.leaf(gamma_map), g.leaf(beta_map));
    for (size_t i = 0; i < h.data.size(); ++i)
        CHECK(g.value(full).data[i] ==
              doctest::Approx(gamma_map.data[i] * h.data[i] + beta_map.data[i]).epsilon(1e-15));

    NodeId bad = g.leaf(Tensor({3}));
    CHECK_THROWS_AS(denormalize_branch(g, hn, bad, zero), Error);
}

TEST_CASE("attention maps: uniform at zero head, saturated by bias, sums to one") {
    Rng rng(11);
    Tensor h = random_tensor({3, 5, 5}, rng);
    {
        Graph g;
        auto maps = attention_maps(g, g.leaf(h), g.leaf(Tensor({3, 3, 3, 3})), g.leaf(Tensor({3})));
        for (double v : g.value(maps.spatial).data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));
        for (double v : g.value(maps.noise).data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));
    }
    {
        Graph g;
        auto maps = attention_maps(g, g.leaf(h), g.leaf(Tensor({3, 3, 3, 3})),
                                   g.leaf(Tensor({3}, {10.0, -10.0, -10.0})));
        for (double v : g.value(maps.spatial).data) CHECK(v > 0.99999);
        for (double v : g.value(maps.noise).data) CHECK(v < 1e-5);
        for (double v : g.value(maps.wavelet).data) CHECK(v < 1e-5);
    }
    {
        Graph g;
        Tensor w = random_tensor({3, 3, 3, 3}, rng);
        Tensor b = random_tensor({3}, rng);
        auto maps = attention_maps(g, g.leaf(h), g.leaf(w), g.leaf(b));
        // per-pixel softmax oracle over the raw conv logits
        Graph go;
        NodeId logits = go.conv2d(go.leaf(h), go.leaf(w), go.leaf(b), 1, 1);
        const Tensor& lt = go.value(logits);
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                double m = std::max({lt.at3(0, y, x), lt.at3(1, y, x), lt.at3(2, y, x)});
                double e0 = std::exp(lt.at3(0, y, x) - m);
                double e1 = std::exp(lt.at3(1, y, x) - m);
                double e2 = std::exp(lt.at3(2, y, x) - m);
                const double s = e0 + e1 + e2;
                CHECK(g.value(maps.spatial).at3(0, y, x) == doctest::Approx(e0 / s).epsilon(1e-12));
                CHECK(g.value(maps.noise).at3(0, y, x) == doctest::Approx(e1 / s).epsilon(1e-12));
                CHECK(g.value(maps.wavelet).at3(0, y, x) == doctest::Approx(e2 / s).epsilon(1e-12));
                const double total = g.value(maps.spatial).at3(0, y, x) + g.value(maps.noise).at3(0, y, x) +
                                     g.value(maps.wavelet).at3(0, y, x);
                CHECK(std::fabs(total - 1.0) <= 1e-9);
            }
    }
}

TEST_CASE("rm3_forward gate saturation: bias +20 selects the instance branch") {
    Rng rng(13);
    auto inputs = random_block_inputs(rng);
    inputs[15] = Tensor({1}, {20.0});
    for (auto& v : inputs[14].data) v = 0.0;  // keep the gate purely bias-driven

    Graph g;
    std::vector<NodeId> ids;
    for (const auto& t : inputs) ids.push_back(g.leaf(t));
    Rm3Trace trace;
    NodeId out = forward_from_ids(g, ids, &trace);

    // the instance-branch value, rebuilt from the same graph pieces
    for (double v : g.value(trace.gate).data) CHECK(v > 1.0 - 1e-8);
    // out must equal the instance denormalization within gate leakage
    Graph g2;
    std::vector<NodeId> ids2;
    for (const auto& t : inputs) ids2.push_back(g2.leaf(t));
    Rm3Trace trace2;
    NodeId out2 = forward_from_ids(g2, ids2, &trace2);
    (void)out2;
    // reconstruct H_I by zeroing the layer branch: gate bias -> +inf equivalent
    // comparison: |out - H_I| <= leak * |H_I - H_L| bound, checked numerically
    // via the identity out = g*H_I + (1-g)*H_L
    const auto& gate = g.value(trace.gate);
    Graph gi;
    std::vector<NodeId> idsi;
    for (const auto& t : inputs) idsi.push_back(gi.leaf(t));
    // rebuild both denormalization levels explicitly
    Rm3Nodes nd = nodes_from_ids(idsi);
    NodeId h_i = instance_normalize(gi, idsi[0]).normalized;
    NodeId z_s = gi.resize_bilinear(idsi[1], kH, kW);
    NodeId sp = gi.conv2d(z_s, nd.spatial_w, nd.spatial_b, 1, 1);
    NodeId nv = gi.fully_connected(idsi[2], nd.noise_w, nd.noise_b);
    NodeId wv = gi.fully_connected(idsi[3], nd.wavelet_w, nd.wavelet_b);
    auto maps = attention_maps(gi, h_i, nd.attn_i_w, nd.attn_i_b);
    NodeId s_i = gi.mul_map(denormalize_branch(gi, h_i, gi.slice0(sp, 0, kC), gi.slice0(sp, kC, kC)), maps.spatial);
    NodeId n_i = gi.mul_map(denormalize_branch(gi, h_i, gi.slice0(nv, 0, kC), gi.slice0(nv, kC, kC)), maps.noise);
    NodeId w_i = gi.mul_map(denormalize_branch(gi, h_i, gi.slice0(wv, 0, kC), gi.slice0(wv, kC, kC)), maps.wavelet);
    NodeId h_i_full = gi.add(gi.add(s_i, n_i), w_i);
    for (size_t i = 0; i < g.value(out).data.size(); ++i)
        CHECK(g.value(out).data[i] == doctest::Approx(gi.value(h_i_full).data[i]).epsilon(1e-6));
    (void)gate;
}

TEST_CASE("rm3_forward collapse: unit gammas and uniform attention blend the two norms") {
    Rng rng(17);
    auto inputs = random_block_inputs(rng);
    // affine heads emit gamma=1, beta=0
    for (int slot : {4, 6, 8}) for (auto& v : inputs[static_cast<size_t>(slot)].data) v = 0.0;
    for (int slot : {5, 7, 9}) {
        auto& b = inputs[static_cast<size_t>(slot)];
        for (int i = 0; i < kC; ++i) b.data[static_cast<size_t>(i)] = 1.0;
        for (int i = kC; i < 2 * kC; ++i) b.data[static_cast<size_t>(i)] = 0.0;
    }
    // uniform attention maps
    for (int slot : {10, 11, 12, 13}) for (auto& v : inputs[static_cast<size_t>(slot)].data) v = 0.0;

    Graph g;
    std::vector<NodeId> ids;
    for (const auto& t : inputs) ids.push_back(g.leaf(t));
    Rm3Trace trace;
    NodeId out = forward_from_ids(g, ids, &trace);

    NodeId h_i = instance_normalize(g, ids[0]).normalized;
    NodeId h_l = layer_normalize(g, ids[0]).normalized;
    const auto& gate = g.value(trace.gate);
    const auto& hi = g.value(h_i);
    const auto& hl = g.value(h_l);
    for (int c = 0; c < kC; ++c)
        for (int y = 0; y < kH; ++y)
            for (int x = 0; x < kW; ++x) {
                const double m = gate.at3(0, y, x);
                const double expected = m * hi.at3(c, y, x) + (1.0 - m) * hl.at3(c, y, x);
                CHECK(g.value(out).at3(c, y, x) == doctest::Approx(expected).epsilon(1e-13));
            }
}

TEST_CASE("rm3_forward full gradient check") {
    Rng rng(19);
    auto inputs = random_block_inputs(rng);
    auto build = [](Graph& g, const std::vector<NodeId>& in) {
        NodeId out = forward_from_ids(g, in);
        // a non-symmetric scalar readout
        NodeId w = g.leaf(Tensor::full({kC, kH, kW}, 0.3), false);
        return g.mean_all(g.mul(out, g.add(w, out)));
    };
    auto res = grad_check(build, inputs, rng, 60);
    CHECK(res.coords_checked == 60);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("rm3_forward per-channel gate variant") {
    Rng rng(23);
    auto inputs = random_block_inputs(rng);
    inputs[14] = random_tensor({kC, kC, 3, 3}, rng, -0.4, 0.4);
    inputs[15] = random_tensor({kC}, rng, -0.2, 0.2);
    Graph g;
    std::vector<NodeId> ids;
    for (const auto& t : inputs) ids.push_back(g.leaf(t));
    Rm3Nodes n = nodes_from_ids(ids);
    n.cfg.per_channel_gate = true;
    Rm3Trace trace;
    NodeId out = rm3_forward(g, {ids[0], ids[1], ids[2], ids[3]}, n, &trace);
    CHECK(g.value(out).shape == std::vector<int>{kC, kH, kW});
    CHECK(g.value(trace.gate).shape == std::vector<int>{kC, kH, kW});
}

TEST_CASE("instance norm is invariant to positive per-channel affine rescaling") {
    Rng rng(29);
    // variance well above the 1e-5 eps guard, which bounds the deviation
    Tensor h = random_tensor({3, 8, 8}, rng, -12.0, 12.0);
    Tensor h2 = h;
    const double scale[3] = {2.0, 0.5, 3.0};
    const double shift[3] = {1.0, -2.0, 0.25};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 64; ++i)
            h2.data[static_cast<size_t>(c) * 64 + i] = scale[c] * h.data[static_cast<size_t>(c) * 64 + i] + shift[c];
    Graph g;
    auto a = instance_normalize(g, g.leaf(h));
    auto b = instance_normalize(g, g.leaf(h2));
    for (size_t i = 0; i < h.data.size(); ++i)
        CHECK(std::fabs(g.value(a.normalized).data[i] - g.value(b.normalized).data[i]) < 1e-6);
}

TEST_CASE("rm3_forward is continuous: small perturbations stay small") {
    Rng rng(31);
    auto inputs = random_block_inputs(rng);
    auto eval = [&](const std::vector<Tensor>& in) {
        Graph g;
        std::vector<NodeId> ids;
        for (const auto& t : in) ids.push_back(g.leaf(t));
        return g.value(forward_from_ids(g, ids));
    };
    const Tensor base = eval(inputs);
    const double delta = 1e-6;
    for (size_t which = 0; which < 4; ++which) {
        auto perturbed = inputs;
        const size_t idx = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(perturbed[which].data.size()) - 1));
        perturbed[which].data[idx] += delta;
        const Tensor out = eval(perturbed);
        double max_change = 0.0;
        for (size_t i = 0; i < out.data.size(); ++i)
            max_change = std::max(max_change, std::fabs(out.data[i] - base.data[i]));
        CHECK(max_change < 1e4 * delta);
    }
}
