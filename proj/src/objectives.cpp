#include "rmm/objectives.hpp"

#include <cmath>
#include <cstdio>

namespace rmm::objectives {

NodeId huber(Graph& g, NodeId pred, NodeId target, double delta) {
    return g.huber_loss(pred, target, delta);
}

namespace {

constexpr int kPyramidChannels[FeaturePyramid::kStages + 1] = {3, 8, 16, 32, 32, 32};

// pool to half size, padding odd extents first
NodeId halve(Graph& g, NodeId x) {
    const std::vector<int> s = g.value(x).shape;
    NodeId p = x;
    if (s[1] % 2 == 1 || s[2] % 2 == 1) p = g.pad2d(x, 0, s[1] % 2, 0, s[2] % 2);
    return g.avg_pool(p, 2, 2);
}

}  // namespace

FeaturePyramid::FeaturePyramid() {
    Rng rng(kSeed);
    for (int s = 0; s < kStages; ++s) {
        const int cin = kPyramidChannels[s], cout = kPyramidChannels[s + 1];
        params_.create_fan_in("stage" + std::to_string(s) + ".w", {cout, cin, 3, 3}, cin * 9, rng);
        params_.create_fan_in("stage" + std::to_string(s) + ".b", {cout}, cin * 9, rng);
    }
}

std::vector<NodeId> FeaturePyramid::features(Graph& g, NodeId image) const {
    require(g.value(image).rank() == 3 && g.value(image).shape[0] == 3, ErrorCode::Contract,
            "feature pyramid: need a [3,H,W] image");
    std::vector<NodeId> feats;
    feats.reserve(kStages);
    NodeId x = image;
    for (int s = 0; s < kStages; ++s) {
        NodeId w = g.constant(params_.value(static_cast<size_t>(2 * s)));
        NodeId b = g.constant(params_.value(static_cast<size_t>(2 * s + 1)));
        NodeId f = g.leaky_relu(g.conv2d(x, w, b, 1, 1), 0.2);
        feats.push_back(f);
        if (s + 1 < kStages) x = halve(g, f);
    }
    return feats;
}

NodeId perceptual_loss(Graph& g, const FeaturePyramid& net, NodeId pred, NodeId target,
                       std::span<const double> layer_weights) {
    require(layer_weights.size() == FeaturePyramid::kStages, ErrorCode::Contract,
            "perceptual_loss: need ", FeaturePyramid::kStages, " layer weights");
    const auto fp = net.features(g, pred);
    const auto ft = net.features(g, target);
    NodeId total = g.constant_scalar(0.0);
    for (int s = 0; s < FeaturePyramid::kStages; ++s) {
        NodeId diff = g.sub(fp[static_cast<size_t>(s)], ft[static_cast<size_t>(s)]);
        NodeId norm = g.sqrt_fn(g.sum_all(g.mul(diff, diff)));
        total = g.add(total, g.mul_scalar(norm, layer_weights[static_cast<size_t>(s)]));
    }
    return total;
}

NodeId contextual_similarity(Graph& g, NodeId rows_a, NodeId rows_b, double bandwidth) {
    require(bandwidth > 0.0, ErrorCode::Contract, "contextual_similarity: bandwidth must be positive");
    require(g.value(rows_a).rank() == 2 && g.value(rows_b).rank() == 2 &&
                g.value(rows_a).shape[1] == g.value(rows_b).shape[1],
            ErrorCode::Contract, "contextual_similarity: need [n,d] and [m,d] feature rows");
    NodeId an = g.l2_normalize_rows(rows_a);
    NodeId bn = g.l2_normalize_rows(rows_b);
    NodeId cos = g.matmul_nt(an, bn);                       // [n,m] similarities
    NodeId dist = g.add_scalar(g.mul_scalar(cos, -1.0), 1.0);
    NodeId dmin = g.reduce2d(dist, 1, Reduce2dKind::Min);   // per-row minimum distance
    NodeId dnorm = g.rowwise_div(dist, g.add_scalar(dmin, 1e-5));
    NodeId aff = g.exp_fn(g.mul_scalar(g.add_scalar(g.mul_scalar(dnorm, -1.0), 1.0), 1.0 / bandwidth));
    NodeId cx = g.rowwise_div(aff, g.reduce2d(aff, 1, Reduce2dKind::Sum));
    NodeId colmax = g.reduce2d(cx, 0, Reduce2dKind::Max);
    return g.mean_all(colmax);
}

double contextual_similarity_value(const std::vector<std::vector<double>>& a,
                                   const std::vector<std::vector<double>>& b, double bandwidth) {
    require(!a.empty() && !b.empty(), ErrorCode::Contract, "contextual_similarity: empty feature set");
    const int d = static_cast<int>(a[0].size());
    Tensor ta({static_cast<int>(a.size()), d});
    Tensor tb({static_cast<int>(b.size()), d});
    for (size_t i = 0; i < a.size(); ++i)
        for (int j = 0; j < d; ++j) ta.data[i * static_cast<size_t>(d) + j] = a[i][static_cast<size_t>(j)];
    for (size_t i = 0; i < b.size(); ++i)
        for (int j = 0; j < d; ++j) tb.data[i * static_cast<size_t>(d) + j] = b[i][static_cast<size_t>(j)];
    Graph g;
    return g.value(contextual_similarity(g, g.constant(ta), g.constant(tb), bandwidth)).data[0];
}

NodeId component_contextual_loss(Graph& g, const FeaturePyramid& net, NodeId pred, NodeId target,
                                 std::span<const CropBox> boxes, double bandwidth) {
    if (boxes.empty()) {
        std::fprintf(stderr, "warning: component contextual loss called with no crop boxes\n");
        return g.constant_scalar(0.0);
    }
    NodeId total = g.constant_scalar(0.0);
    int terms = 0;
    for (const CropBox& box : boxes) {
        NodeId cp = g.crop2d(pred, box.y0, box.x0, box.h, box.w);
        NodeId ct = g.crop2d(target, box.y0, box.x0, box.h, box.w);
        const auto fp = net.features(g, cp);
        const auto ft = net.features(g, ct);
        for (int stage : FeaturePyramid::kComponentStages) {
            NodeId cx = contextual_similarity(g, g.channels_to_rows(fp[static_cast<size_t>(stage)]),
                                              g.channels_to_rows(ft[static_cast<size_t>(stage)]), bandwidth);
            total = g.add(total, g.mul_scalar(g.log_fn(cx), -1.0));
            ++terms;
        }
    }
    return g.mul_scalar(total, 1.0 / terms);
}

MultiScaleDiscriminator MultiScaleDiscriminator::create(ParamStore& store, const std::string& prefix,
                                                        const DiscriminatorConfig& cfg, Rng& rng) {
    MultiScaleDiscriminator d;
    d.cfg_ = cfg;
    const int c1 = cfg.base_channels, c2 = 2 * cfg.base_channels, c3 = 4 * cfg.base_channels;
    for (size_t s = 0; s < cfg.scales.size(); ++s) {
        const std::string p = prefix + ".scale" + std::to_string(cfg.scales[s]);
        std::array<size_t, 8> slot{};
        slot[0] = store.create_fan_in(p + ".conv1.w", {c1, 3, 3, 3}, 27, rng);
        slot[1] = store.create_fan_in(p + ".conv1.b", {c1}, 27, rng);
        slot[2] = store.create_fan_in(p + ".conv2.w", {c2, c1, 3, 3}, c1 * 9, rng);
        slot[3] = store.create_fan_in(p + ".conv2.b", {c2}, c1 * 9, rng);
        slot[4] = store.create_fan_in(p + ".conv3.w", {c3, c2, 3, 3}, c2 * 9, rng);
        slot[5] = store.create_fan_in(p + ".conv3.b", {c3}, c2 * 9, rng);
        slot[6] = store.create_fan_in(p + ".head.w", {1, c3, 3, 3}, c3 * 9, rng);
        slot[7] = store.create_fan_in(p + ".head.b", {1}, c3 * 9, rng);
        d.slots_.push_back(slot);
    }
    return d;
}

NodeId MultiScaleDiscriminator::logits(Graph& g, std::span<const NodeId> bound, int scale_index,
                                       NodeId image) const {
    const auto& s = slots_[static_cast<size_t>(scale_index)];
    const int factor = cfg_.scales[static_cast<size_t>(scale_index)];
    NodeId x = image;
    if (factor > 1) x = g.avg_pool(x, factor, factor);
    x = g.leaky_relu(g.conv2d(x, bound[s[0]], bound[s[1]], 1, 1), 0.2);
    x = halve(g, x);
    x = g.leaky_relu(g.conv2d(x, bound[s[2]], bound[s[3]], 1, 1), 0.2);
    x = halve(g, x);
    x = g.leaky_relu(g.conv2d(x, bound[s[4]], bound[s[5]], 1, 1), 0.2);
    return g.conv2d(x, bound[s[6]], bound[s[7]], 1, 1);
}

NodeId adv_d_term(Graph& g, NodeId real_logits, NodeId fake_logits) {
    NodeId p_real = g.clamp(g.sigmoid(real_logits), kProbClamp, 1.0 - kProbClamp);
    NodeId p_fake = g.clamp(g.sigmoid(fake_logits), kProbClamp, 1.0 - kProbClamp);
    NodeId one_minus = g.add_scalar(g.mul_scalar(p_fake, -1.0), 1.0);
    return g.add(g.mean_all(g.log_fn(p_real)), g.mean_all(g.log_fn(one_minus)));
}

NodeId adv_g_term(Graph& g, NodeId fake_logits) {
    NodeId p_fake = g.clamp(g.sigmoid(fake_logits), kProbClamp, 1.0 - kProbClamp);
    return g.mul_scalar(g.mean_all(g.log_fn(p_fake)), -1.0);
}

AdvLosses adversarial_losses(Graph& g, const MultiScaleDiscriminator& disc,
                             std::span<const NodeId> bound, NodeId real, NodeId fake,
                             std::span<const double> scale_weights) {
    require(scale_weights.size() == static_cast<size_t>(disc.scale_count()), ErrorCode::Contract,
            "adversarial_losses: need one weight per scale");
    NodeId fake_detached = g.stop_gradient(fake);
    NodeId loss_d = g.constant_scalar(0.0);
    NodeId loss_g = g.constant_scalar(0.0);
    for (int s = 0; s < disc.scale_count(); ++s) {
        const double w = scale_weights[static_cast<size_t>(s)];
        NodeId real_logits = disc.logits(g, bound, s, real);
        NodeId fake_logits_d = disc.logits(g, bound, s, fake_detached);
        NodeId fake_logits_g = disc.logits(g, bound, s, fake);
        loss_d = g.add(loss_d, g.mul_scalar(adv_d_term(g, real_logits, fake_logits_d), w));
        loss_g = g.add(loss_g, g.mul_scalar(adv_g_term(g, fake_logits_g), w));
    }
    return {loss_d, loss_g};
}

NodeId total_loss(Graph& g, const LossParts& parts, const LossWeights& weights) {
    NodeId total = g.add(parts.adv, g.mul_scalar(parts.rec_prime, weights.lambda_rec_prime));
    total = g.add(total, g.mul_scalar(parts.rec, weights.lambda_rec));
    total = g.add(total, parts.vgg);
    return g.add(total, g.mul_scalar(parts.ccx, weights.lambda_ccx));
}

double total_loss_value(double adv, double rec, double rec_prime, double vgg, double ccx,
                        const LossWeights& weights) {
    return adv + weights.lambda_rec_prime * rec_prime + weights.lambda_rec * rec + vgg +
           weights.lambda_ccx * ccx;
}

}  // namespace rmm::objectives
