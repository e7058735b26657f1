#include "rmm/gradsuite.hpp"

#include "rmm/dataset.hpp"
#include "rmm/degradation.hpp"
#include "rmm/modulation.hpp"
#include "rmm/objectives.hpp"
#include "rmm/pipeline.hpp"

namespace rmm::gradsuite {

namespace {

Tensor rand_t(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

void fold(ModuleReport& rep, const GradCheckResult& r) {
    rep.max_rel_err = std::max(rep.max_rel_err, r.max_rel_err);
    rep.coords += r.coords_checked;
}

}  // namespace

ModuleReport check_tensor_ops(uint64_t seed, int coords_per_op) {
    Rng rng(seed ^ 0x7e1501);
    ModuleReport rep{"tensor_ops", 0.0, 0};
    auto run = [&](std::function<NodeId(Graph&, const std::vector<NodeId>&)> build,
                   std::vector<Tensor> inputs) {
        fold(rep, grad_check(build, std::move(inputs), rng, coords_per_op));
    };

    Tensor a = rand_t({2, 4, 4}, rng), b = rand_t({2, 4, 4}, rng);
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.mul(g.add(in[0], in[1]), g.sub(in[0], in[1])));
    }, {a, b});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.sum_all(g.add_scalar(g.mul_scalar(in[0], -0.7), 0.2));
    }, {a});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.conv2d(in[0], in[1], in[2], 1, 1));
    }, {rand_t({2, 5, 5}, rng), rand_t({3, 2, 3, 3}, rng), rand_t({3}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.conv2d(in[0], in[1], in[2], 2, 1));
    }, {rand_t({2, 5, 5}, rng), rand_t({3, 2, 3, 3}, rng), rand_t({3}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.tanh_fn(g.fully_connected(in[0], in[1], in[2])));
    }, {rand_t({6}, rng), rand_t({4, 6}, rng), rand_t({4}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.matmul_nt(in[0], in[1]));
    }, {rand_t({3, 4}, rng), rand_t({5, 4}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) { return g.dot(in[0], in[1]); },
        {rand_t({7}, rng), rand_t({7}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.mul(g.softmax(in[0], 0), in[1]));
    }, {rand_t({3, 2, 2}, rng), rand_t({3, 2, 2}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.sigmoid(g.tanh_fn(g.exp_fn(g.mul_scalar(in[0], 0.5)))));
    }, {a});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.log_fn(g.sqrt_fn(g.add_scalar(g.mul(in[0], in[0]), 1.0))));
    }, {a});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.leaky_relu(in[0], 0.2));
    }, {a});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.clamp(in[0], -0.6, 0.6));
    }, {a});
    run([](Graph& g, const std::vector<NodeId>& in) {
        NodeId mn = g.reduce2d(in[0], 1, Reduce2dKind::Min);
        NodeId mx = g.reduce2d(in[0], 0, Reduce2dKind::Max);
        NodeId sm = g.reduce2d(in[0], 1, Reduce2dKind::Sum);
        return g.add(g.mean_all(g.rowwise_div(in[0], g.add_scalar(sm, 4.0))),
                     g.add(g.mean_all(mn), g.mean_all(mx)));
    }, {rand_t({4, 5}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.add(g.mean_all(g.resize_nearest(in[0], 7, 5)),
                     g.mean_all(g.mul(g.resize_bilinear(in[0], 6, 9), g.resize_bilinear(in[0], 6, 9))));
    }, {a});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.avg_pool(in[0], 2, 2));
    }, {rand_t({2, 6, 6}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        NodeId cat = g.concat_c(in[0], in[1]);
        NodeId sl = g.slice0(cat, 1, 3);
        NodeId cr = g.crop2d(sl, 1, 0, 3, 4);
        NodeId pd = g.pad2d(cr, 1, 0, 0, 1);
        return g.mean_all(g.mul(pd, pd));
    }, {a, rand_t({2, 4, 4}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.mul_map(g.mul(in[0], g.broadcast_vec(in[1], 4, 4)), in[2]));
    }, {a, rand_t({2}, rng), rand_t({1, 4, 4}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.mul(g.instance_norm(in[0], 1e-5), in[1]));
    }, {a, b});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.mul(g.layer_norm(in[0], 1e-5), in[1]));
    }, {a, b});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.mean_all(g.mul(g.l2_normalize_rows(in[0]), in[1]));
    }, {rand_t({3, 5}, rng), rand_t({3, 5}, rng)});
    run([](Graph& g, const std::vector<NodeId>& in) {
        return g.huber_loss(in[0], in[1], 0.31);
    }, {a, b});
    run([](Graph& g, const std::vector<NodeId>& in) {
        NodeId rows = g.channels_to_rows(in[0]);
        return g.mean_all(g.mul(g.reshape(rows, {32}), g.reshape(rows, {32})));
    }, {a});
    return rep;
}

ModuleReport check_modulation(uint64_t seed, int coords) {
    Rng rng(seed ^ 0x3a9f);
    ModuleReport rep{"modulation", 0.0, 0};
    const int c = 3, cs = 2, nd = 5, wd = 4;
    std::vector<Tensor> inputs;
    inputs.push_back(rand_t({c, 6, 6}, rng));
    inputs.push_back(rand_t({cs, 4, 4}, rng));
    inputs.push_back(rand_t({nd}, rng));
    inputs.push_back(rand_t({wd}, rng));
    inputs.push_back(rand_t({2 * c, cs, 3, 3}, rng, -0.4, 0.4));
    inputs.push_back(rand_t({2 * c}, rng, -0.2, 0.2));
    inputs.push_back(rand_t({2 * c, nd}, rng, -0.4, 0.4));
    inputs.push_back(rand_t({2 * c}, rng, -0.2, 0.2));
    inputs.push_back(rand_t({2 * c, wd}, rng, -0.4, 0.4));
    inputs.push_back(rand_t({2 * c}, rng, -0.2, 0.2));
    inputs.push_back(rand_t({3, c, 3, 3}, rng, -0.4, 0.4));
    inputs.push_back(rand_t({3}, rng, -0.2, 0.2));
    inputs.push_back(rand_t({3, c, 3, 3}, rng, -0.4, 0.4));
    inputs.push_back(rand_t({3}, rng, -0.2, 0.2));
    inputs.push_back(rand_t({1, c, 3, 3}, rng, -0.4, 0.4));
    inputs.push_back(rand_t({1}, rng, -0.2, 0.2));
    auto build = [c, cs, nd, wd](Graph& g, const std::vector<NodeId>& in) {
        modulation::Rm3Nodes n;
        n.cfg = {c, cs, nd, wd, false, 1e-5};
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
        NodeId out = modulation::rm3_forward(g, {in[0], in[1], in[2], in[3]}, n);
        NodeId probe = g.leaf(Tensor::full({c, 6, 6}, 0.3), false);
        return g.mean_all(g.mul(out, g.add(out, probe)));
    };
    fold(rep, grad_check(build, std::move(inputs), rng, coords));
    return rep;
}

ModuleReport check_objectives(uint64_t seed, int coords_per_loss) {
    Rng rng(seed ^ 0x0b5e55);
    ModuleReport rep{"objectives", 0.0, 0};
    objectives::FeaturePyramid pyramid;

    fold(rep, grad_check(
                  [](Graph& g, const std::vector<NodeId>& in) {
                      return g.huber_loss(in[0], in[1], 0.1);
                  },
                  {rand_t({3, 6, 6}, rng), rand_t({3, 6, 6}, rng)}, rng, coords_per_loss));

    fold(rep, grad_check(
                  [](Graph& g, const std::vector<NodeId>& in) {
                      return g.add(objectives::adv_d_term(g, in[0], in[1]),
                                   objectives::adv_g_term(g, in[1]));
                  },
                  {rand_t({1, 5, 5}, rng, -2.0, 2.0), rand_t({1, 5, 5}, rng, -2.0, 2.0)}, rng,
                  coords_per_loss));

    fold(rep, grad_check(
                  [&pyramid](Graph& g, const std::vector<NodeId>& in) {
                      const double w[5] = {1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0};
                      return objectives::perceptual_loss(g, pyramid, in[0], in[1], w);
                  },
                  {rand_t({3, 8, 8}, rng), rand_t({3, 8, 8}, rng)}, rng, coords_per_loss));

    fold(rep, grad_check(
                  [](Graph& g, const std::vector<NodeId>& in) {
                      return g.mul_scalar(g.log_fn(objectives::contextual_similarity(g, in[0], in[1], 0.5)),
                                          -1.0);
                  },
                  {rand_t({4, 3}, rng), rand_t({5, 3}, rng)}, rng, coords_per_loss));

    fold(rep, grad_check(
                  [&pyramid](Graph& g, const std::vector<NodeId>& in) {
                      const objectives::CropBox boxes[2] = {{0, 0, 8, 8}, {4, 4, 8, 8}};
                      return objectives::component_contextual_loss(g, pyramid, in[0], in[1], boxes);
                  },
                  {rand_t({3, 12, 12}, rng), rand_t({3, 12, 12}, rng)}, rng, coords_per_loss));
    return rep;
}

ModuleReport check_end_to_end(uint64_t seed, int coords) {
    Rng rng(seed ^ 0xe2e);
    ModuleReport rep{"pipeline_e2e", 0.0, 0};

    // 16x16 two-block configuration
    pipeline::GeneratorConfig gc;
    gc.resolution = 16;
    gc.blocks = 2;
    gc.base_channels = 4;
    gc.noise_dim = 16;
    gc.wavelet_levels = 2;
    gc.query_dim = 8;

    ParamStore g_store, d_store;
    Rng init(seed ^ 0x171);
    pipeline::Generator gen(g_store, gc, init);
    pipeline::QueryEncoder query(g_store, gc.resolution, gc.query_dim, init);
    auto disc = objectives::MultiScaleDiscriminator::create(
        d_store, "disc", objectives::DiscriminatorConfig{{1, 2, 4, 8}, 4}, init);
    objectives::FeaturePyramid pyramid;
    objectives::LossWeights weights;

    // one procedural sample at the working resolution
    auto items = dataset::synth_dataset(1, gc.resolution, seed);
    degradation::DegradationConfig dc;
    dc.scale_r = 2;
    dc.noise_on = true;
    dc.noise_sigma = 5.0;
    dc.seed = seed;
    Tensor input = pipeline::prepare_input(degradation::degrade(items[0].image, dc), gc.resolution);
    Tensor target = items[0].image;
    for (auto& v : target.data) v = v * 2.0 - 1.0;
    const auto z_w = pipeline::gt_wavelet_code(target, gc.wavelet_levels, gc.pooling);
    Tensor noise({gc.noise_dim});
    for (auto& v : noise.data) v = rng.gaussian();

    // a small bank providing both a positive and a negative for the triplet
    memory::MemoryBank bank(4, gc.query_dim, gc.wavelet_dim());
    {
        std::vector<double> pos_key(static_cast<size_t>(gc.query_dim), 0.0), neg_key = pos_key;
        pos_key[0] = 1.0;
        neg_key[1] = 1.0;
        std::vector<double> far(static_cast<size_t>(gc.wavelet_dim()), 0.0);
        far[0] = 9.0;
        bank.set_slot(0, pos_key, z_w, 1);
        bank.set_slot(1, neg_key, far, 2);
    }

    const size_t g_count = g_store.count();
    std::vector<Tensor> params;
    for (size_t i = 0; i < g_store.count(); ++i) params.push_back(g_store.value(i));
    for (size_t i = 0; i < d_store.count(); ++i) params.push_back(d_store.value(i));

    const auto& boxes = items[0].boxes;
    const objectives::CropBox box_arr[3] = {boxes.left_eye, boxes.right_eye, boxes.mouth};

    // generator-side objective: every parameter (including D, through the
    // generator adversarial term) gets a finite-difference pass
    auto build_g = [&](Graph& g, const std::vector<NodeId>& in) {
        std::span<const NodeId> bound_g(in.data(), g_count);
        std::span<const NodeId> bound_d(in.data() + g_count, in.size() - g_count);
        NodeId in_node = g.constant(input);
        NodeId target_node = g.constant(target);
        auto fw = gen.forward(g, bound_g, in_node, g.constant(noise),
                              g.constant(Tensor({gc.wavelet_dim()}, z_w)));
        NodeId rec = g.huber_loss(fw.restored, target_node, weights.huber_delta);
        NodeId rec_prime = g.huber_loss(fw.x_mr, target_node, weights.huber_delta);
        NodeId vgg = objectives::perceptual_loss(g, pyramid, fw.restored, target_node,
                                                 weights.vgg_layer_weights);
        NodeId ccx = objectives::component_contextual_loss(g, pyramid, fw.restored, target_node, box_arr);
        NodeId adv_g = g.constant_scalar(0.0);
        for (int sc = 0; sc < disc.scale_count(); ++sc)
            adv_g = g.add(adv_g,
                          g.mul_scalar(objectives::adv_g_term(g, disc.logits(g, bound_d, sc, fw.restored)),
                                       weights.adv_scale_weights[static_cast<size_t>(sc)]));
        NodeId total = objectives::total_loss(g, {adv_g, rec, rec_prime, vgg, ccx}, weights);

        NodeId q_node = query.forward(g, bound_g, in_node);
        memory::Query q{g.value(q_node).data};
        auto wl = memory::wmm_loss(bank, q, z_w, 0.5, memory::kDefaultEta);
        if (wl.positive && wl.negative) {
            NodeId pos = g.constant(Tensor({gc.query_dim},
                                           {bank.key(*wl.positive).begin(), bank.key(*wl.positive).end()}));
            NodeId neg = g.constant(Tensor({gc.query_dim},
                                           {bank.key(*wl.negative).begin(), bank.key(*wl.negative).end()}));
            total = g.add(total, g.relu(g.add_scalar(g.sub(g.dot(q_node, neg), g.dot(q_node, pos)), 0.5)));
        }
        return total;
    };
    fold(rep, grad_check(build_g, params, rng, coords));

    // discriminator-side objective over D parameters, fake held constant
    Tensor fake;
    {
        Graph g;
        auto bound_g = g_store.bind(g, false);
        fake = g.value(gen.forward(g, bound_g, g.constant(input), g.constant(noise),
                                   g.constant(Tensor({gc.wavelet_dim()}, z_w)))
                           .restored);
    }
    std::vector<Tensor> d_params;
    for (size_t i = 0; i < d_store.count(); ++i) d_params.push_back(d_store.value(i));
    auto build_d = [&](Graph& g, const std::vector<NodeId>& in) {
        NodeId obj = g.constant_scalar(0.0);
        for (int sc = 0; sc < disc.scale_count(); ++sc) {
            NodeId term = objectives::adv_d_term(g, disc.logits(g, in, sc, g.constant(target)),
                                                 disc.logits(g, in, sc, g.constant(fake)));
            obj = g.add(obj, g.mul_scalar(term, weights.adv_scale_weights[static_cast<size_t>(sc)]));
        }
        return g.mul_scalar(obj, -1.0);
    };
    fold(rep, grad_check(build_d, d_params, rng, std::max(20, coords / 3)));
    return rep;
}

std::vector<ModuleReport> run_all(uint64_t seed) {
    return {check_tensor_ops(seed), check_modulation(seed), check_objectives(seed),
            check_end_to_end(seed)};
}

}  // namespace rmm::gradsuite
