#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "rmm/gradsuite.hpp"
#include "rmm/metrics.hpp"
#include "rmm/pipeline.hpp"
#include "rmm/serial.hpp"

using namespace rmm;
using namespace rmm::pipeline;

namespace {

TrainConfig tiny_config(uint64_t seed = 0) {
    TrainConfig cfg;
    cfg.gen.resolution = 32;
    cfg.gen.blocks = 3;
    cfg.gen.base_channels = 4;
    cfg.gen.noise_dim = 32;
    cfg.gen.wavelet_levels = 2;
    cfg.gen.query_dim = 16;
    cfg.batch = 4;
    cfg.steps = 10;
    cfg.seed = seed;
    cfg.memory_capacity = 16;
    cfg.dataset_count = 8;
    cfg.disc_base_channels = 4;
    cfg.ranges.scale_min = 2;
    cfg.ranges.scale_max = 4;
    return cfg;
}

double l2_diff(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("synthetic dataset: determinism, count, geometry containment") {
    auto a = dataset::synth_dataset(4, 64, 7);
    auto b = dataset::synth_dataset(4, 64, 7);
    REQUIRE(a.size() == 4);
    for (size_t i = 0; i < 4; ++i) CHECK(a[i].image.data == b[i].image.data);

    auto c = dataset::synth_dataset(3, 64, 8);
    CHECK(c[0].image.data != a[0].image.data);

    // eye boxes stay within the head ellipse bounding box over 1000 samples
    for (int t = 0; t < 1000; ++t) {
        Rng rng = Rng::substream(99, "face", static_cast<uint64_t>(t));
        auto spec = dataset::ToyFaceSpec::sample(rng);
        auto boxes = dataset::component_boxes(spec, 64);
        const double head_x0 = (spec.head_cx - spec.head_rx) * 64.0 - 3.0;
        const double head_x1 = (spec.head_cx + spec.head_rx) * 64.0 + 3.0;
        const double head_y0 = (spec.head_cy - spec.head_ry) * 64.0 - 3.0;
        const double head_y1 = (spec.head_cy + spec.head_ry) * 64.0 + 3.0;
        for (const auto& box : {boxes.left_eye, boxes.right_eye}) {
            CHECK(box.x0 >= head_x0);
            CHECK(box.x0 + box.w <= head_x1);
            CHECK(box.y0 >= head_y0);
            CHECK(box.y0 + box.h <= head_y1);
        }
        for (const auto& box : {boxes.left_eye, boxes.right_eye, boxes.mouth}) {
            CHECK(box.y0 >= 0);
            CHECK(box.x0 >= 0);
            CHECK(box.y0 + box.h <= 64);
            CHECK(box.x0 + box.w <= 64);
            CHECK(box.h >= 8);
            CHECK(box.w >= 8);
        }
    }
}

TEST_CASE("dataset images are 8-bit clean and in range") {
    auto items = dataset::synth_dataset(2, 32, 3);
    for (const auto& item : items)
        for (double v : item.image.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            CHECK(v == doctest::Approx(std::round(v * 255.0) / 255.0).epsilon(1e-12));
        }
}

TEST_CASE("encoder: output size, scale count, reproducibility") {
    auto cfg = tiny_config();
    ParamStore store;
    Rng rng(1);
    Generator gen(store, cfg.gen, rng);

    auto run = [&] {
        Graph g;
        auto bound = store.bind(g, false);
        Tensor input = Tensor::full({3, 32, 32}, 0.1);
        for (size_t i = 0; i < input.data.size(); ++i) input.data[i] += 0.7 * std::sin(0.05 * i);
        auto enc = gen.encode(g, bound, g.constant(input));
        return std::pair{g.value(enc.x_mr), enc.scales.size()};
    };
    auto [x_mr, scales] = run();
    CHECK(x_mr.shape == std::vector<int>{3, 32, 32});
    CHECK(scales == 3);  // one spatial code per block
    auto [x_mr2, scales2] = run();
    CHECK(x_mr.data == x_mr2.data);
    for (double v : x_mr.data) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("mapping network: nonzero at zero noise, head count, Lipschitz sanity") {
    auto cfg = tiny_config();
    ParamStore store;
    Rng rng(2);
    Generator gen(store, cfg.gen, rng);

    Graph g;
    auto bound = store.bind(g, false);
    auto heads = gen.map_noise(g, bound, g.constant(Tensor({32})));
    CHECK(heads.size() == 3);
    double mass = 0.0;
    for (NodeId h : heads)
        for (double v : g.value(h).data) mass += std::fabs(v);
    CHECK(mass > 0.0);  // bias-driven outputs

    // perturbation sweep
    Rng prng(3);
    Tensor z({32});
    for (auto& v : z.data) v = prng.gaussian();
    Graph g2;
    auto bound2 = store.bind(g2, false);
    auto h0 = gen.map_noise(g2, bound2, g2.constant(z));
    const double delta = 1e-4;
    for (int trial = 0; trial < 5; ++trial) {
        Tensor zp = z;
        const size_t idx = static_cast<size_t>(prng.uniform_int(0, 31));
        zp.data[idx] += delta;
        Graph g3;
        auto bound3 = store.bind(g3, false);
        auto h1 = gen.map_noise(g3, bound3, g3.constant(zp));
        double diff = 0.0;
        for (size_t k = 0; k < h0.size(); ++k) diff += l2_diff(g2.value(h0[k]), g3.value(h1[k]));
        CHECK(diff <= 1e3 * delta);
    }
}

TEST_CASE("generator forward: shape, determinism, noise sensitivity") {
    auto cfg = tiny_config();
    ParamStore store;
    Rng rng(4);
    Generator gen(store, cfg.gen, rng);

    dataset::DatasetItem item = dataset::synth_dataset(1, 32, 5)[0];
    degradation::DegradationConfig dc;
    dc.scale_r = 4;
    Tensor input = prepare_input(degradation::degrade(item.image, dc), 32);
    Tensor target = item.image;
    for (auto& v : target.data) v = v * 2.0 - 1.0;
    auto z_w = gt_wavelet_code(target, 2, wavelet::CodePooling::SignedMean);

    auto run = [&](uint64_t noise_seed) {
        Graph g;
        auto bound = store.bind(g, false);
        Rng nrng(noise_seed);
        Tensor noise({32});
        for (auto& v : noise.data) v = nrng.gaussian();
        auto fw = gen.forward(g, bound, g.constant(input), g.constant(noise),
                              g.constant(Tensor({static_cast<int>(z_w.size())}, z_w)));
        return g.value(fw.restored);
    };
    Tensor out1 = run(11);
    CHECK(out1.shape == std::vector<int>{3, 32, 32});
    Tensor out2 = run(11);
    CHECK(out1.data == out2.data);
    Tensor out3 = run(12);
    CHECK(out3.shape == out1.shape);
    CHECK(l2_diff(out1, out3) > 0.0);
}

TEST_CASE("blocks=0 ablation: output is the refinement branch") {
    auto cfg = tiny_config();
    cfg.gen.blocks = 0;
    ParamStore store;
    Rng rng(6);
    Generator gen(store, cfg.gen, rng);
    Graph g;
    auto bound = store.bind(g, false);
    Tensor input = Tensor::full({3, 32, 32}, 0.25);
    Tensor noise({32});
    Tensor z_w({cfg.gen.wavelet_dim()});
    auto fw = gen.forward(g, bound, g.constant(input), g.constant(noise), g.constant(z_w));
    CHECK(fw.restored == fw.x_mr);
    CHECK(fw.z_spatial.empty());
}

TEST_CASE("query encoder: unit norm, determinism, collision sweep") {
    auto cfg = tiny_config();
    ParamStore store;
    Rng rng(7);
    QueryEncoder query(store, 32, 16, rng);

    auto encode = [&](const Tensor& img) {
        Graph g;
        auto bound = store.bind(g, false);
        return g.value(query.forward(g, bound, g.constant(img)));
    };

    auto items = dataset::synth_dataset(2, 32, 21);
    Tensor q1 = encode(prepare_input(items[0].image, 32));
    double norm = 0.0;
    for (double v : q1.data) norm += v * v;
    CHECK(std::fabs(std::sqrt(norm) - 1.0) <= 1e-9);
    Tensor q1b = encode(prepare_input(items[0].image, 32));
    CHECK(q1.data == q1b.data);

    int distinct = 0;
    for (int t = 0; t < 200; ++t) {
        auto pair = dataset::synth_dataset(2, 32, 1000 + static_cast<uint64_t>(t));
        Tensor qa = encode(prepare_input(pair[0].image, 32));
        Tensor qb = encode(prepare_input(pair[1].image, 32));
        double cos = 0.0;
        for (size_t i = 0; i < qa.data.size(); ++i) cos += qa.data[i] * qb.data[i];
        if (cos < 1.0 - 1e-6) ++distinct;
    }
    CHECK(distinct >= 198);
}

TEST_CASE("published training defaults") {
    TrainConfig cfg;
    CHECK(cfg.batch == 8);
    CHECK(cfg.lr == 2e-4);
    CHECK(cfg.beta1 == 0.5);
    CHECK(cfg.beta2 == 0.999);
    CHECK(cfg.memory_capacity == 982);
    CHECK(cfg.eta == 0.7);
    CHECK(cfg.margin == 0.1);
    CHECK(cfg.gen.noise_dim == 512);
    GeneratorConfig full;
    full.wavelet_levels = 4;
    CHECK(full.wavelet_dim() == 765);
}

TEST_CASE("training smoke: 10 steps, 10 log lines, finite losses, bank fills") {
    auto cfg = tiny_config(42);
    Trainer trainer(cfg, dataset::synth_dataset(cfg.dataset_count, cfg.gen.resolution, cfg.seed));
    std::vector<std::string> lines;
    for (int t = 0; t < 10; ++t) {
        auto losses = trainer.step();
        CHECK(std::isfinite(losses.total_g));
        CHECK(std::isfinite(losses.adv_d));
        CHECK(losses.rec >= 0.0);
        CHECK(losses.vgg >= 0.0);
        CHECK(losses.wmm >= 0.0);
        lines.push_back(format_log_line(t, cfg.seed, losses, 0));
    }
    CHECK(lines.size() == 10);
    CHECK(lines[0].find("step=0") == 0);
    CHECK(lines[9].find("total=") != std::string::npos);
    CHECK(trainer.bank().occupied_count() > 0);
}

TEST_CASE("step-0 losses equal an independent re-evaluation on the same batch") {
    auto cfg = tiny_config(31);
    auto data = dataset::synth_dataset(cfg.dataset_count, cfg.gen.resolution, cfg.seed);
    Trainer a(cfg, data);
    const StepLosses logged = a.step();

    // fresh identically seeded assembly
    Trainer b(cfg, data);
    const auto indices = b.batch_indices(0);
    Rng step_rng = Rng::substream(cfg.seed, "step", 0);

    Graph g;
    auto bound_g = b.gen_store().bind(g, false);
    auto bound_d = b.disc_store().bind(g, false);
    double rec = 0, rec_prime = 0, vgg = 0, ccx = 0, adv_g = 0, wmm = 0;
    for (int idx : indices) {
        auto dc = degradation::sample_config(step_rng, cfg.ranges);
        Tensor lq = degradation::degrade(data[static_cast<size_t>(idx)].image, dc);
        Tensor input = prepare_input(lq, cfg.gen.resolution);
        Tensor target = data[static_cast<size_t>(idx)].image;
        for (auto& v : target.data) v = v * 2.0 - 1.0;
        Tensor noise({cfg.gen.noise_dim});
        for (auto& v : noise.data) v = step_rng.gaussian();
        auto z_w = gt_wavelet_code(target, cfg.gen.wavelet_levels, cfg.gen.pooling);

        NodeId input_node = g.constant(input);
        NodeId target_node = g.constant(target);
        auto fw = b.generator().forward(g, bound_g, input_node, g.constant(noise),
                                        g.constant(Tensor({cfg.gen.wavelet_dim()}, z_w)));
        rec += g.value(g.huber_loss(fw.restored, target_node, cfg.weights.huber_delta)).data[0];
        rec_prime += g.value(g.huber_loss(fw.x_mr, target_node, cfg.weights.huber_delta)).data[0];
        vgg += g.value(objectives::perceptual_loss(g, b.pyramid(), fw.restored, target_node,
                                                   cfg.weights.vgg_layer_weights))
                   .data[0];
        const auto& boxes = data[static_cast<size_t>(idx)].boxes;
        const objectives::CropBox box_arr[3] = {boxes.left_eye, boxes.right_eye, boxes.mouth};
        ccx += g.value(objectives::component_contextual_loss(g, b.pyramid(), fw.restored, target_node,
                                                             box_arr))
                   .data[0];
        for (int sc = 0; sc < b.discriminator().scale_count(); ++sc)
            adv_g += cfg.weights.adv_scale_weights[static_cast<size_t>(sc)] *
                     g.value(objectives::adv_g_term(
                                 g, b.discriminator().logits(g, bound_d, sc, fw.restored)))
                         .data[0];
        NodeId q_node = b.query_encoder().forward(g, bound_g, input_node);
        auto wl = memory::wmm_loss(b.bank(), memory::Query{g.value(q_node).data}, z_w, cfg.margin, cfg.eta);
        wmm += wl.loss;
    }
    const double inv_b = 1.0 / cfg.batch;
    rec *= inv_b;
    rec_prime *= inv_b;
    vgg *= inv_b;
    ccx *= inv_b;
    adv_g *= inv_b;
    wmm *= inv_b;

    CHECK(logged.rec == doctest::Approx(rec).epsilon(1e-12));
    CHECK(logged.rec_prime == doctest::Approx(rec_prime).epsilon(1e-12));
    CHECK(logged.vgg == doctest::Approx(vgg).epsilon(1e-12));
    CHECK(logged.ccx == doctest::Approx(ccx).epsilon(1e-12));
    CHECK(logged.adv_g == doctest::Approx(adv_g).epsilon(1e-12));
    CHECK(logged.wmm == doctest::Approx(wmm).epsilon(1e-12));
    CHECK(logged.total_g ==
          doctest::Approx(objectives::total_loss_value(adv_g, rec, rec_prime, vgg, ccx, cfg.weights))
              .epsilon(1e-12));
}

TEST_CASE("training is deterministic: identical loss curves") {
    auto cfg = tiny_config(17);
    auto data = dataset::synth_dataset(cfg.dataset_count, cfg.gen.resolution, cfg.seed);
    Trainer a(cfg, data), b(cfg, data);
    for (int t = 0; t < 3; ++t) {
        auto la = a.step();
        auto lb = b.step();
        CHECK(la.total_g == lb.total_g);
        CHECK(la.adv_d == lb.adv_d);
        CHECK(la.wmm == lb.wmm);
    }
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
    auto cfg = tiny_config(23);
    auto data = dataset::synth_dataset(cfg.dataset_count, cfg.gen.resolution, cfg.seed);
    data[0].image.data[0] = std::numeric_limits<double>::quiet_NaN();
    for (auto& item : data) item.image.data[0] = std::numeric_limits<double>::quiet_NaN();
    Trainer trainer(cfg, data);
    const std::string diag = (std::filesystem::temp_directory_path() / "rmm_diag_test").string();
    std::filesystem::remove_all(diag);
    trainer.set_diagnostic_dir(diag);
    try {
        trainer.step();
        FAIL("expected a numeric error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Numeric);
    }
    CHECK(std::filesystem::exists(diag + "/input_0.mmt"));
    std::filesystem::remove_all(diag);
}

TEST_CASE("restore: determinism, single-entry bank, top-1 oracle") {
    auto cfg = tiny_config(29);
    auto data = dataset::synth_dataset(4, cfg.gen.resolution, cfg.seed);
    Trainer trainer(cfg, data);
    for (int t = 0; t < 2; ++t) trainer.step();

    degradation::DegradationConfig dc;
    dc.scale_r = 4;
    Tensor lq = degradation::degrade(data[0].image, dc);

    auto r1 = restore(lq, trainer.generator(), trainer.gen_store(), trainer.query_encoder(),
                      trainer.bank(), 5);
    auto r2 = restore(lq, trainer.generator(), trainer.gen_store(), trainer.query_encoder(),
                      trainer.bank(), 5);
    CHECK(r1.image01.data == r2.image01.data);
    CHECK(r1.image01.shape == std::vector<int>{3, 32, 32});
    for (double v : r1.image01.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // single-entry bank: that value is always chosen
    memory::MemoryBank single(4, cfg.gen.query_dim, cfg.gen.wavelet_dim());
    Rng krng(3);
    std::vector<double> key(static_cast<size_t>(cfg.gen.query_dim));
    for (auto& v : key) v = krng.gaussian();
    std::vector<double> value(static_cast<size_t>(cfg.gen.wavelet_dim()), 0.25);
    single.set_slot(2, key, value, 1);
    auto r3 = restore(lq, trainer.generator(), trainer.gen_store(), trainer.query_encoder(), single, 5);
    REQUIRE(r3.slot.has_value());
    CHECK(*r3.slot == 2);

    // top-1 equals the brute-force cosine oracle on a populated bank
    memory::MemoryBank populated(16, cfg.gen.query_dim, cfg.gen.wavelet_dim());
    Rng brng(77);
    for (int i = 0; i < 16; ++i) {
        std::vector<double> k(static_cast<size_t>(cfg.gen.query_dim));
        for (auto& v : k) v = brng.gaussian();
        populated.set_slot(i, k, std::vector<double>(static_cast<size_t>(cfg.gen.wavelet_dim()), 0.1),
                           static_cast<uint64_t>(i));
    }
    Graph g;
    auto bound = trainer.gen_store().bind(g, false);
    Tensor input = prepare_input(lq, cfg.gen.resolution);
    NodeId q_node = trainer.query_encoder().forward(g, bound, g.constant(input));
    const auto& q = g.value(q_node).data;
    int best = -1;
    double best_sim = -2.0;
    for (int i = 0; i < populated.capacity(); ++i) {
        if (!populated.is_occupied(i)) continue;
        double sim = 0.0;
        const auto k = populated.key(i);
        for (size_t j = 0; j < q.size(); ++j) sim += q[j] * k[j];
        if (sim > best_sim) {
            best_sim = sim;
            best = i;
        }
    }
    auto r4 = restore(lq, trainer.generator(), trainer.gen_store(), trainer.query_encoder(),
                      populated, 5);
    REQUIRE(r4.slot.has_value());
    CHECK(*r4.slot == best);

    // empty bank warns and uses the zero code
    memory::MemoryBank empty(4, cfg.gen.query_dim, cfg.gen.wavelet_dim());
    auto r5 = restore(lq, trainer.generator(), trainer.gen_store(), trainer.query_encoder(), empty, 5);
    CHECK(!r5.slot.has_value());
}

TEST_CASE("checkpoint round trip preserves the restoration output") {
    auto cfg = tiny_config(37);
    auto data = dataset::synth_dataset(4, cfg.gen.resolution, cfg.seed);
    Trainer trainer(cfg, data);
    trainer.step();

    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "rmm_ckpt_test").string();
    fs::create_directories(dir);
    serial::write_bank(dir + "/bank.mmb", trainer.bank());
    auto ckpt = serial::checkpoint_from_store(trainer.gen_store(), "toy=1\n", dir + "/bank.mmb",
                                              serial::fnv1a64_file(dir + "/bank.mmb"));
    serial::write_checkpoint(dir + "/model.mmc", ckpt);

    auto loaded = serial::read_checkpoint(dir + "/model.mmc");
    CHECK(loaded.config_echo == "toy=1\n");
    CHECK(loaded.bank_hash == ckpt.bank_hash);

    // a separate, identically structured assembly
    ParamStore fresh_store;
    Rng init = Rng::substream(cfg.seed, "init", 0);
    Generator fresh_gen(fresh_store, cfg.gen, init);
    QueryEncoder fresh_query(fresh_store, cfg.gen.resolution, cfg.gen.query_dim, init);
    serial::load_into_store(loaded, fresh_store);
    auto bank = serial::read_bank(loaded.bank_path);

    degradation::DegradationConfig dc;
    dc.scale_r = 4;
    Tensor lq = degradation::degrade(data[1].image, dc);
    auto a = restore(lq, trainer.generator(), trainer.gen_store(), trainer.query_encoder(),
                     trainer.bank(), 9);
    auto b = restore(lq, fresh_gen, fresh_store, fresh_query, bank, 9);
    // float32 container rounding bounds the divergence
    double max_err = 0.0;
    for (size_t i = 0; i < a.image01.data.size(); ++i)
        max_err = std::max(max_err, std::fabs(a.image01.data[i] - b.image01.data[i]));
    CHECK(max_err < 1e-3);
    fs::remove_all(dir);
}

TEST_CASE("attention dump produces seven maps per block") {
    auto cfg = tiny_config(41);
    auto data = dataset::synth_dataset(2, cfg.gen.resolution, cfg.seed);
    Trainer trainer(cfg, data);
    degradation::DegradationConfig dc;
    dc.scale_r = 2;
    Tensor lq = degradation::degrade(data[0].image, dc);
    std::vector<double> z_w(static_cast<size_t>(cfg.gen.wavelet_dim()), 0.0);
    auto dump = dump_attention(lq, trainer.generator(), trainer.gen_store(), z_w, 3);
    CHECK(dump.per_block.size() == static_cast<size_t>(7 * cfg.gen.blocks));
    CHECK(dump.labels.size() == dump.per_block.size());
    for (const auto& map : dump.per_block) CHECK(map.shape[0] == 1);
}

TEST_CASE("end-to-end 16x16 two-block gradient check") {
    auto rep = gradsuite::check_end_to_end(0);
    CHECK(rep.coords >= 50);
    CHECK(rep.max_rel_err < 1e-4);
}
