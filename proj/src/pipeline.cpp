#include "rmm/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "rmm/serial.hpp"

namespace rmm::pipeline {

namespace {

NodeId conv_block(Graph& g, NodeId x, NodeId w, NodeId b) {
    return g.leaky_relu(g.conv2d(x, w, b, 1, 1), 0.2);
}

NodeId halve(Graph& g, NodeId x) {
    const std::vector<int> s = g.value(x).shape;
    NodeId p = x;
    if (s[1] % 2 == 1 || s[2] % 2 == 1) p = g.pad2d(x, 0, s[1] % 2, 0, s[2] % 2);
    return g.avg_pool(p, 2, 2);
}

constexpr int kQueryChannels[5] = {3, 8, 16, 24, 32};

}  // namespace

std::vector<int> GeneratorConfig::scale_widths() const {
    const int scales = std::max(1, blocks);
    if (!widths.empty()) return widths;
    std::vector<int> w(static_cast<size_t>(scales));
    for (int s = 0; s < scales; ++s) w[static_cast<size_t>(s)] = base_channels * std::min(1 << s, 6);
    return w;
}

void GeneratorConfig::validate() const {
    // blocks == 0 is the ablation mode: the refined mid-resolution image is
    // the output and the modulation decoder is skipped entirely
    require(blocks >= 0, ErrorCode::Config, "generator: blocks must be >= 0, got ", blocks);
    require(resolution >= 8, ErrorCode::Config, "generator: resolution too small: ", resolution);
    require(resolution % (1 << wavelet_levels) == 0, ErrorCode::Config, "generator: resolution ",
            resolution, " not divisible by 2^wavelet_levels = ", 1 << wavelet_levels);
    const int scales = std::max(1, blocks);
    require(resolution % (1 << (scales - 1)) == 0, ErrorCode::Config, "generator: resolution ",
            resolution, " not divisible by 2^(blocks-1) = ", 1 << (scales - 1));
    require(noise_dim >= 1 && base_channels >= 1 && query_dim >= 1, ErrorCode::Config,
            "generator: dims must be positive");
    if (!widths.empty())
        require(static_cast<int>(widths.size()) == scales, ErrorCode::Config,
                "generator: need one width per scale, got ", widths.size(), " for ", scales);
}

Generator::Generator(ParamStore& store, const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    widths_ = cfg_.scale_widths();
    const int b = cfg_.blocks;
    const int scales = std::max(1, b);

    auto conv = [&](const std::string& name, int cout, int cin) {
        return ConvSlot{store.create_fan_in(name + ".w", {cout, cin, 3, 3}, cin * 9, rng),
                        store.create_fan_in(name + ".b", {cout}, cin * 9, rng)};
    };
    auto fc = [&](const std::string& name, int dout, int din) {
        return ConvSlot{store.create_fan_in(name + ".w", {dout, din}, din, rng),
                        store.create_fan_in(name + ".b", {dout}, din, rng)};
    };

    for (int s = 0; s < scales; ++s)
        enc_.push_back(conv("gen.enc" + std::to_string(s),
                            widths_[static_cast<size_t>(s)],
                            s == 0 ? 3 : widths_[static_cast<size_t>(s - 1)]));
    for (int s = 0; s < scales - 1; ++s)
        unet_dec_.push_back(conv("gen.mr" + std::to_string(s), widths_[static_cast<size_t>(s)],
                                 widths_[static_cast<size_t>(s + 1)] + widths_[static_cast<size_t>(s)]));
    unet_out_ = conv("gen.mr_out", 3, widths_[0]);

    for (int i = 0; i < b; ++i) {
        const int c = widths_[static_cast<size_t>(b - 1 - i)];
        modulation::Rm3Config rc;
        rc.feature_channels = c;
        rc.spatial_channels = c;
        rc.noise_dim = cfg_.noise_dim;
        rc.wavelet_dim = cfg_.wavelet_dim();
        rc.per_channel_gate = cfg_.per_channel_gate;
        blocks_.push_back(modulation::Rm3Params::create(store, "gen.rm3_" + std::to_string(i), rc, rng));
        const int cout = i + 1 < b ? widths_[static_cast<size_t>(b - 2 - i)] : widths_[0];
        post_.push_back(conv("gen.post" + std::to_string(i), cout, c));
    }
    if (b > 0) final_out_ = conv("gen.out", 3, widths_[0]);

    const int nd = cfg_.noise_dim;
    for (int t = 0; t < 4; ++t) map_trunk_.push_back(fc("gen.map" + std::to_string(t), nd, nd));
    for (int i = 0; i < b; ++i) map_heads_.push_back(fc("gen.maphead" + std::to_string(i), nd, nd));
}

Generator::Encoded Generator::encode(Graph& g, std::span<const NodeId> bound, NodeId input) const {
    require(g.value(input).shape ==
                std::vector<int>({3, cfg_.resolution, cfg_.resolution}),
            ErrorCode::Contract, "generator: input must be [3,", cfg_.resolution, ",", cfg_.resolution, "]");
    Encoded enc;
    NodeId x = input;
    for (size_t s = 0; s < enc_.size(); ++s) {
        if (s > 0) x = halve(g, x);
        x = conv_block(g, x, bound[enc_[s].w], bound[enc_[s].b]);
        enc.scales.push_back(x);
    }
    NodeId d = enc.scales.back();
    for (int s = static_cast<int>(unet_dec_.size()) - 1; s >= 0; --s) {
        const std::vector<int> target = g.value(enc.scales[static_cast<size_t>(s)]).shape;
        NodeId up = g.resize_nearest(d, target[1], target[2]);
        d = conv_block(g, g.concat_c(up, enc.scales[static_cast<size_t>(s)]),
                       bound[unet_dec_[static_cast<size_t>(s)].w], bound[unet_dec_[static_cast<size_t>(s)].b]);
    }
    enc.x_mr = g.tanh_fn(g.conv2d(d, bound[unet_out_.w], bound[unet_out_.b], 1, 1));
    return enc;
}

std::vector<NodeId> Generator::map_noise(Graph& g, std::span<const NodeId> bound, NodeId noise) const {
    require(g.value(noise).shape == std::vector<int>({cfg_.noise_dim}), ErrorCode::Contract,
            "generator: noise must be [", cfg_.noise_dim, "]");
    NodeId m = noise;
    for (const auto& t : map_trunk_) m = g.leaky_relu(g.fully_connected(m, bound[t.w], bound[t.b]), 0.2);
    std::vector<NodeId> heads;
    heads.reserve(map_heads_.size());
    for (const auto& h : map_heads_) heads.push_back(g.fully_connected(m, bound[h.w], bound[h.b]));
    return heads;
}

Generator::Forward Generator::forward(Graph& g, std::span<const NodeId> bound, NodeId input,
                                      NodeId noise, NodeId z_wavelet, bool want_traces) const {
    require(g.value(z_wavelet).shape == std::vector<int>({cfg_.wavelet_dim()}), ErrorCode::Contract,
            "generator: wavelet code must be [", cfg_.wavelet_dim(), "]");
    Forward fw;
    Encoded enc = encode(g, bound, input);
    fw.x_mr = enc.x_mr;
    const int b = cfg_.blocks;
    if (b == 0) {  // ablation mode: the refinement branch is the whole model
        fw.restored = fw.x_mr;
        return fw;
    }
    const auto z_n = map_noise(g, bound, noise);

    NodeId h = enc.scales.back();
    for (int i = 0; i < b; ++i) {
        NodeId z_s = enc.scales[static_cast<size_t>(b - 1 - i)];
        fw.z_spatial.push_back(z_s);
        modulation::Rm3Nodes nodes = modulation::bind_rm3(blocks_[static_cast<size_t>(i)], bound);
        modulation::Rm3Trace trace;
        h = modulation::rm3_forward(g, {h, z_s, z_n[static_cast<size_t>(i)], z_wavelet}, nodes,
                                    want_traces ? &trace : nullptr);
        if (want_traces) fw.traces.push_back(trace);
        h = conv_block(g, h, bound[post_[static_cast<size_t>(i)].w], bound[post_[static_cast<size_t>(i)].b]);
        if (i + 1 < b) {
            const std::vector<int> s = g.value(h).shape;
            h = g.resize_nearest(h, 2 * s[1], 2 * s[2]);
        }
    }
    fw.restored = g.tanh_fn(g.conv2d(h, bound[final_out_.w], bound[final_out_.b], 1, 1));
    return fw;
}

QueryEncoder::QueryEncoder(ParamStore& store, int resolution, int query_dim, Rng& rng) {
    int res = resolution;
    for (int s = 0; s < 4; ++s) {
        const int cin = kQueryChannels[s], cout = kQueryChannels[s + 1];
        convs_.push_back({store.create_fan_in("query.conv" + std::to_string(s) + ".w",
                                              {cout, cin, 3, 3}, cin * 9, rng),
                          store.create_fan_in("query.conv" + std::to_string(s) + ".b", {cout}, cin * 9, rng)});
        if (s > 0) res /= 2;
    }
    final_res_ = res;
    require(final_res_ >= 2, ErrorCode::Config, "query encoder: resolution too small");
    head_ = {store.create_fan_in("query.head.w", {query_dim, kQueryChannels[4]}, kQueryChannels[4], rng),
             store.create_fan_in("query.head.b", {query_dim}, kQueryChannels[4], rng)};
}

NodeId QueryEncoder::forward(Graph& g, std::span<const NodeId> bound, NodeId image) const {
    NodeId x = image;
    for (size_t s = 0; s < convs_.size(); ++s) {
        if (s > 0) x = halve(g, x);
        x = conv_block(g, x, bound[convs_[s].w], bound[convs_[s].b]);
    }
    const std::vector<int> shape = g.value(x).shape;
    NodeId pooled = g.avg_pool(x, shape[1], shape[1]);  // global average pool
    NodeId flat = g.reshape(pooled, {shape[0]});
    return g.l2_normalize_rows(g.fully_connected(flat, bound[head_.w], bound[head_.b]));
}

Tensor prepare_input(const Tensor& lq01, int resolution) {
    Tensor up = degradation::bicubic_resize(lq01, resolution, resolution);
    for (auto& v : up.data) v = std::clamp(v, 0.0, 1.0) * 2.0 - 1.0;
    return up;
}

std::vector<double> gt_wavelet_code(const Tensor& image_pm1, int levels, wavelet::CodePooling pooling) {
    return wavelet::wavelet_style_code(wavelet::wpd_forward(image_pm1, levels), pooling).values;
}

std::string format_log_line(int step, uint64_t seed, const StepLosses& l, int64_t time_ms) {
    std::ostringstream os;
    os.precision(12);
    os << "step=" << step << " seed=" << seed << " adv_d=" << l.adv_d << " adv_g=" << l.adv_g
       << " rec=" << l.rec << " rec_prime=" << l.rec_prime << " vgg=" << l.vgg << " ccx=" << l.ccx
       << " wmm=" << l.wmm << " total=" << l.total_g << " time_ms=" << time_ms;
    return os.str();
}

Trainer::Trainer(const TrainConfig& cfg, std::vector<dataset::DatasetItem> data)
    : cfg_(cfg),
      data_(std::move(data)),
      init_rng_(Rng::substream(cfg.seed, "init", 0)),
      gen_(g_store_, cfg.gen, init_rng_),
      query_(g_store_, cfg.gen.resolution, cfg.gen.query_dim, init_rng_),
      disc_(objectives::MultiScaleDiscriminator::create(
          d_store_, "disc", objectives::DiscriminatorConfig{{1, 2, 4, 8}, cfg.disc_base_channels},
          init_rng_)),
      bank_(cfg.memory_capacity, cfg.gen.query_dim, cfg.gen.wavelet_dim()),
      adam_g_(cfg.lr, cfg.beta1, cfg.beta2),
      adam_d_(cfg.lr, cfg.beta1, cfg.beta2) {
    require(!data_.empty(), ErrorCode::Contract, "trainer: empty dataset");
    require(cfg_.batch >= 1 && cfg_.steps >= 0, ErrorCode::Config, "trainer: bad batch/steps");
    for (const auto& item : data_)
        require(item.image.shape == std::vector<int>({3, cfg_.gen.resolution, cfg_.gen.resolution}),
                ErrorCode::Contract, "trainer: dataset image size mismatch");
}

std::vector<int> Trainer::batch_indices(int step) const {
    Rng rng = Rng::substream(cfg_.seed, "batch", static_cast<uint64_t>(step));
    std::vector<int> idx(static_cast<size_t>(cfg_.batch));
    for (auto& i : idx) i = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(data_.size()) - 1));
    return idx;
}

StepLosses Trainer::step() {
    const int t = step_;
    const auto indices = batch_indices(t);
    Rng step_rng = Rng::substream(cfg_.seed, "step", static_cast<uint64_t>(t));

    struct Sample {
        int index;
        Tensor input;    // [-1,1] network input
        Tensor target;   // [-1,1] ground truth
        Tensor noise;    // [noise_dim]
        std::vector<double> z_w;
    };
    std::vector<Sample> batch;
    batch.reserve(indices.size());
    for (int idx : indices) {
        Sample s;
        s.index = idx;
        degradation::DegradationConfig dc = degradation::sample_config(step_rng, cfg_.ranges);
        Tensor lq = degradation::degrade(data_[static_cast<size_t>(idx)].image, dc);
        s.input = prepare_input(lq, cfg_.gen.resolution);
        s.target = data_[static_cast<size_t>(idx)].image;
        for (auto& v : s.target.data) v = v * 2.0 - 1.0;
        s.noise = Tensor({cfg_.gen.noise_dim});
        for (auto& v : s.noise.data) v = step_rng.gaussian();
        s.z_w = gt_wavelet_code(s.target, cfg_.gen.wavelet_levels, cfg_.gen.pooling);
        batch.push_back(std::move(s));
    }

    StepLosses losses;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<Tensor> fakes;
    std::vector<std::vector<double>> queries;

    // generator pass: every per-image loss averaged over the batch, one
    // backward through Eq-style total plus the memory triplet term
    {
        Graph g;
        auto bound_g = g_store_.bind(g, true);
        auto bound_d = d_store_.bind(g, false);

        NodeId adv_g = g.constant_scalar(0.0);
        NodeId rec = g.constant_scalar(0.0);
        NodeId rec_prime = g.constant_scalar(0.0);
        NodeId vgg = g.constant_scalar(0.0);
        NodeId ccx = g.constant_scalar(0.0);
        NodeId wmm = g.constant_scalar(0.0);

        for (const Sample& s : batch) {
            NodeId input = g.constant(s.input);
            NodeId target = g.constant(s.target);
            NodeId noise = g.constant(s.noise);
            NodeId z_w = g.constant(Tensor({cfg_.gen.wavelet_dim()}, s.z_w));

            auto fw = gen_.forward(g, bound_g, input, noise, z_w);
            fakes.push_back(g.value(fw.restored));

            rec = g.add(rec, g.huber_loss(fw.restored, target, cfg_.weights.huber_delta));
            rec_prime = g.add(rec_prime, g.huber_loss(fw.x_mr, target, cfg_.weights.huber_delta));
            vgg = g.add(vgg, objectives::perceptual_loss(g, pyramid_, fw.restored, target,
                                                         cfg_.weights.vgg_layer_weights));
            const auto& boxes = data_[static_cast<size_t>(s.index)].boxes;
            const objectives::CropBox box_arr[3] = {boxes.left_eye, boxes.right_eye, boxes.mouth};
            ccx = g.add(ccx, objectives::component_contextual_loss(g, pyramid_, fw.restored, target, box_arr));

            // generator-side adversarial term
            NodeId g_term = g.constant_scalar(0.0);
            for (int sc = 0; sc < disc_.scale_count(); ++sc)
                g_term = g.add(g_term, g.mul_scalar(objectives::adv_g_term(
                                                        g, disc_.logits(g, bound_d, sc, fw.restored)),
                                                    cfg_.weights.adv_scale_weights[static_cast<size_t>(sc)]));
            adv_g = g.add(adv_g, g_term);

            // memory triplet: selection by value, loss rebuilt on the tape
            NodeId q_node = query_.forward(g, bound_g, input);
            queries.push_back(g.value(q_node).data);
            memory::Query q{g.value(q_node).data};
            auto wl = memory::wmm_loss(bank_, q, s.z_w, cfg_.margin, cfg_.eta);
            if (wl.positive && wl.negative) {
                NodeId pos_key = g.constant(Tensor({cfg_.gen.query_dim},
                                                   {bank_.key(*wl.positive).begin(), bank_.key(*wl.positive).end()}));
                NodeId neg_key = g.constant(Tensor({cfg_.gen.query_dim},
                                                   {bank_.key(*wl.negative).begin(), bank_.key(*wl.negative).end()}));
                NodeId hinge = g.relu(g.add_scalar(g.sub(g.dot(q_node, neg_key), g.dot(q_node, pos_key)),
                                                   cfg_.margin));
                wmm = g.add(wmm, hinge);
            }
        }
        adv_g = g.mul_scalar(adv_g, inv_b);
        rec = g.mul_scalar(rec, inv_b);
        rec_prime = g.mul_scalar(rec_prime, inv_b);
        vgg = g.mul_scalar(vgg, inv_b);
        ccx = g.mul_scalar(ccx, inv_b);
        wmm = g.mul_scalar(wmm, inv_b);

        NodeId total = objectives::total_loss(g, {adv_g, rec, rec_prime, vgg, ccx}, cfg_.weights);
        NodeId optimized = g.add(total, wmm);

        losses.adv_g = g.value(adv_g).data[0];
        losses.rec = g.value(rec).data[0];
        losses.rec_prime = g.value(rec_prime).data[0];
        losses.vgg = g.value(vgg).data[0];
        losses.ccx = g.value(ccx).data[0];
        losses.wmm = g.value(wmm).data[0];
        losses.total_g = g.value(total).data[0];

        if (!std::isfinite(g.value(optimized).data[0])) {
            if (!diag_dir_.empty()) {
                std::filesystem::create_directories(diag_dir_);
                for (size_t i = 0; i < batch.size(); ++i) {
                    serial::write_tensor(diag_dir_ + "/input_" + std::to_string(i) + ".mmt", batch[i].input);
                    serial::write_tensor(diag_dir_ + "/target_" + std::to_string(i) + ".mmt", batch[i].target);
                }
            }
            raise(ErrorCode::Numeric, "non-finite loss at step ", t,
                  diag_dir_.empty() ? "" : (" (batch dumped to " + diag_dir_ + ")").c_str());
        }

        g.backward(optimized);
        adam_g_.step(g_store_, g, bound_g);
    }

    // discriminator pass on the freshly generated images
    {
        Graph g;
        auto bound_d = d_store_.bind(g, true);
        NodeId d_obj = g.constant_scalar(0.0);
        for (size_t i = 0; i < batch.size(); ++i) {
            NodeId real = g.constant(batch[i].target);
            NodeId fake = g.constant(fakes[i]);
            for (int sc = 0; sc < disc_.scale_count(); ++sc) {
                NodeId term = objectives::adv_d_term(g, disc_.logits(g, bound_d, sc, real),
                                                     disc_.logits(g, bound_d, sc, fake));
                d_obj = g.add(d_obj, g.mul_scalar(term, cfg_.weights.adv_scale_weights[static_cast<size_t>(sc)]));
            }
        }
        d_obj = g.mul_scalar(d_obj, inv_b);
        losses.adv_d = g.value(d_obj).data[0];
        require(std::isfinite(losses.adv_d), ErrorCode::Numeric, "non-finite discriminator loss at step ", t);
        NodeId d_loss = g.mul_scalar(d_obj, -1.0);  // maximize the objective
        g.backward(d_loss);
        adam_d_.step(d_store_, g, bound_d);
    }

    // serialized memory writes at the end of the step
    for (size_t i = 0; i < batch.size(); ++i) {
        memory::Query q = memory::Query::normalized(queries[i]);
        memory::memory_update(bank_, q, batch[i].z_w, cfg_.eta,
                              static_cast<uint64_t>(t) * batch.size() + i + 1);
    }

    ++step_;
    return losses;
}

RestoreResult restore(const Tensor& lq01, const Generator& gen, ParamStore& g_store,
                      const QueryEncoder& query, const memory::MemoryBank& bank, uint64_t seed) {
    const auto& cfg = gen.config();
    Tensor input = prepare_input(lq01, cfg.resolution);

    Graph g;
    auto bound = g_store.bind(g, false);
    NodeId input_node = g.constant(input);

    RestoreResult result;
    Tensor z_w({cfg.wavelet_dim()});
    if (bank.occupied_count() > 0) {
        NodeId q_node = query.forward(g, bound, input_node);
        const auto hits = memory::knn_retrieve(bank, memory::Query{g.value(q_node).data}, 1);
        result.slot = hits[0].index;
        const auto v = bank.value(hits[0].index);
        for (int i = 0; i < cfg.wavelet_dim(); ++i) z_w.data[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
    } else {
        std::fprintf(stderr, "warning: empty memory bank, restoring with a zero wavelet code\n");
    }

    Rng noise_rng = Rng::substream(seed, "restore", 0);
    Tensor noise({cfg.noise_dim});
    for (auto& v : noise.data) v = noise_rng.gaussian();

    auto fw = gen.forward(g, bound, input_node, g.constant(noise), g.constant(z_w));
    result.image01 = g.value(fw.restored);
    for (auto& v : result.image01.data) v = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
    return result;
}

AttnDump dump_attention(const Tensor& lq01, const Generator& gen, ParamStore& g_store,
                        const std::vector<double>& z_wavelet, uint64_t seed) {
    const auto& cfg = gen.config();
    require(static_cast<int>(z_wavelet.size()) == cfg.wavelet_dim(), ErrorCode::Contract,
            "dump_attention: wavelet code length mismatch");
    Tensor input = prepare_input(lq01, cfg.resolution);
    Graph g;
    auto bound = g_store.bind(g, false);
    Rng noise_rng = Rng::substream(seed, "restore", 0);
    Tensor noise({cfg.noise_dim});
    for (auto& v : noise.data) v = noise_rng.gaussian();
    auto fw = gen.forward(g, bound, g.constant(input), g.constant(noise),
                          g.constant(Tensor({cfg.wavelet_dim()}, z_wavelet)), true);

    AttnDump dump;
    for (size_t b = 0; b < fw.traces.size(); ++b) {
        const auto& tr = fw.traces[b];
        const NodeId maps[7] = {tr.instance.spatial, tr.instance.noise, tr.instance.wavelet,
                                tr.layer.spatial,    tr.layer.noise,    tr.layer.wavelet,
                                tr.gate};
        const char* names[7] = {"inst_spatial", "inst_noise", "inst_wavelet",
                                "layer_spatial", "layer_noise", "layer_wavelet", "gate"};
        for (int m = 0; m < 7; ++m) {
            Tensor map = g.value(maps[m]);
            if (map.shape[0] > 1) {  // per-channel gate variant: average over channels
                Tensor avg({1, map.shape[1], map.shape[2]});
                for (int y = 0; y < map.shape[1]; ++y)
                    for (int x = 0; x < map.shape[2]; ++x) {
                        double acc = 0.0;
                        for (int c = 0; c < map.shape[0]; ++c) acc += map.at3(c, y, x);
                        avg.at3(0, y, x) = acc / map.shape[0];
                    }
                map = avg;
            }
            dump.per_block.push_back(map);
            dump.labels.push_back("block" + std::to_string(b) + "_" + names[m]);
        }
    }
    return dump;
}

}  // namespace rmm::pipeline
