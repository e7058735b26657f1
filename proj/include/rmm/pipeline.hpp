#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rmm/dataset.hpp"
#include "rmm/degradation.hpp"
#include "rmm/memory.hpp"
#include "rmm/modulation.hpp"
#include "rmm/objectives.hpp"
#include "rmm/optim.hpp"
#include "rmm/wavelet.hpp"

namespace rmm::pipeline {

struct GeneratorConfig {
    int resolution = 64;
    int blocks = 4;          // 7 in the full-depth configuration
    int base_channels = 8;
    int noise_dim = 512;
    int wavelet_levels = 2;  // 4 in the full-depth configuration (code length 765)
    std::vector<int> widths;  // per encoder scale; derived from base_channels when empty
    bool per_channel_gate = false;
    wavelet::CodePooling pooling = wavelet::CodePooling::SignedMean;
    int query_dim = 64;

    int wavelet_dim() const { return wavelet::code_length(3, wavelet_levels); }
    std::vector<int> scale_widths() const;
    void validate() const;
};

struct TrainConfig {
    int batch = 8;
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int steps = 2000;
    uint64_t seed = 0;
    objectives::LossWeights weights;
    int memory_capacity = memory::kDefaultCapacity;
    double eta = memory::kDefaultEta;
    double margin = memory::kDefaultMargin;
    int checkpoint_every = 500;
    int dataset_count = 64;
    degradation::DegradationRanges ranges;
    int disc_base_channels = 12;
    GeneratorConfig gen;
};

// Encoder/decoder generator: a skip-connected encoder refines the upsampled
// input into a mid-resolution image and provides per-scale spatial codes; the
// decoder restarts from the bottleneck and runs one modulation block per
// scale, each followed by a conv and x2 nearest upsampling.
class Generator {
public:
    Generator(ParamStore& store, const GeneratorConfig& cfg, Rng& rng);

    struct Encoded {
        std::vector<NodeId> scales;  // index s at resolution R/2^s
        NodeId x_mr;
    };
    Encoded encode(Graph& g, std::span<const NodeId> bound, NodeId input) const;

    // per-block noise embeddings from a [noise_dim] Gaussian vector
    std::vector<NodeId> map_noise(Graph& g, std::span<const NodeId> bound, NodeId noise) const;

    struct Forward {
        NodeId x_mr;
        NodeId restored;
        std::vector<NodeId> z_spatial;
        std::vector<modulation::Rm3Trace> traces;  // filled when requested
    };
    Forward forward(Graph& g, std::span<const NodeId> bound, NodeId input, NodeId noise,
                    NodeId z_wavelet, bool want_traces = false) const;

    const GeneratorConfig& config() const { return cfg_; }

private:
    struct ConvSlot {
        size_t w, b;
    };
    GeneratorConfig cfg_;
    std::vector<int> widths_;
    std::vector<ConvSlot> enc_;
    std::vector<ConvSlot> unet_dec_;
    ConvSlot unet_out_{};
    std::vector<modulation::Rm3Params> blocks_;
    std::vector<ConvSlot> post_;
    ConvSlot final_out_{};
    std::vector<ConvSlot> map_trunk_;
    std::vector<ConvSlot> map_heads_;
};

// Conv stack with pooled downsampling, global average pooling, a linear head,
// and L2 normalization; produces the memory query for an input image.
class QueryEncoder {
public:
    QueryEncoder(ParamStore& store, int resolution, int query_dim, Rng& rng);
    NodeId forward(Graph& g, std::span<const NodeId> bound, NodeId image) const;

private:
    struct ConvSlot {
        size_t w, b;
    };
    std::vector<ConvSlot> convs_;
    ConvSlot head_{};
    int final_res_;
};

// bicubic upsample of the low-quality image to the working resolution,
// mapped to [-1,1]; the common network input
Tensor prepare_input(const Tensor& lq01, int resolution);

// ground-truth wavelet style code of a [-1,1] image
std::vector<double> gt_wavelet_code(const Tensor& image_pm1, int levels, wavelet::CodePooling pooling);

struct StepLosses {
    double adv_d = 0.0, adv_g = 0.0, rec = 0.0, rec_prime = 0.0, vgg = 0.0, ccx = 0.0, wmm = 0.0,
           total_g = 0.0;
};

std::string format_log_line(int step, uint64_t seed, const StepLosses& l, int64_t time_ms);

class Trainer {
public:
    Trainer(const TrainConfig& cfg, std::vector<dataset::DatasetItem> data);

    StepLosses step();  // runs one optimization step and advances the counter
    int steps_done() const { return step_; }

    const TrainConfig& config() const { return cfg_; }
    ParamStore& gen_store() { return g_store_; }
    ParamStore& disc_store() { return d_store_; }
    const Generator& generator() const { return gen_; }
    const QueryEncoder& query_encoder() const { return query_; }
    memory::MemoryBank& bank() { return bank_; }
    const std::vector<dataset::DatasetItem>& data() const { return data_; }
    const objectives::FeaturePyramid& pyramid() const { return pyramid_; }
    const objectives::MultiScaleDiscriminator& discriminator() const { return disc_; }

    // batch drawn for a given step index (deterministic in the seed)
    std::vector<int> batch_indices(int step) const;

    // when set, non-finite losses dump the offending batch here before raising
    void set_diagnostic_dir(std::string dir) { diag_dir_ = std::move(dir); }

private:
    TrainConfig cfg_;
    std::vector<dataset::DatasetItem> data_;
    ParamStore g_store_, d_store_;
    Rng init_rng_;
    Generator gen_;
    QueryEncoder query_;
    objectives::MultiScaleDiscriminator disc_;
    objectives::FeaturePyramid pyramid_;
    memory::MemoryBank bank_;
    Adam adam_g_, adam_d_;
    int step_ = 0;
    std::string diag_dir_;
};

struct RestoreResult {
    Tensor image01;             // [3,R,R] in [0,1]
    std::optional<int> slot;    // memory slot whose value modulated the output
};

RestoreResult restore(const Tensor& lq01, const Generator& gen, ParamStore& g_store,
                      const QueryEncoder& query, const memory::MemoryBank& bank, uint64_t seed);

// Attention maps of every block for one input, for visualization.
struct AttnDump {
    std::vector<Tensor> per_block;  // each [1,H,W] maps tiled later by the caller
    std::vector<std::string> labels;
};
AttnDump dump_attention(const Tensor& lq01, const Generator& gen, ParamStore& g_store,
                        const std::vector<double>& z_wavelet, uint64_t seed);

}  // namespace rmm::pipeline
