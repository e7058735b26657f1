#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "rmm/optim.hpp"
#include "rmm/tensor.hpp"

namespace rmm::objectives {

struct LossWeights {
    double lambda_rec = 100.0;
    double lambda_rec_prime = 100.0;
    double lambda_ccx = 1.0;
    std::array<double, 4> adv_scale_weights{4.0, 2.0, 1.0, 1.0};  // for scales 1,2,4,8
    std::array<double, 5> vgg_layer_weights{1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0};
    double huber_delta = 0.1;  // images live in [-1,1]
};

// quadratic below delta, linear above, averaged over elements
NodeId huber(Graph& g, NodeId pred, NodeId target, double delta);

// Frozen random conv pyramid standing in for a pretrained feature extractor:
// five stages of 3x3 conv + leaky-relu, 2x average pooling between stages.
// Weights are fan-in initialized from a fixed seed and never trained.
class FeaturePyramid {
public:
    static constexpr int kStages = 5;
    static constexpr uint64_t kSeed = 0;

    FeaturePyramid();

    // per-stage post-activation features of an image node
    std::vector<NodeId> features(Graph& g, NodeId image) const;
    // the stages used for component matching (stand-ins for mid-level layers)
    static constexpr int kComponentStages[2] = {2, 3};

private:
    ParamStore params_;
};

// sum_i w_i * ||F_i(pred) - F_i(target)||_2
NodeId perceptual_loss(Graph& g, const FeaturePyramid& net, NodeId pred, NodeId target,
                       std::span<const double> layer_weights);

// CX similarity between two row-sets of feature vectors: cosine distances,
// row-min normalization, exponential affinities at `bandwidth`, row-sum
// normalization, then the mean over columns of the column-max.
NodeId contextual_similarity(Graph& g, NodeId rows_a, NodeId rows_b, double bandwidth = 0.5);

// value-level convenience for oracles and symmetry checks
double contextual_similarity_value(const std::vector<std::vector<double>>& a,
                                   const std::vector<std::vector<double>>& b, double bandwidth = 0.5);

struct CropBox {
    int y0 = 0, x0 = 0, h = 0, w = 0;
};

// -log CX averaged over the component crops and the two designated stages;
// zero (with a warning) when no crops are given
NodeId component_contextual_loss(Graph& g, const FeaturePyramid& net, NodeId pred, NodeId target,
                                 std::span<const CropBox> boxes, double bandwidth = 0.5);

// multi-scale patch discriminators at input scales 1,2,4,8
struct DiscriminatorConfig {
    std::vector<int> scales{1, 2, 4, 8};
    int base_channels = 16;
};

class MultiScaleDiscriminator {
public:
    static MultiScaleDiscriminator create(ParamStore& store, const std::string& prefix,
                                          const DiscriminatorConfig& cfg, Rng& rng);

    int scale_count() const { return static_cast<int>(cfg_.scales.size()); }
    int scale(int i) const { return cfg_.scales[static_cast<size_t>(i)]; }

    // patch logit map of one scale's discriminator
    NodeId logits(Graph& g, std::span<const NodeId> bound, int scale_index, NodeId image) const;

private:
    DiscriminatorConfig cfg_;
    std::vector<std::array<size_t, 8>> slots_;  // conv1 w/b, conv2 w/b, conv3 w/b, head w/b
};

// mean log sigma(real) + mean log(1 - sigma(fake)), probabilities clamped
NodeId adv_d_term(Graph& g, NodeId real_logits, NodeId fake_logits);
// -mean log sigma(fake)
NodeId adv_g_term(Graph& g, NodeId fake_logits);

struct AdvLosses {
    NodeId loss_d;  // the discriminator objective (0 at a perfect D, negative otherwise)
    NodeId loss_g;  // non-saturating generator loss
};

// Weighted sums over scales. The fake image is detached on the D side so the
// D objective never reaches generator parameters.
AdvLosses adversarial_losses(Graph& g, const MultiScaleDiscriminator& disc,
                             std::span<const NodeId> bound, NodeId real, NodeId fake,
                             std::span<const double> scale_weights);

struct LossParts {
    NodeId adv, rec, rec_prime, vgg, ccx;
};

// adv + lambda'_rec * rec' + lambda_rec * rec + vgg + lambda_ccx * ccx
NodeId total_loss(Graph& g, const LossParts& parts, const LossWeights& weights);
double total_loss_value(double adv, double rec, double rec_prime, double vgg, double ccx,
                        const LossWeights& weights);

constexpr double kProbClamp = 1e-7;

}  // namespace rmm::objectives
