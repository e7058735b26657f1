#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmm/error.hpp"

namespace rmm {

// Dense row-major float64 tensor. The universal numeric carrier: images are
// [C,H,W], conv weights [Cout,Cin,kh,kw], vectors [D], scalars [1].
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        require(numel_of(shape) == static_cast<int64_t>(data.size()), ErrorCode::Contract,
                "tensor: shape product ", numel_of(shape), " != data length ", data.size());
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int e : s) {
            require(e > 0, ErrorCode::Contract, "tensor: non-positive extent ", e);
            n *= e;
        }
        return n;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int extent(int axis) const { return shape[static_cast<size_t>(axis)]; }

    double& at3(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at3(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
};

using NodeId = int32_t;

enum class Op : uint8_t {
    Leaf,
    Add, Sub, Mul, AddScalar, MulScalar,
    Conv2d, FullyConnected, MatmulNT, Dot,
    Softmax, Sigmoid, TanhFn, ExpFn, LogFn, SqrtFn, LeakyRelu, Clamp,
    SumAll, MeanAll, Reduce2d, RowwiseDiv,
    ResizeNearest, ResizeBilinear, AvgPool, ConcatC, BroadcastVec,
    Slice0, Crop2d, Pad2d, MulMap,
    InstanceNorm, LayerNorm, L2NormalizeRows, HuberLoss,
    Reshape, ChannelsToRows, StopGradient,
};

enum class Reduce2dKind : uint8_t { Min, Max, Sum };

// One recorded operation. Values are computed eagerly when the node is
// created; backward() later fills grads in reverse tape order.
struct Node {
    Op op = Op::Leaf;
    NodeId in[3] = {-1, -1, -1};
    int n_in = 0;
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;  // op-specific integer attrs
    double d0 = 0.0, d1 = 0.0;           // op-specific scalar attrs
    bool needs_grad = false;
    Tensor value;
    std::vector<double> grad;   // empty until touched by backward
    std::vector<double> aux;    // per-op stash (norm statistics)
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
// topologically ordered by construction; backward() walks it once in reverse.
// Single-threaded per graph; all reductions run in a fixed order so results
// are bit-identical across runs.
class Graph {
public:
    NodeId leaf(Tensor t, bool requires_grad = true);
    NodeId constant(Tensor t) { return leaf(std::move(t), false); }
    NodeId constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId add_scalar(NodeId a, double c);
    NodeId mul_scalar(NodeId a, double c);

    // x[Cin,H,W] (cross-)correlated with w[Cout,Cin,k,k] plus bias[Cout].
    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
    // w[Dout,Din] * x[Din] + b[Dout]
    NodeId fully_connected(NodeId x, NodeId w, NodeId b);
    // A[n,d] * B[m,d]^T -> [n,m]
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId dot(NodeId a, NodeId b);

    NodeId softmax(NodeId a, int axis);
    NodeId sigmoid(NodeId a);
    NodeId tanh_fn(NodeId a);
    NodeId exp_fn(NodeId a);
    NodeId log_fn(NodeId a);
    NodeId sqrt_fn(NodeId a);
    NodeId leaky_relu(NodeId a, double slope);
    NodeId relu(NodeId a) { return leaky_relu(a, 0.0); }
    NodeId clamp(NodeId a, double lo, double hi);

    NodeId sum_all(NodeId a);
    NodeId mean_all(NodeId a);
    // reduce a [n,m] matrix along `axis` (0: over rows -> [m], 1: over cols -> [n])
    NodeId reduce2d(NodeId a, int axis, Reduce2dKind kind);
    // M[n,m] with every row i divided by v[i]
    NodeId rowwise_div(NodeId m, NodeId v);

    NodeId resize_nearest(NodeId a, int out_h, int out_w);
    NodeId resize_bilinear(NodeId a, int out_h, int out_w);
    NodeId avg_pool(NodeId a, int k, int stride);
    NodeId concat_c(NodeId a, NodeId b);
    NodeId broadcast_vec(NodeId v, int h, int w);
    // contiguous slice along axis 0 (channel range of [C,H,W] or span of [D])
    NodeId slice0(NodeId a, int start, int len);
    NodeId crop2d(NodeId a, int y0, int x0, int h, int w);
    NodeId pad2d(NodeId a, int top, int bottom, int left, int right);
    // x[C,H,W] * map[1,H,W], map broadcast across channels
    NodeId mul_map(NodeId x, NodeId map);

    NodeId instance_norm(NodeId a, double eps);
    NodeId layer_norm(NodeId a, double eps);
    NodeId l2_normalize_rows(NodeId a);
    NodeId huber_loss(NodeId pred, NodeId target, double delta);

    NodeId reshape(NodeId a, std::vector<int> new_shape);
    NodeId channels_to_rows(NodeId a);  // [C,H,W] -> [H*W, C]
    NodeId stop_gradient(NodeId a);

    void backward(NodeId loss);
    void zero_grad();

    const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    const std::vector<double>& grad(NodeId id) const;
    // per-channel (instance) or whole-map (layer) mean/stddev recorded by a norm node
    const std::vector<double>& norm_stats(NodeId id) const;

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    NodeId push(Node n);
    Node& at(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& at(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
    std::vector<double>& ensure_grad(NodeId id);
    void backward_node(NodeId id);

    std::vector<Node> nodes_;
};

}  // namespace rmm
