#include "rmm/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace rmm {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    require(a.shape == b.shape, ErrorCode::Contract, who, ": shape mismatch");
}

int64_t stride_below(const std::vector<int>& shape, int axis) {
    int64_t s = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s *= shape[i];
    return s;
}

}  // namespace

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

std::vector<double>& Graph::ensure_grad(NodeId id) {
    Node& n = at(id);
    if (n.grad.empty()) n.grad.assign(n.value.data.size(), 0.0);
    return n.grad;
}

const std::vector<double>& Graph::grad(NodeId id) const {
    const Node& n = at(id);
    require(!n.grad.empty(), ErrorCode::Contract, "grad: node ", id, " has no gradient (run backward first)");
    return n.grad;
}

const std::vector<double>& Graph::norm_stats(NodeId id) const {
    const Node& n = at(id);
    require(n.op == Op::InstanceNorm || n.op == Op::LayerNorm, ErrorCode::Contract,
            "norm_stats: node ", id, " is not a normalization node");
    return n.aux;
}

NodeId Graph::leaf(Tensor t, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.needs_grad = requires_grad;
    n.value = std::move(t);
    return push(n);
}

// ---- elementwise ----

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    check_same_shape(ta, tb, "add");
    Node n;
    n.op = Op::Add;
    n.in[0] = a; n.in[1] = b; n.n_in = 2;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.value = Tensor(ta.shape);
    for (size_t i = 0; i < ta.data.size(); ++i) n.value.data[i] = ta.data[i] + tb.data[i];
    return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    check_same_shape(ta, tb, "sub");
    Node n;
    n.op = Op::Sub;
    n.in[0] = a; n.in[1] = b; n.n_in = 2;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.value = Tensor(ta.shape);
    for (size_t i = 0; i < ta.data.size(); ++i) n.value.data[i] = ta.data[i] - tb.data[i];
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    check_same_shape(ta, tb, "mul");
    Node n;
    n.op = Op::Mul;
    n.in[0] = a; n.in[1] = b; n.n_in = 2;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.value = Tensor(ta.shape);
    for (size_t i = 0; i < ta.data.size(); ++i) n.value.data[i] = ta.data[i] * tb.data[i];
    return push(std::move(n));
}

NodeId Graph::add_scalar(NodeId a, double c) {
    Node n;
    n.op = Op::AddScalar;
    n.in[0] = a; n.n_in = 1;
    n.d0 = c;
    n.needs_grad = at(a).needs_grad;
    n.value = at(a).value;
    for (auto& v : n.value.data) v += c;
    return push(std::move(n));
}

NodeId Graph::mul_scalar(NodeId a, double c) {
    Node n;
    n.op = Op::MulScalar;
    n.in[0] = a; n.n_in = 1;
    n.d0 = c;
    n.needs_grad = at(a).needs_grad;
    n.value = at(a).value;
    for (auto& v : n.value.data) v *= c;
    return push(std::move(n));
}

// ---- linear algebra ----

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
    const Tensor& tx = at(x).value;
    const Tensor& tw = at(w).value;
    const Tensor& tb = at(b).value;
    require(tx.rank() == 3, ErrorCode::Contract, "conv2d: input rank ", tx.rank(), " != 3");
    require(tw.rank() == 4, ErrorCode::Contract, "conv2d: weight rank ", tw.rank(), " != 4");
    const int c_in = tx.shape[0], h = tx.shape[1], wid = tx.shape[2];
    const int c_out = tw.shape[0], k = tw.shape[2];
    require(tw.shape[1] == c_in, ErrorCode::Contract,
            "conv2d: input channels ", c_in, " != weight channels ", tw.shape[1]);
    require(tw.shape[3] == k && (k % 2) == 1, ErrorCode::Contract, "conv2d: kernel must be square and odd, got ",
            tw.shape[2], "x", tw.shape[3]);
    require(pad >= 0 && stride >= 1, ErrorCode::Contract, "conv2d: bad stride/pad");
    require(tb.rank() == 1 && tb.shape[0] == c_out, ErrorCode::Contract,
            "conv2d: bias length ", tb.numel(), " != output channels ", c_out);
    require((h + 2 * pad - k) % stride == 0 && (wid + 2 * pad - k) % stride == 0, ErrorCode::Contract,
            "conv2d: output size not integral for H=", h, " W=", wid, " k=", k, " pad=", pad, " stride=", stride);
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (wid + 2 * pad - k) / stride + 1;

    Node n;
    n.op = Op::Conv2d;
    n.in[0] = x; n.in[1] = w; n.in[2] = b; n.n_in = 3;
    n.i0 = stride; n.i1 = pad;
    n.needs_grad = at(x).needs_grad || at(w).needs_grad || at(b).needs_grad;
    n.value = Tensor({c_out, oh, ow});
    double* out = n.value.data.data();
    const double* in = tx.data.data();
    const double* wt = tw.data.data();
    for (int co = 0; co < c_out; ++co) {
        double* op = out + static_cast<size_t>(co) * oh * ow;
        const double bias = tb.data[static_cast<size_t>(co)];
        for (int i = 0; i < oh * ow; ++i) op[i] = bias;
        for (int ci = 0; ci < c_in; ++ci) {
            const double* ip = in + static_cast<size_t>(ci) * h * wid;
            const double* wp = wt + (static_cast<size_t>(co) * c_in + ci) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = wp[ky * k + kx];
                    if (wv == 0.0) continue;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* irow = ip + static_cast<size_t>(iy) * wid;
                        double* orow = op + static_cast<size_t>(oy) * ow;
                        // clip ox range so ix = ox*stride - pad + kx stays in bounds
                        int ox0 = 0;
                        while (ox0 < ow && ox0 * stride - pad + kx < 0) ++ox0;
                        int ox1 = ow;
                        while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= wid) --ox1;
                        if (stride == 1) {
                            const double* is = irow - pad + kx;
                            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * is[ox];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox * stride - pad + kx];
                        }
                    }
                }
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::fully_connected(NodeId x, NodeId w, NodeId b) {
    const Tensor& tx = at(x).value;
    const Tensor& tw = at(w).value;
    const Tensor& tb = at(b).value;
    require(tx.rank() == 1 && tw.rank() == 2 && tb.rank() == 1, ErrorCode::Contract,
            "fully_connected: expected vector, matrix, vector");
    const int d_in = tx.shape[0], d_out = tw.shape[0];
    require(tw.shape[1] == d_in, ErrorCode::Contract,
            "fully_connected: weight inner dim ", tw.shape[1], " != input dim ", d_in);
    require(tb.shape[0] == d_out, ErrorCode::Contract,
            "fully_connected: bias dim ", tb.shape[0], " != output dim ", d_out);
    Node n;
    n.op = Op::FullyConnected;
    n.in[0] = x; n.in[1] = w; n.in[2] = b; n.n_in = 3;
    n.needs_grad = at(x).needs_grad || at(w).needs_grad || at(b).needs_grad;
    n.value = Tensor({d_out});
    for (int o = 0; o < d_out; ++o) {
        const double* row = tw.data.data() + static_cast<size_t>(o) * d_in;
        double acc = tb.data[static_cast<size_t>(o)];
        for (int i = 0; i < d_in; ++i) acc += row[i] * tx.data[static_cast<size_t>(i)];
        n.value.data[static_cast<size_t>(o)] = acc;
    }
    return push(std::move(n));
}

NodeId Graph::matmul_nt(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    require(ta.rank() == 2 && tb.rank() == 2 && ta.shape[1] == tb.shape[1], ErrorCode::Contract,
            "matmul_nt: need [n,d] x [m,d]");
    const int rows = ta.shape[0], cols = tb.shape[0], d = ta.shape[1];
    Node n;
    n.op = Op::MatmulNT;
    n.in[0] = a; n.in[1] = b; n.n_in = 2;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.value = Tensor({rows, cols});
    for (int i = 0; i < rows; ++i) {
        const double* ar = ta.data.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < cols; ++j) {
            const double* br = tb.data.data() + static_cast<size_t>(j) * d;
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += ar[k] * br[k];
            n.value.data[static_cast<size_t>(i) * cols + j] = acc;
        }
    }
    return push(std::move(n));
}

NodeId Graph::dot(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    require(ta.numel() == tb.numel(), ErrorCode::Contract, "dot: length mismatch ", ta.numel(), " vs ", tb.numel());
    Node n;
    n.op = Op::Dot;
    n.in[0] = a; n.in[1] = b; n.n_in = 2;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    double acc = 0.0;
    for (size_t i = 0; i < ta.data.size(); ++i) acc += ta.data[i] * tb.data[i];
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

// ---- nonlinearities ----

NodeId Graph::softmax(NodeId a, int axis) {
    const Tensor& ta = at(a).value;
    require(axis >= 0 && axis < ta.rank(), ErrorCode::Contract, "softmax: axis ", axis, " out of range");
    Node n;
    n.op = Op::Softmax;
    n.in[0] = a; n.n_in = 1;
    n.i0 = axis;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor(ta.shape);
    const int len = ta.shape[static_cast<size_t>(axis)];
    const int64_t inner = stride_below(ta.shape, axis);
    const int64_t outer = ta.numel() / (len * inner);
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * len * inner + i;
            double m = -1e308;
            for (int j = 0; j < len; ++j) m = std::max(m, ta.data[static_cast<size_t>(base + j * inner)]);
            double s = 0.0;
            for (int j = 0; j < len; ++j) {
                const double e = std::exp(ta.data[static_cast<size_t>(base + j * inner)] - m);
                n.value.data[static_cast<size_t>(base + j * inner)] = e;
                s += e;
            }
            for (int j = 0; j < len; ++j) n.value.data[static_cast<size_t>(base + j * inner)] /= s;
        }
    }
    return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId a) {
    Node n;
    n.op = Op::Sigmoid;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = at(a).value;
    for (auto& v : n.value.data) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(n));
}

NodeId Graph::tanh_fn(NodeId a) {
    Node n;
    n.op = Op::TanhFn;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = at(a).value;
    for (auto& v : n.value.data) v = std::tanh(v);
    return push(std::move(n));
}

NodeId Graph::exp_fn(NodeId a) {
    Node n;
    n.op = Op::ExpFn;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = at(a).value;
    for (auto& v : n.value.data) v = std::exp(v);
    return push(std::move(n));
}

NodeId Graph::log_fn(NodeId a) {
    Node n;
    n.op = Op::LogFn;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = at(a).value;
    for (auto& v : n.value.data) v = std::log(v);
    return push(std::move(n));
}

NodeId Graph::sqrt_fn(NodeId a) {
    Node n;
    n.op = Op::SqrtFn;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = at(a).value;
    for (auto& v : n.value.data) v = std::sqrt(v);
    return push(std::move(n));
}

NodeId Graph::leaky_relu(NodeId a, double slope) {
    Node n;
    n.op = Op::LeakyRelu;
    n.in[0] = a; n.n_in = 1;
    n.d0 = slope;
    n.needs_grad = at(a).needs_grad;
    n.value = at(a).value;
    for (auto& v : n.value.data) v = v >= 0.0 ? v : slope * v;
    return push(std::move(n));
}

NodeId Graph::clamp(NodeId a, double lo, double hi) {
    require(lo <= hi, ErrorCode::Contract, "clamp: lo > hi");
    Node n;
    n.op = Op::Clamp;
    n.in[0] = a; n.n_in = 1;
    n.d0 = lo; n.d1 = hi;
    n.needs_grad = at(a).needs_grad;
    n.value = at(a).value;
    for (auto& v : n.value.data) v = std::min(hi, std::max(lo, v));
    return push(std::move(n));
}

// ---- reductions ----

NodeId Graph::sum_all(NodeId a) {
    Node n;
    n.op = Op::SumAll;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    double acc = 0.0;
    for (double v : at(a).value.data) acc += v;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

NodeId Graph::mean_all(NodeId a) {
    Node n;
    n.op = Op::MeanAll;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    double acc = 0.0;
    for (double v : at(a).value.data) acc += v;
    n.value = Tensor::scalar(acc / static_cast<double>(at(a).value.numel()));
    return push(std::move(n));
}

NodeId Graph::reduce2d(NodeId a, int axis, Reduce2dKind kind) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 2 && (axis == 0 || axis == 1), ErrorCode::Contract, "reduce2d: need a matrix and axis 0/1");
    const int rows = ta.shape[0], cols = ta.shape[1];
    Node n;
    n.op = Op::Reduce2d;
    n.in[0] = a; n.n_in = 1;
    n.i0 = axis;
    n.i1 = static_cast<int>(kind);
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor({axis == 0 ? cols : rows});
    if (axis == 1) {
        for (int i = 0; i < rows; ++i) {
            const double* r = ta.data.data() + static_cast<size_t>(i) * cols;
            double acc = (kind == Reduce2dKind::Sum) ? 0.0 : r[0];
            for (int j = (kind == Reduce2dKind::Sum ? 0 : 1); j < cols; ++j) {
                if (kind == Reduce2dKind::Sum) acc += r[j];
                else if (kind == Reduce2dKind::Min) acc = std::min(acc, r[j]);
                else acc = std::max(acc, r[j]);
            }
            n.value.data[static_cast<size_t>(i)] = acc;
        }
    } else {
        for (int j = 0; j < cols; ++j) {
            double acc = (kind == Reduce2dKind::Sum) ? 0.0 : ta.data[static_cast<size_t>(j)];
            for (int i = (kind == Reduce2dKind::Sum ? 0 : 1); i < rows; ++i) {
                const double v = ta.data[static_cast<size_t>(i) * cols + j];
                if (kind == Reduce2dKind::Sum) acc += v;
                else if (kind == Reduce2dKind::Min) acc = std::min(acc, v);
                else acc = std::max(acc, v);
            }
            n.value.data[static_cast<size_t>(j)] = acc;
        }
    }
    return push(std::move(n));
}

NodeId Graph::rowwise_div(NodeId m, NodeId v) {
    const Tensor& tm = at(m).value;
    const Tensor& tv = at(v).value;
    require(tm.rank() == 2 && tv.rank() == 1 && tv.shape[0] == tm.shape[0], ErrorCode::Contract,
            "rowwise_div: need [n,m] and [n]");
    Node n;
    n.op = Op::RowwiseDiv;
    n.in[0] = m; n.in[1] = v; n.n_in = 2;
    n.needs_grad = at(m).needs_grad || at(v).needs_grad;
    n.value = Tensor(tm.shape);
    const int rows = tm.shape[0], cols = tm.shape[1];
    for (int i = 0; i < rows; ++i) {
        const double inv = 1.0 / tv.data[static_cast<size_t>(i)];
        for (int j = 0; j < cols; ++j)
            n.value.data[static_cast<size_t>(i) * cols + j] = tm.data[static_cast<size_t>(i) * cols + j] * inv;
    }
    return push(std::move(n));
}

// ---- shape / sampling ----

NodeId Graph::resize_nearest(NodeId a, int out_h, int out_w) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 3 && out_h > 0 && out_w > 0, ErrorCode::Contract, "resize_nearest: need [C,H,W]");
    const int c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
    Node n;
    n.op = Op::ResizeNearest;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < out_h; ++y) {
            const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / out_h));
            for (int x = 0; x < out_w; ++x) {
                const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / out_w));
                n.value.at3(ch, y, x) = ta.at3(ch, sy, sx);
            }
        }
    return push(std::move(n));
}

NodeId Graph::resize_bilinear(NodeId a, int out_h, int out_w) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 3 && out_h > 0 && out_w > 0, ErrorCode::Contract, "resize_bilinear: need [C,H,W]");
    const int c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
    Node n;
    n.op = Op::ResizeBilinear;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor({c, out_h, out_w});
    const double sy_scale = static_cast<double>(h) / out_h;
    const double sx_scale = static_cast<double>(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy_scale - 0.5);
        const int y0 = std::min(h - 1, static_cast<int>(fy));
        const int y1 = std::min(h - 1, y0 + 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx_scale - 0.5);
            const int x0 = std::min(w - 1, static_cast<int>(fx));
            const int x1 = std::min(w - 1, x0 + 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double top = ta.at3(ch, y0, x0) * (1 - wx) + ta.at3(ch, y0, x1) * wx;
                const double bot = ta.at3(ch, y1, x0) * (1 - wx) + ta.at3(ch, y1, x1) * wx;
                n.value.at3(ch, y, x) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::avg_pool(NodeId a, int k, int stride) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 3 && k >= 1 && stride >= 1, ErrorCode::Contract, "avg_pool: need [C,H,W]");
    const int c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
    require(h >= k && w >= k, ErrorCode::Contract, "avg_pool: window ", k, " larger than input ", h, "x", w);
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;
    Node n;
    n.op = Op::AvgPool;
    n.in[0] = a; n.n_in = 1;
    n.i0 = k; n.i1 = stride;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor({c, oh, ow});
    const double inv = 1.0 / (k * k);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) acc += ta.at3(ch, y * stride + ky, x * stride + kx);
                n.value.at3(ch, y, x) = acc * inv;
            }
    return push(std::move(n));
}

NodeId Graph::concat_c(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    require(ta.rank() == 3 && tb.rank() == 3 && ta.shape[1] == tb.shape[1] && ta.shape[2] == tb.shape[2],
            ErrorCode::Contract, "concat_c: spatial dims must match");
    Node n;
    n.op = Op::ConcatC;
    n.in[0] = a; n.in[1] = b; n.n_in = 2;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    n.value = Tensor({ta.shape[0] + tb.shape[0], ta.shape[1], ta.shape[2]});
    std::copy(ta.data.begin(), ta.data.end(), n.value.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), n.value.data.begin() + static_cast<int64_t>(ta.data.size()));
    return push(std::move(n));
}

NodeId Graph::broadcast_vec(NodeId v, int h, int w) {
    const Tensor& tv = at(v).value;
    require(tv.rank() == 1 && h > 0 && w > 0, ErrorCode::Contract, "broadcast_vec: need a vector");
    const int c = tv.shape[0];
    Node n;
    n.op = Op::BroadcastVec;
    n.in[0] = v; n.n_in = 1;
    n.needs_grad = at(v).needs_grad;
    n.value = Tensor({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
        double* plane = n.value.data.data() + static_cast<size_t>(ch) * h * w;
        const double val = tv.data[static_cast<size_t>(ch)];
        for (int i = 0; i < h * w; ++i) plane[i] = val;
    }
    return push(std::move(n));
}

NodeId Graph::slice0(NodeId a, int start, int len) {
    const Tensor& ta = at(a).value;
    require(ta.rank() >= 1 && start >= 0 && len >= 1 && start + len <= ta.shape[0], ErrorCode::Contract,
            "slice0: range [", start, ",", start + len, ") out of extent ", ta.shape[0]);
    const int64_t block = ta.numel() / ta.shape[0];
    Node n;
    n.op = Op::Slice0;
    n.in[0] = a; n.n_in = 1;
    n.i0 = start; n.i1 = len;
    n.needs_grad = at(a).needs_grad;
    std::vector<int> s = ta.shape;
    s[0] = len;
    n.value = Tensor(std::move(s));
    std::copy(ta.data.begin() + start * block, ta.data.begin() + (start + len) * block, n.value.data.begin());
    return push(std::move(n));
}

NodeId Graph::crop2d(NodeId a, int y0, int x0, int h, int w) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 3, ErrorCode::Contract, "crop2d: need [C,H,W]");
    require(y0 >= 0 && x0 >= 0 && h >= 1 && w >= 1 && y0 + h <= ta.shape[1] && x0 + w <= ta.shape[2],
            ErrorCode::Contract, "crop2d: box out of bounds");
    Node n;
    n.op = Op::Crop2d;
    n.in[0] = a; n.n_in = 1;
    n.i0 = y0; n.i1 = x0; n.i2 = h; n.i3 = w;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor({ta.shape[0], h, w});
    for (int c = 0; c < ta.shape[0]; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) n.value.at3(c, y, x) = ta.at3(c, y0 + y, x0 + x);
    return push(std::move(n));
}

NodeId Graph::pad2d(NodeId a, int top, int bottom, int left, int right) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 3 && top >= 0 && bottom >= 0 && left >= 0 && right >= 0, ErrorCode::Contract,
            "pad2d: need [C,H,W] and non-negative pads");
    const int c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
    Node n;
    n.op = Op::Pad2d;
    n.in[0] = a; n.n_in = 1;
    n.i0 = top; n.i1 = left;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor({c, h + top + bottom, w + left + right});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) n.value.at3(ch, y + top, x + left) = ta.at3(ch, y, x);
    return push(std::move(n));
}

NodeId Graph::mul_map(NodeId x, NodeId map) {
    const Tensor& tx = at(x).value;
    const Tensor& tm = at(map).value;
    require(tx.rank() == 3 && tm.rank() == 3 && tm.shape[0] == 1 && tm.shape[1] == tx.shape[1] &&
                tm.shape[2] == tx.shape[2],
            ErrorCode::Contract, "mul_map: need [C,H,W] and [1,H,W]");
    Node n;
    n.op = Op::MulMap;
    n.in[0] = x; n.in[1] = map; n.n_in = 2;
    n.needs_grad = at(x).needs_grad || at(map).needs_grad;
    n.value = Tensor(tx.shape);
    const int c = tx.shape[0];
    const int64_t plane = static_cast<int64_t>(tx.shape[1]) * tx.shape[2];
    for (int ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < plane; ++i)
            n.value.data[static_cast<size_t>(ch * plane + i)] =
                tx.data[static_cast<size_t>(ch * plane + i)] * tm.data[static_cast<size_t>(i)];
    return push(std::move(n));
}

// ---- normalizations ----

NodeId Graph::instance_norm(NodeId a, double eps) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 3, ErrorCode::Contract, "instance_norm: need [C,H,W]");
    const int c = ta.shape[0];
    const int64_t plane = static_cast<int64_t>(ta.shape[1]) * ta.shape[2];
    Node n;
    n.op = Op::InstanceNorm;
    n.in[0] = a; n.n_in = 1;
    n.d0 = eps;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor(ta.shape);
    n.aux.resize(static_cast<size_t>(2 * c));  // mu[0..c), sigma[c..2c)
    for (int ch = 0; ch < c; ++ch) {
        const double* p = ta.data.data() + static_cast<size_t>(ch) * plane;
        double mu = 0.0;
        for (int64_t i = 0; i < plane; ++i) mu += p[i];
        mu /= static_cast<double>(plane);
        double var = 0.0;
        for (int64_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= static_cast<double>(plane);
        const double sigma = std::sqrt(var + eps);
        n.aux[static_cast<size_t>(ch)] = mu;
        n.aux[static_cast<size_t>(c + ch)] = sigma;
        double* o = n.value.data.data() + static_cast<size_t>(ch) * plane;
        const double inv = 1.0 / sigma;
        for (int64_t i = 0; i < plane; ++i) o[i] = (p[i] - mu) * inv;
    }
    return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId a, double eps) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 3, ErrorCode::Contract, "layer_norm: need [C,H,W]");
    Node n;
    n.op = Op::LayerNorm;
    n.in[0] = a; n.n_in = 1;
    n.d0 = eps;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor(ta.shape);
    const int64_t total = ta.numel();
    double mu = 0.0;
    for (double v : ta.data) mu += v;
    mu /= static_cast<double>(total);
    double var = 0.0;
    for (double v : ta.data) var += (v - mu) * (v - mu);
    var /= static_cast<double>(total);
    const double sigma = std::sqrt(var + eps);
    n.aux = {mu, sigma};
    const double inv = 1.0 / sigma;
    for (size_t i = 0; i < ta.data.size(); ++i) n.value.data[i] = (ta.data[i] - mu) * inv;
    return push(std::move(n));
}

NodeId Graph::l2_normalize_rows(NodeId a) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 1 || ta.rank() == 2, ErrorCode::Contract, "l2_normalize_rows: need vector or matrix");
    const int rows = ta.rank() == 1 ? 1 : ta.shape[0];
    const int64_t d = ta.numel() / rows;
    Node n;
    n.op = Op::L2NormalizeRows;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor(ta.shape);
    n.aux.resize(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const double* p = ta.data.data() + static_cast<size_t>(r) * d;
        double s = 0.0;
        for (int64_t i = 0; i < d; ++i) s += p[i] * p[i];
        const double norm = std::max(std::sqrt(s), 1e-12);
        n.aux[static_cast<size_t>(r)] = norm;
        double* o = n.value.data.data() + static_cast<size_t>(r) * d;
        for (int64_t i = 0; i < d; ++i) o[i] = p[i] / norm;
    }
    return push(std::move(n));
}

NodeId Graph::huber_loss(NodeId pred, NodeId target, double delta) {
    const Tensor& tp = at(pred).value;
    const Tensor& tt = at(target).value;
    check_same_shape(tp, tt, "huber_loss");
    require(delta > 0.0, ErrorCode::Contract, "huber_loss: delta must be positive");
    Node n;
    n.op = Op::HuberLoss;
    n.in[0] = pred; n.in[1] = target; n.n_in = 2;
    n.d0 = delta;
    n.needs_grad = at(pred).needs_grad || at(target).needs_grad;
    double acc = 0.0;
    for (size_t i = 0; i < tp.data.size(); ++i) {
        const double diff = std::fabs(tp.data[i] - tt.data[i]);
        acc += diff <= delta ? 0.5 * diff * diff : delta * (diff - 0.5 * delta);
    }
    n.value = Tensor::scalar(acc / static_cast<double>(tp.numel()));
    return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, std::vector<int> new_shape) {
    const Tensor& ta = at(a).value;
    require(Tensor::numel_of(new_shape) == ta.numel(), ErrorCode::Contract,
            "reshape: element count mismatch");
    Node n;
    n.op = Op::Reshape;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor(std::move(new_shape), at(a).value.data);
    return push(std::move(n));
}

NodeId Graph::channels_to_rows(NodeId a) {
    const Tensor& ta = at(a).value;
    require(ta.rank() == 3, ErrorCode::Contract, "channels_to_rows: need [C,H,W]");
    const int c = ta.shape[0];
    const int64_t plane = static_cast<int64_t>(ta.shape[1]) * ta.shape[2];
    Node n;
    n.op = Op::ChannelsToRows;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = at(a).needs_grad;
    n.value = Tensor({static_cast<int>(plane), c});
    for (int ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < plane; ++i)
            n.value.data[static_cast<size_t>(i * c + ch)] = ta.data[static_cast<size_t>(ch * plane + i)];
    return push(std::move(n));
}

NodeId Graph::stop_gradient(NodeId a) {
    Node n;
    n.op = Op::StopGradient;
    n.in[0] = a; n.n_in = 1;
    n.needs_grad = false;
    n.value = at(a).value;
    return push(std::move(n));
}

// ---- backward ----

void Graph::zero_grad() {
    for (auto& n : nodes_) n.grad.clear();
}

void Graph::backward(NodeId loss) {
    require(loss >= 0 && static_cast<size_t>(loss) < nodes_.size(), ErrorCode::Contract, "backward: bad node id");
    require(at(loss).value.numel() == 1, ErrorCode::Contract,
            "backward: loss node must be scalar, has ", at(loss).value.numel(), " elements");
    ensure_grad(loss)[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = at(id);
        if (n.grad.empty() || !n.needs_grad) continue;
        backward_node(id);
    }
    // leaves that did not participate in the loss still report a defined gradient
    for (auto& n : nodes_)
        if (n.op == Op::Leaf && n.needs_grad && n.grad.empty()) n.grad.assign(n.value.data.size(), 0.0);
}

void Graph::backward_node(NodeId id) {
    Node& n = at(id);
    const std::vector<double>& g = n.grad;

    auto wants = [&](int slot) {
        return n.in[slot] >= 0 && at(n.in[slot]).needs_grad;
    };
    auto gin = [&](int slot) -> std::vector<double>& { return ensure_grad(n.in[slot]); };
    auto vin = [&](int slot) -> const Tensor& { return at(n.in[slot]).value; };

    switch (n.op) {
        case Op::Leaf:
        case Op::StopGradient:
            break;
        case Op::Add: {
            for (int s = 0; s < 2; ++s)
                if (wants(s)) {
                    auto& gi = gin(s);
                    for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                }
            break;
        }
        case Op::Sub: {
            if (wants(0)) {
                auto& gi = gin(0);
                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
            }
            if (wants(1)) {
                auto& gi = gin(1);
                for (size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
            }
            break;
        }
        case Op::Mul: {
            if (wants(0)) {
                auto& gi = gin(0);
                const auto& other = vin(1).data;
                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * other[i];
            }
            if (wants(1)) {
                auto& gi = gin(1);
                const auto& other = vin(0).data;
                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * other[i];
            }
            break;
        }
        case Op::AddScalar: {
            if (wants(0)) {
                auto& gi = gin(0);
                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
            }
            break;
        }
        case Op::MulScalar: {
            if (wants(0)) {
                auto& gi = gin(0);
                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * n.d0;
            }
            break;
        }
        case Op::Conv2d: {
            const Tensor& tx = vin(0);
            const Tensor& tw = vin(1);
            const int stride = n.i0, pad = n.i1;
            const int c_in = tx.shape[0], h = tx.shape[1], wid = tx.shape[2];
            const int c_out = tw.shape[0], k = tw.shape[2];
            const int oh = n.value.shape[1], ow = n.value.shape[2];
            if (wants(2)) {
                auto& gb = gin(2);
                for (int co = 0; co < c_out; ++co) {
                    const double* gp = g.data() + static_cast<size_t>(co) * oh * ow;
                    double acc = 0.0;
                    for (int i = 0; i < oh * ow; ++i) acc += gp[i];
                    gb[static_cast<size_t>(co)] += acc;
                }
            }
            if (wants(1)) {
                auto& gw = gin(1);
                for (int co = 0; co < c_out; ++co) {
                    const double* gp = g.data() + static_cast<size_t>(co) * oh * ow;
                    for (int ci = 0; ci < c_in; ++ci) {
                        const double* ip = tx.data.data() + static_cast<size_t>(ci) * h * wid;
                        double* wp = gw.data() + (static_cast<size_t>(co) * c_in + ci) * k * k;
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                double acc = 0.0;
                                for (int oy = 0; oy < oh; ++oy) {
                                    const int iy = oy * stride - pad + ky;
                                    if (iy < 0 || iy >= h) continue;
                                    const double* irow = ip + static_cast<size_t>(iy) * wid;
                                    const double* grow = gp + static_cast<size_t>(oy) * ow;
                                    for (int ox = 0; ox < ow; ++ox) {
                                        const int ix = ox * stride - pad + kx;
                                        if (ix < 0 || ix >= wid) continue;
                                        acc += grow[ox] * irow[ix];
                                    }
                                }
                                wp[ky * k + kx] += acc;
                            }
                    }
                }
            }
            if (wants(0)) {
                auto& gx = gin(0);
                for (int co = 0; co < c_out; ++co) {
                    const double* gp = g.data() + static_cast<size_t>(co) * oh * ow;
                    for (int ci = 0; ci < c_in; ++ci) {
                        double* xp = gx.data() + static_cast<size_t>(ci) * h * wid;
                        const double* wp = tw.data.data() + (static_cast<size_t>(co) * c_in + ci) * k * k;
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const double wv = wp[ky * k + kx];
                                if (wv == 0.0) continue;
                                for (int oy = 0; oy < oh; ++oy) {
                                    const int iy = oy * stride - pad + ky;
                                    if (iy < 0 || iy >= h) continue;
                                    double* xrow = xp + static_cast<size_t>(iy) * wid;
                                    const double* grow = gp + static_cast<size_t>(oy) * ow;
                                    int ox0 = 0;
                                    while (ox0 < ow && ox0 * stride - pad + kx < 0) ++ox0;
                                    int ox1 = ow;
                                    while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= wid) --ox1;
                                    if (stride == 1) {
                                        double* xs = xrow - pad + kx;
                                        for (int ox = ox0; ox < ox1; ++ox) xs[ox] += wv * grow[ox];
                                    } else {
                                        for (int ox = ox0; ox < ox1; ++ox)
                                            xrow[ox * stride - pad + kx] += wv * grow[ox];
                                    }
                                }
                            }
                    }
                }
            }
            break;
        }
        case Op::FullyConnected: {
            const Tensor& tx = vin(0);
            const Tensor& tw = vin(1);
            const int d_in = tx.shape[0], d_out = tw.shape[0];
            if (wants(0)) {
                auto& gx = gin(0);
                for (int o = 0; o < d_out; ++o) {
                    const double go = g[static_cast<size_t>(o)];
                    const double* row = tw.data.data() + static_cast<size_t>(o) * d_in;
                    for (int i = 0; i < d_in; ++i) gx[static_cast<size_t>(i)] += go * row[i];
                }
            }
            if (wants(1)) {
                auto& gw = gin(1);
                for (int o = 0; o < d_out; ++o) {
                    const double go = g[static_cast<size_t>(o)];
                    double* row = gw.data() + static_cast<size_t>(o) * d_in;
                    for (int i = 0; i < d_in; ++i) row[i] += go * tx.data[static_cast<size_t>(i)];
                }
            }
            if (wants(2)) {
                auto& gb = gin(2);
                for (int o = 0; o < d_out; ++o) gb[static_cast<size_t>(o)] += g[static_cast<size_t>(o)];
            }
            break;
        }
        case Op::MatmulNT: {
            const Tensor& ta = vin(0);
            const Tensor& tb = vin(1);
            const int rows = ta.shape[0], cols = tb.shape[0], d = ta.shape[1];
            if (wants(0)) {
                auto& ga = gin(0);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j) {
                        const double gv = g[static_cast<size_t>(i) * cols + j];
                        const double* br = tb.data.data() + static_cast<size_t>(j) * d;
                        double* gr = ga.data() + static_cast<size_t>(i) * d;
                        for (int k = 0; k < d; ++k) gr[k] += gv * br[k];
                    }
            }
            if (wants(1)) {
                auto& gb = gin(1);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j) {
                        const double gv = g[static_cast<size_t>(i) * cols + j];
                        const double* ar = ta.data.data() + static_cast<size_t>(i) * d;
                        double* gr = gb.data() + static_cast<size_t>(j) * d;
                        for (int k = 0; k < d; ++k) gr[k] += gv * ar[k];
                    }
            }
            break;
        }
        case Op::Dot: {
            const double gv = g[0];
            if (wants(0)) {
                auto& ga = gin(0);
                const auto& other = vin(1).data;
                for (size_t i = 0; i < other.size(); ++i) ga[i] += gv * other[i];
            }
            if (wants(1)) {
                auto& gb = gin(1);
                const auto& other = vin(0).data;
                for (size_t i = 0; i < other.size(); ++i) gb[i] += gv * other[i];
            }
            break;
        }
        case Op::Softmax: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const int axis = n.i0;
            const Tensor& y = n.value;
            const int len = y.shape[static_cast<size_t>(axis)];
            const int64_t inner = stride_below(y.shape, axis);
            const int64_t outer = y.numel() / (len * inner);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    const int64_t base = o * len * inner + i;
                    double dotv = 0.0;
                    for (int j = 0; j < len; ++j) {
                        const size_t idx = static_cast<size_t>(base + j * inner);
                        dotv += g[idx] * y.data[idx];
                    }
                    for (int j = 0; j < len; ++j) {
                        const size_t idx = static_cast<size_t>(base + j * inner);
                        gx[idx] += y.data[idx] * (g[idx] - dotv);
                    }
                }
            break;
        }
        case Op::Sigmoid: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            for (size_t i = 0; i < g.size(); ++i) {
                const double y = n.value.data[i];
                gx[i] += g[i] * y * (1.0 - y);
            }
            break;
        }
        case Op::TanhFn: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            for (size_t i = 0; i < g.size(); ++i) {
                const double y = n.value.data[i];
                gx[i] += g[i] * (1.0 - y * y);
            }
            break;
        }
        case Op::ExpFn: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value.data[i];
            break;
        }
        case Op::LogFn: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const auto& x = vin(0).data;
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[i];
            break;
        }
        case Op::SqrtFn: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * 0.5 / n.value.data[i];
            break;
        }
        case Op::LeakyRelu: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const auto& x = vin(0).data;
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (x[i] >= 0.0 ? 1.0 : n.d0);
            break;
        }
        case Op::Clamp: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const auto& x = vin(0).data;
            for (size_t i = 0; i < g.size(); ++i)
                if (x[i] > n.d0 && x[i] < n.d1) gx[i] += g[i];
            break;
        }
        case Op::SumAll: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const double gv = g[0];
            for (auto& v : gx) v += gv;
            break;
        }
        case Op::MeanAll: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const double gv = g[0] / static_cast<double>(gx.size());
            for (auto& v : gx) v += gv;
            break;
        }
        case Op::Reduce2d: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const Tensor& ta = vin(0);
            const int rows = ta.shape[0], cols = ta.shape[1];
            const int axis = n.i0;
            const auto kind = static_cast<Reduce2dKind>(n.i1);
            if (kind == Reduce2dKind::Sum) {
                if (axis == 1) {
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < cols; ++j) gx[static_cast<size_t>(i) * cols + j] += g[static_cast<size_t>(i)];
                } else {
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < cols; ++j) gx[static_cast<size_t>(i) * cols + j] += g[static_cast<size_t>(j)];
                }
            } else {
                // subgradient routed to the first extremal element (fixed scan order)
                if (axis == 1) {
                    for (int i = 0; i < rows; ++i) {
                        const double target = n.value.data[static_cast<size_t>(i)];
                        for (int j = 0; j < cols; ++j)
                            if (ta.data[static_cast<size_t>(i) * cols + j] == target) {
                                gx[static_cast<size_t>(i) * cols + j] += g[static_cast<size_t>(i)];
                                break;
                            }
                    }
                } else {
                    for (int j = 0; j < cols; ++j) {
                        const double target = n.value.data[static_cast<size_t>(j)];
                        for (int i = 0; i < rows; ++i)
                            if (ta.data[static_cast<size_t>(i) * cols + j] == target) {
                                gx[static_cast<size_t>(i) * cols + j] += g[static_cast<size_t>(j)];
                                break;
                            }
                    }
                }
            }
            break;
        }
        case Op::RowwiseDiv: {
            const Tensor& tm = vin(0);
            const Tensor& tv = vin(1);
            const int rows = tm.shape[0], cols = tm.shape[1];
            if (wants(0)) {
                auto& gm = gin(0);
                for (int i = 0; i < rows; ++i) {
                    const double inv = 1.0 / tv.data[static_cast<size_t>(i)];
                    for (int j = 0; j < cols; ++j)
                        gm[static_cast<size_t>(i) * cols + j] += g[static_cast<size_t>(i) * cols + j] * inv;
                }
            }
            if (wants(1)) {
                auto& gv = gin(1);
                for (int i = 0; i < rows; ++i) {
                    const double v = tv.data[static_cast<size_t>(i)];
                    double acc = 0.0;
                    for (int j = 0; j < cols; ++j)
                        acc += g[static_cast<size_t>(i) * cols + j] * tm.data[static_cast<size_t>(i) * cols + j];
                    gv[static_cast<size_t>(i)] -= acc / (v * v);
                }
            }
            break;
        }
        case Op::ResizeNearest: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const Tensor& ta = vin(0);
            const int c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
            const int oh = n.value.shape[1], ow = n.value.shape[2];
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < oh; ++y) {
                    const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / oh));
                    for (int x = 0; x < ow; ++x) {
                        const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / ow));
                        gx[(static_cast<size_t>(ch) * h + sy) * w + sx] +=
                            g[(static_cast<size_t>(ch) * oh + y) * ow + x];
                    }
                }
            break;
        }
        case Op::ResizeBilinear: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const Tensor& ta = vin(0);
            const int c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
            const int oh = n.value.shape[1], ow = n.value.shape[2];
            const double sy_scale = static_cast<double>(h) / oh;
            const double sx_scale = static_cast<double>(w) / ow;
            for (int y = 0; y < oh; ++y) {
                const double fy = std::max(0.0, (y + 0.5) * sy_scale - 0.5);
                const int y0 = std::min(h - 1, static_cast<int>(fy));
                const int y1 = std::min(h - 1, y0 + 1);
                const double wy = fy - y0;
                for (int x = 0; x < ow; ++x) {
                    const double fx = std::max(0.0, (x + 0.5) * sx_scale - 0.5);
                    const int x0 = std::min(w - 1, static_cast<int>(fx));
                    const int x1 = std::min(w - 1, x0 + 1);
                    const double wx = fx - x0;
                    for (int ch = 0; ch < c; ++ch) {
                        const double gv = g[(static_cast<size_t>(ch) * oh + y) * ow + x];
                        gx[(static_cast<size_t>(ch) * h + y0) * w + x0] += gv * (1 - wx) * (1 - wy);
                        gx[(static_cast<size_t>(ch) * h + y0) * w + x1] += gv * wx * (1 - wy);
                        gx[(static_cast<size_t>(ch) * h + y1) * w + x0] += gv * (1 - wx) * wy;
                        gx[(static_cast<size_t>(ch) * h + y1) * w + x1] += gv * wx * wy;
                    }
                }
            }
            break;
        }
        case Op::AvgPool: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const Tensor& ta = vin(0);
            const int c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
            const int k = n.i0, stride = n.i1;
            const int oh = n.value.shape[1], ow = n.value.shape[2];
            const double inv = 1.0 / (k * k);
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x) {
                        const double gv = g[(static_cast<size_t>(ch) * oh + y) * ow + x] * inv;
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx)
                                gx[(static_cast<size_t>(ch) * h + y * stride + ky) * w + x * stride + kx] += gv;
                    }
            break;
        }
        case Op::ConcatC: {
            const int64_t na = vin(0).numel();
            if (wants(0)) {
                auto& ga = gin(0);
                for (int64_t i = 0; i < na; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
            }
            if (wants(1)) {
                auto& gb = gin(1);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[static_cast<size_t>(na) + i];
            }
            break;
        }
        case Op::BroadcastVec: {
            if (!wants(0)) break;
            auto& gv = gin(0);
            const int c = n.value.shape[0];
            const int64_t plane = static_cast<int64_t>(n.value.shape[1]) * n.value.shape[2];
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                const double* gp = g.data() + static_cast<size_t>(ch) * plane;
                for (int64_t i = 0; i < plane; ++i) acc += gp[i];
                gv[static_cast<size_t>(ch)] += acc;
            }
            break;
        }
        case Op::Slice0: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const int64_t block = vin(0).numel() / vin(0).shape[0];
            const int64_t off = n.i0 * block;
            for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>(off) + i] += g[i];
            break;
        }
        case Op::Crop2d: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const Tensor& ta = vin(0);
            const int c = ta.shape[0], ih = ta.shape[1], iw = ta.shape[2];
            const int y0 = n.i0, x0 = n.i1, h = n.i2, w = n.i3;
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        gx[(static_cast<size_t>(ch) * ih + y0 + y) * iw + x0 + x] +=
                            g[(static_cast<size_t>(ch) * h + y) * w + x];
            break;
        }
        case Op::Pad2d: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const Tensor& ta = vin(0);
            const int c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
            const int oh = n.value.shape[1], ow = n.value.shape[2];
            const int top = n.i0, left = n.i1;
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        gx[(static_cast<size_t>(ch) * h + y) * w + x] +=
                            g[(static_cast<size_t>(ch) * oh + top + y) * ow + left + x];
            break;
        }
        case Op::MulMap: {
            const Tensor& tx = vin(0);
            const Tensor& tm = vin(1);
            const int c = tx.shape[0];
            const int64_t plane = static_cast<int64_t>(tx.shape[1]) * tx.shape[2];
            if (wants(0)) {
                auto& gx = gin(0);
                for (int ch = 0; ch < c; ++ch)
                    for (int64_t i = 0; i < plane; ++i)
                        gx[static_cast<size_t>(ch * plane + i)] +=
                            g[static_cast<size_t>(ch * plane + i)] * tm.data[static_cast<size_t>(i)];
            }
            if (wants(1)) {
                auto& gm = gin(1);
                for (int64_t i = 0; i < plane; ++i) {
                    double acc = 0.0;
                    for (int ch = 0; ch < c; ++ch)
                        acc += g[static_cast<size_t>(ch * plane + i)] * tx.data[static_cast<size_t>(ch * plane + i)];
                    gm[static_cast<size_t>(i)] += acc;
                }
            }
            break;
        }
        case Op::InstanceNorm: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const int c = n.value.shape[0];
            const int64_t plane = static_cast<int64_t>(n.value.shape[1]) * n.value.shape[2];
            const double invn = 1.0 / static_cast<double>(plane);
            for (int ch = 0; ch < c; ++ch) {
                const double sigma = n.aux[static_cast<size_t>(c + ch)];
                const double* gp = g.data() + static_cast<size_t>(ch) * plane;
                const double* yp = n.value.data.data() + static_cast<size_t>(ch) * plane;
                double gmean = 0.0, gydot = 0.0;
                for (int64_t i = 0; i < plane; ++i) {
                    gmean += gp[i];
                    gydot += gp[i] * yp[i];
                }
                gmean *= invn;
                gydot *= invn;
                double* xp = gx.data() + static_cast<size_t>(ch) * plane;
                const double inv = 1.0 / sigma;
                for (int64_t i = 0; i < plane; ++i) xp[i] += inv * (gp[i] - gmean - yp[i] * gydot);
            }
            break;
        }
        case Op::LayerNorm: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const double sigma = n.aux[1];
            const int64_t total = n.value.numel();
            const double invn = 1.0 / static_cast<double>(total);
            double gmean = 0.0, gydot = 0.0;
            for (int64_t i = 0; i < total; ++i) {
                gmean += g[static_cast<size_t>(i)];
                gydot += g[static_cast<size_t>(i)] * n.value.data[static_cast<size_t>(i)];
            }
            gmean *= invn;
            gydot *= invn;
            const double inv = 1.0 / sigma;
            for (int64_t i = 0; i < total; ++i)
                gx[static_cast<size_t>(i)] +=
                    inv * (g[static_cast<size_t>(i)] - gmean - n.value.data[static_cast<size_t>(i)] * gydot);
            break;
        }
        case Op::L2NormalizeRows: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const Tensor& ta = vin(0);
            const int rows = ta.rank() == 1 ? 1 : ta.shape[0];
            const int64_t d = ta.numel() / rows;
            for (int r = 0; r < rows; ++r) {
                const double norm = n.aux[static_cast<size_t>(r)];
                const double* yp = n.value.data.data() + static_cast<size_t>(r) * d;
                const double* gp = g.data() + static_cast<size_t>(r) * d;
                double dotv = 0.0;
                for (int64_t i = 0; i < d; ++i) dotv += gp[i] * yp[i];
                double* xp = gx.data() + static_cast<size_t>(r) * d;
                for (int64_t i = 0; i < d; ++i) xp[i] += (gp[i] - yp[i] * dotv) / norm;
            }
            break;
        }
        case Op::HuberLoss: {
            const Tensor& tp = vin(0);
            const Tensor& tt = vin(1);
            const double delta = n.d0;
            const double gv = g[0] / static_cast<double>(tp.numel());
            for (int s = 0; s < 2; ++s) {
                if (!wants(s)) continue;
                auto& gi = gin(s);
                const double sign = s == 0 ? 1.0 : -1.0;
                for (size_t i = 0; i < tp.data.size(); ++i) {
                    const double diff = tp.data[i] - tt.data[i];
                    const double d = std::fabs(diff) <= delta ? diff : delta * (diff > 0 ? 1.0 : -1.0);
                    gi[i] += sign * gv * d;
                }
            }
            break;
        }
        case Op::Reshape: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            break;
        }
        case Op::ChannelsToRows: {
            if (!wants(0)) break;
            auto& gx = gin(0);
            const Tensor& ta = vin(0);
            const int c = ta.shape[0];
            const int64_t plane = static_cast<int64_t>(ta.shape[1]) * ta.shape[2];
            for (int ch = 0; ch < c; ++ch)
                for (int64_t i = 0; i < plane; ++i)
                    gx[static_cast<size_t>(ch * plane + i)] += g[static_cast<size_t>(i * c + ch)];
            break;
        }
    }
}

}  // namespace rmm
