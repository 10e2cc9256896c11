#include "iat/graph.hpp"

#include <Eigen/Core>

#include <cmath>
#include <utility>

namespace iat {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

Var Graph::leaf(Tensor value, bool requires_grad) {
    return add_node(std::move(value), requires_grad, nullptr);
}

Var Graph::add_node(Tensor value, bool requires_grad, std::function<void(Graph&)> backfn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backfn = std::move(backfn);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

const Tensor& Graph::grad(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v)];
    check_contract(n.grad.defined(), "grad: no gradient recorded for this node");
    return n.grad;
}

Tensor& Graph::grad_buffer(Var v) {
    Node& n = nodes_[static_cast<size_t>(v)];
    if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

void Graph::backward(Var loss) {
    check_contract(val(loss).numel() == 1, "backward: loss must be scalar");
    grad_buffer(loss).fill(1.0);
    for (size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.grad.defined() || !n.backfn) continue;
        n.backfn(*this);
    }
}

namespace {

bool rg(const Graph& g, Var a) { return g.requires_grad(a); }
bool rg(const Graph& g, Var a, Var b) { return g.requires_grad(a) || g.requires_grad(b); }

}  // namespace

// ---------------- elementwise / reductions ----------------

Var add(Graph& g, Var a, Var b) {
    const Tensor& ta = g.val(a);
    const Tensor& tb = g.val(b);
    check_contract(same_shape(ta, tb), "add: shape mismatch " + shape_str(ta) + " vs " + shape_str(tb));
    Tensor out = ta.clone();
    add_scaled(out, tb, 1.0);
    bool needs = rg(g, a, b);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, b, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            if (gg.requires_grad(a)) add_scaled(gg.grad_buffer(a), go, 1.0);
            if (gg.requires_grad(b)) add_scaled(gg.grad_buffer(b), go, 1.0);
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var sub(Graph& g, Var a, Var b) {
    const Tensor& ta = g.val(a);
    const Tensor& tb = g.val(b);
    check_contract(same_shape(ta, tb), "sub: shape mismatch " + shape_str(ta) + " vs " + shape_str(tb));
    Tensor out = ta.clone();
    add_scaled(out, tb, -1.0);
    bool needs = rg(g, a, b);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, b, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            if (gg.requires_grad(a)) add_scaled(gg.grad_buffer(a), go, 1.0);
            if (gg.requires_grad(b)) add_scaled(gg.grad_buffer(b), go, -1.0);
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var mul(Graph& g, Var a, Var b) {
    const Tensor& ta = g.val(a);
    const Tensor& tb = g.val(b);
    check_contract(same_shape(ta, tb), "mul: shape mismatch");
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * tb[i];
    bool needs = rg(g, a, b);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, b, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            const Tensor& va = gg.val(a);
            const Tensor& vb = gg.val(b);
            if (gg.requires_grad(a)) {
                Tensor& da = gg.grad_buffer(a);
                for (int64_t i = 0; i < go.numel(); ++i) da[i] += go[i] * vb[i];
            }
            if (gg.requires_grad(b)) {
                Tensor& db = gg.grad_buffer(b);
                for (int64_t i = 0; i < go.numel(); ++i) db[i] += go[i] * va[i];
            }
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var scale(Graph& g, Var a, double s) {
    const Tensor& ta = g.val(a);
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) out[i] = s * ta[i];
    bool needs = rg(g, a);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, s, self](Graph& gg) { add_scaled(gg.grad_buffer(a), gg.grad(self), s); };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var add_const(Graph& g, Var a, const Tensor& c) {
    const Tensor& ta = g.val(a);
    check_contract(same_shape(ta, c), "add_const: shape mismatch");
    Tensor out = ta.clone();
    add_scaled(out, c, 1.0);
    bool needs = rg(g, a);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, self](Graph& gg) { add_scaled(gg.grad_buffer(a), gg.grad(self), 1.0); };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var exp(Graph& g, Var a) {
    const Tensor& ta = g.val(a);
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) out[i] = std::exp(ta[i]);
    bool needs = rg(g, a);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            const Tensor& vo = gg.val(self);
            Tensor& da = gg.grad_buffer(a);
            for (int64_t i = 0; i < go.numel(); ++i) da[i] += go[i] * vo[i];
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var relu(Graph& g, Var a) {
    const Tensor& ta = g.val(a);
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
    bool needs = rg(g, a);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            const Tensor& va = gg.val(a);
            Tensor& da = gg.grad_buffer(a);
            for (int64_t i = 0; i < go.numel(); ++i)
                if (va[i] > 0.0) da[i] += go[i];
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var sum(Graph& g, Var a) {
    Tensor out = Tensor::scalar(sum(g.val(a)));
    bool needs = rg(g, a);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, self](Graph& gg) {
            double go = gg.grad(self)[0];
            Tensor& da = gg.grad_buffer(a);
            for (int64_t i = 0; i < da.numel(); ++i) da[i] += go;
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var mean(Graph& g, Var a) {
    int64_t n = g.val(a).numel();
    check_contract(n > 0, "mean: empty tensor");
    return scale(g, sum(g, a), 1.0 / static_cast<double>(n));
}

Var sum_sq(Graph& g, Var a) {
    const Tensor& ta = g.val(a);
    Tensor out = Tensor::scalar(dot(ta, ta));
    bool needs = rg(g, a);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, self](Graph& gg) {
            double go = gg.grad(self)[0];
            const Tensor& va = gg.val(a);
            Tensor& da = gg.grad_buffer(a);
            for (int64_t i = 0; i < va.numel(); ++i) da[i] += 2.0 * go * va[i];
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var dot(Graph& g, Var a, Var b) {
    const Tensor& ta = g.val(a);
    const Tensor& tb = g.val(b);
    check_contract(ta.numel() == tb.numel(), "dot: size mismatch");
    Tensor out = Tensor::scalar(dot(ta, tb));
    bool needs = rg(g, a, b);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, b, self](Graph& gg) {
            double go = gg.grad(self)[0];
            if (gg.requires_grad(a)) add_scaled(gg.grad_buffer(a), gg.val(b).reshaped(gg.val(a).shape()), go);
            if (gg.requires_grad(b)) add_scaled(gg.grad_buffer(b), gg.val(a).reshaped(gg.val(b).shape()), go);
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var reshape(Graph& g, Var a, std::vector<int> shape) {
    Tensor out = g.val(a).clone().reshaped(std::move(shape));
    bool needs = rg(g, a);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [a, self](Graph& gg) {
            add_scaled(gg.grad_buffer(a), gg.grad(self).reshaped(gg.val(a).shape()), 1.0);
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var pick(Graph& g, Var v, int index) {
    const Tensor& tv = g.val(v);
    check_contract(index >= 0 && index < tv.numel(), "pick: index out of range");
    Tensor out = Tensor::scalar(tv[index]);
    bool needs = rg(g, v);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [v, index, self](Graph& gg) { gg.grad_buffer(v)[index] += gg.grad(self)[0]; };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var concat_scalars(Graph& g, const std::vector<Var>& xs) {
    check_contract(!xs.empty(), "concat_scalars: empty input");
    Tensor out({static_cast<int>(xs.size())});
    bool needs = false;
    for (size_t i = 0; i < xs.size(); ++i) {
        check_contract(g.val(xs[i]).numel() == 1, "concat_scalars: inputs must be scalars");
        out[static_cast<int64_t>(i)] = g.val(xs[i])[0];
        needs = needs || g.requires_grad(xs[i]);
    }
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        std::vector<Var> inputs = xs;
        fn = [inputs, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            for (size_t i = 0; i < inputs.size(); ++i)
                if (gg.requires_grad(inputs[i])) gg.grad_buffer(inputs[i])[0] += go[static_cast<int64_t>(i)];
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var logsumexp(Graph& g, Var v) {
    const Tensor& tv = g.val(v);
    check_contract(tv.numel() > 0, "logsumexp: empty input");
    double m = tv[0];
    for (int64_t i = 1; i < tv.numel(); ++i) m = std::max(m, tv[i]);
    double s = 0.0;
    for (int64_t i = 0; i < tv.numel(); ++i) s += std::exp(tv[i] - m);
    Tensor out = Tensor::scalar(m + std::log(s));
    bool needs = rg(g, v);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [v, self](Graph& gg) {
            double go = gg.grad(self)[0];
            double lse = gg.val(self)[0];
            const Tensor& tv2 = gg.val(v);
            Tensor& dv = gg.grad_buffer(v);
            for (int64_t i = 0; i < tv2.numel(); ++i) dv[i] += go * std::exp(tv2[i] - lse);
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var log_softmax(Graph& g, Var v) {
    const Tensor& tv = g.val(v);
    check_contract(tv.numel() > 0, "log_softmax: empty input");
    double m = tv[0];
    for (int64_t i = 1; i < tv.numel(); ++i) m = std::max(m, tv[i]);
    double s = 0.0;
    for (int64_t i = 0; i < tv.numel(); ++i) s += std::exp(tv[i] - m);
    double lse = m + std::log(s);
    Tensor out(tv.shape());
    for (int64_t i = 0; i < tv.numel(); ++i) out[i] = tv[i] - lse;
    bool needs = rg(g, v);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [v, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            const Tensor& vo = gg.val(self);
            Tensor& dv = gg.grad_buffer(v);
            double gsum = 0.0;
            for (int64_t i = 0; i < go.numel(); ++i) gsum += go[i];
            for (int64_t i = 0; i < go.numel(); ++i) dv[i] += go[i] - std::exp(vo[i]) * gsum;
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var l2_normalize(Graph& g, Var v, double eps) {
    const Tensor& tv = g.val(v);
    double nsq = dot(tv, tv);
    double n = std::sqrt(nsq + eps);
    Tensor out(tv.shape());
    for (int64_t i = 0; i < tv.numel(); ++i) out[i] = tv[i] / n;
    bool needs = rg(g, v);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [v, n, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            const Tensor& tv2 = gg.val(v);
            Tensor& dv = gg.grad_buffer(v);
            double xg = 0.0;
            for (int64_t i = 0; i < go.numel(); ++i) xg += tv2[i] * go[i];
            double n3 = n * n * n;
            for (int64_t i = 0; i < go.numel(); ++i) dv[i] += go[i] / n - tv2[i] * xg / n3;
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var matvec(Graph& g, const Tensor& m, Var v) {
    const Tensor& tv = g.val(v);
    check_contract(m.ndim() == 2 && tv.numel() == m.dim(1), "matvec: shape mismatch");
    int rows = m.dim(0);
    int cols = m.dim(1);
    Tensor out({rows});
    MapConstMat mm(m.data(), rows, cols);
    Eigen::Map<const Eigen::VectorXd> vv(tv.data(), cols);
    Eigen::Map<Eigen::VectorXd> oo(out.data(), rows);
    oo.noalias() = mm * vv;
    bool needs = rg(g, v);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        Tensor mcopy = m;  // shares storage
        fn = [v, mcopy, rows, cols, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            Tensor& dv = gg.grad_buffer(v);
            MapConstMat mm2(mcopy.data(), rows, cols);
            Eigen::Map<const Eigen::VectorXd> gg2(go.data(), rows);
            Eigen::Map<Eigen::VectorXd> dv2(dv.data(), cols);
            dv2.noalias() += mm2.transpose() * gg2;
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var cross_entropy_with_probs(Graph& g, Var logits, const Tensor& probs) {
    check_contract(g.val(logits).numel() == probs.numel(), "cross_entropy: size mismatch");
    Var ls = log_softmax(g, logits);
    Var p = g.constant(probs);
    return scale(g, dot(g, p, ls), -1.0);
}

// ---------------- conv / linear / pooling ----------------

namespace {

void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh, int ow, double* col) {
    int ci = x.dim(0);
    int h = x.dim(1);
    int w = x.dim(2);
    const double* px = x.data();
    int64_t ocols = static_cast<int64_t>(oh) * ow;
    for (int c = 0; c < ci; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* dst = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * ocols;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) dst[static_cast<int64_t>(oy) * ow + ox] = 0.0;
                        continue;
                    }
                    const double* src = px + (static_cast<int64_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kj - pad;
                        dst[static_cast<int64_t>(oy) * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* col, int ci, int h, int w, int kh, int kw, int stride, int pad, int oh,
                  int ow, Tensor& dx) {
    double* pdx = dx.data();
    int64_t ocols = static_cast<int64_t>(oh) * ow;
    for (int c = 0; c < ci; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* src = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * ocols;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = pdx + (static_cast<int64_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[static_cast<int64_t>(oy) * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Graph& g, Var x, Var w, std::optional<Var> bias, int stride, int pad) {
    const Tensor& tx = g.val(x);
    const Tensor& tw = g.val(w);
    check_contract(tx.ndim() == 3 && tw.ndim() == 4, "conv2d: expects x[C,H,W], w[Co,Ci,kh,kw]");
    check_contract(tx.dim(0) == tw.dim(1), "conv2d: channel mismatch");
    check_contract(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    int ci = tx.dim(0), h = tx.dim(1), w_in = tx.dim(2);
    int co = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (w_in + 2 * pad - kw) / stride + 1;
    check_contract(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input");

    int krows = ci * kh * kw;
    int64_t ocols = static_cast<int64_t>(oh) * ow;
    Tensor col({krows, static_cast<int>(ocols)});
    im2col(tx, kh, kw, stride, pad, oh, ow, col.data());

    Tensor out({co, oh, ow});
    {
        MapConstMat wm(tw.data(), co, krows);
        MapConstMat cm(col.data(), krows, static_cast<int>(ocols));
        MapMat om(out.data(), co, static_cast<int>(ocols));
        om.noalias() = wm * cm;
    }
    if (bias) {
        const Tensor& tb = g.val(*bias);
        check_contract(tb.numel() == co, "conv2d: bias size mismatch");
        double* po = out.data();
        for (int c = 0; c < co; ++c) {
            double bv = tb[c];
            for (int64_t i = 0; i < ocols; ++i) po[c * ocols + i] += bv;
        }
    }

    bool needs = bias ? rg(g, x, w) || g.requires_grad(*bias) : rg(g, x, w);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        std::optional<Var> b = bias;
        Tensor col_keep = col;  // shared storage, kept for dW
        fn = [x, w, b, self, col_keep, ci, h, w_in, co, kh, kw, stride, pad, oh, ow,
              krows, ocols](Graph& gg) {
            const Tensor& go = gg.grad(self);
            MapConstMat gm(go.data(), co, static_cast<int>(ocols));
            if (gg.requires_grad(w)) {
                Tensor& dw = gg.grad_buffer(w);
                MapMat dwm(dw.data(), co, krows);
                MapConstMat cm(col_keep.data(), krows, static_cast<int>(ocols));
                dwm.noalias() += gm * cm.transpose();
            }
            if (gg.requires_grad(x)) {
                Tensor dcol({krows, static_cast<int>(ocols)});
                MapMat dcm(dcol.data(), krows, static_cast<int>(ocols));
                MapConstMat wm(gg.val(w).data(), co, krows);
                dcm.noalias() = wm.transpose() * gm;
                col2im_accum(dcol.data(), ci, h, w_in, kh, kw, stride, pad, oh, ow, gg.grad_buffer(x));
            }
            if (b && gg.requires_grad(*b)) {
                Tensor& db = gg.grad_buffer(*b);
                const double* pg = go.data();
                for (int c = 0; c < co; ++c) {
                    double s = 0.0;
                    for (int64_t i = 0; i < ocols; ++i) s += pg[c * ocols + i];
                    db[c] += s;
                }
            }
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var linear(Graph& g, Var x, Var w, std::optional<Var> bias) {
    const Tensor& tx = g.val(x);
    const Tensor& tw = g.val(w);
    check_contract(tw.ndim() == 2, "linear: weight must be [dout,din]");
    check_contract(tx.numel() == tw.dim(1), "linear: input size mismatch");
    int dout = tw.dim(0);
    int din = tw.dim(1);
    Tensor out({dout});
    {
        MapConstMat wm(tw.data(), dout, din);
        Eigen::Map<const Eigen::VectorXd> xv(tx.data(), din);
        Eigen::Map<Eigen::VectorXd> ov(out.data(), dout);
        ov.noalias() = wm * xv;
    }
    if (bias) {
        const Tensor& tb = g.val(*bias);
        check_contract(tb.numel() == dout, "linear: bias size mismatch");
        for (int i = 0; i < dout; ++i) out[i] += tb[i];
    }
    bool needs = bias ? rg(g, x, w) || g.requires_grad(*bias) : rg(g, x, w);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        std::optional<Var> b = bias;
        fn = [x, w, b, dout, din, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            Eigen::Map<const Eigen::VectorXd> gv(go.data(), dout);
            if (gg.requires_grad(w)) {
                Tensor& dw = gg.grad_buffer(w);
                MapMat dwm(dw.data(), dout, din);
                Eigen::Map<const Eigen::VectorXd> xv(gg.val(x).data(), din);
                dwm.noalias() += gv * xv.transpose();
            }
            if (gg.requires_grad(x)) {
                Tensor& dx = gg.grad_buffer(x);
                Eigen::Map<Eigen::VectorXd> dxv(dx.data(), din);
                MapConstMat wm(gg.val(w).data(), dout, din);
                dxv.noalias() += wm.transpose() * gv;
            }
            if (b && gg.requires_grad(*b)) add_scaled(gg.grad_buffer(*b), go.reshaped(gg.val(*b).shape()), 1.0);
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var global_avg_pool(Graph& g, Var x) {
    const Tensor& tx = g.val(x);
    check_contract(tx.ndim() == 3, "global_avg_pool: expects [C,H,W]");
    int c = tx.dim(0);
    int64_t hw = static_cast<int64_t>(tx.dim(1)) * tx.dim(2);
    check_contract(hw > 0, "global_avg_pool: empty map");
    Tensor out({c});
    const double* px = tx.data();
    for (int i = 0; i < c; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < hw; ++j) s += px[i * hw + j];
        out[i] = s / static_cast<double>(hw);
    }
    bool needs = rg(g, x);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [x, c, hw, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            Tensor& dx = gg.grad_buffer(x);
            double* pdx = dx.data();
            for (int i = 0; i < c; ++i) {
                double v = go[i] / static_cast<double>(hw);
                for (int64_t j = 0; j < hw; ++j) pdx[i * hw + j] += v;
            }
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var global_max_pool(Graph& g, Var x) {
    const Tensor& tx = g.val(x);
    check_contract(tx.ndim() == 3, "global_max_pool: expects [C,H,W]");
    int c = tx.dim(0);
    int64_t hw = static_cast<int64_t>(tx.dim(1)) * tx.dim(2);
    check_contract(hw > 0, "global_max_pool: empty map");
    Tensor out({c});
    std::vector<int64_t> arg(static_cast<size_t>(c), 0);
    const double* px = tx.data();
    for (int i = 0; i < c; ++i) {
        double best = px[i * hw];
        int64_t bj = 0;
        for (int64_t j = 1; j < hw; ++j)
            if (px[i * hw + j] > best) {
                best = px[i * hw + j];
                bj = j;
            }
        out[i] = best;
        arg[static_cast<size_t>(i)] = bj;
    }
    bool needs = rg(g, x);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [x, c, hw, arg, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            Tensor& dx = gg.grad_buffer(x);
            for (int i = 0; i < c; ++i) dx[i * hw + arg[static_cast<size_t>(i)]] += go[i];
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var roi_max_pool(Graph& g, Var x, const Box& box, int out_size) {
    const Tensor& tx = g.val(x);
    check_contract(tx.ndim() == 3, "roi_max_pool: expects [C,H,W]");
    check_contract(out_size >= 1, "roi_max_pool: out_size must be >= 1");
    int c = tx.dim(0), h = tx.dim(1), w = tx.dim(2);
    int rx0 = std::max(0, static_cast<int>(std::floor(box.x0())));
    int ry0 = std::max(0, static_cast<int>(std::floor(box.y0())));
    int rx1 = std::min(w, static_cast<int>(std::ceil(box.x1())));
    int ry1 = std::min(h, static_cast<int>(std::ceil(box.y1())));
    check_contract(rx1 > rx0 && ry1 > ry0, "roi_max_pool: box does not intersect the map");
    int rw = rx1 - rx0, rh = ry1 - ry0;
    int f = out_size;

    Tensor out({c, f, f});
    std::vector<int64_t> arg(static_cast<size_t>(c) * f * f, 0);
    const double* px = tx.data();
    for (int a = 0; a < f; ++a) {
        int by0 = ry0 + (rh * a) / f;
        int by1 = ry0 + (rh * (a + 1)) / f;
        if (by1 == by0) by1 = std::min(by0 + 1, ry1);
        for (int b = 0; b < f; ++b) {
            int bx0 = rx0 + (rw * b) / f;
            int bx1 = rx0 + (rw * (b + 1)) / f;
            if (bx1 == bx0) bx1 = std::min(bx0 + 1, rx1);
            for (int ch = 0; ch < c; ++ch) {
                double best = -std::numeric_limits<double>::infinity();
                int64_t bidx = 0;
                for (int iy = by0; iy < by1; ++iy)
                    for (int ix = bx0; ix < bx1; ++ix) {
                        int64_t idx = (static_cast<int64_t>(ch) * h + iy) * w + ix;
                        if (px[idx] > best) {
                            best = px[idx];
                            bidx = idx;
                        }
                    }
                out.at(ch, a, b) = best;
                arg[(static_cast<size_t>(ch) * f + a) * f + b] = bidx;
            }
        }
    }
    bool needs = rg(g, x);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [x, arg, c, f, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            Tensor& dx = gg.grad_buffer(x);
            for (size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += go[static_cast<int64_t>(i)];
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

Var roi_align(Graph& g, Var x, Var box_param, int out_size) {
    const Tensor& tx = g.val(x);
    const Tensor& tb = g.val(box_param);
    check_contract(tx.ndim() == 3, "roi_align: expects [C,H,W]");
    check_contract(tb.numel() == 4, "roi_align: box param must have 4 entries");
    check_contract(out_size >= 1, "roi_align: out_size must be >= 1");
    int c = tx.dim(0), h = tx.dim(1), w = tx.dim(2);
    int f = out_size;
    double bcx = tb[0], bcy = tb[1];
    double bw = std::exp(tb[2]), bh = std::exp(tb[3]);

    struct Sample {
        int ix, iy;
        double txf, tyf;   // interpolation fractions
        bool live_x, live_y;  // clamped coordinates carry no positional gradient
        double off_x, off_y;  // bin offsets relative to box center, in box units
    };
    std::vector<Sample> samples(static_cast<size_t>(f) * f);
    for (int a = 0; a < f; ++a) {
        double off_y = (a + 0.5) / f - 0.5;
        double sy = bcy + bh * off_y;
        double fy_raw = sy * h - 0.5;
        double fy = std::clamp(fy_raw, 0.0, static_cast<double>(h - 1));
        for (int b = 0; b < f; ++b) {
            double off_x = (b + 0.5) / f - 0.5;
            double sx = bcx + bw * off_x;
            double fx_raw = sx * w - 0.5;
            double fx = std::clamp(fx_raw, 0.0, static_cast<double>(w - 1));
            Sample s;
            s.iy = std::min(static_cast<int>(std::floor(fy)), std::max(0, h - 2));
            s.ix = std::min(static_cast<int>(std::floor(fx)), std::max(0, w - 2));
            s.tyf = h > 1 ? fy - s.iy : 0.0;
            s.txf = w > 1 ? fx - s.ix : 0.0;
            s.live_y = fy_raw > 0.0 && fy_raw < h - 1.0 && h > 1;
            s.live_x = fx_raw > 0.0 && fx_raw < w - 1.0 && w > 1;
            s.off_x = off_x;
            s.off_y = off_y;
            samples[static_cast<size_t>(a) * f + b] = s;
        }
    }

    Tensor out({c, f, f});
    const double* px = tx.data();
    auto pix = [&](int ch, int iy, int ix) {
        return px[(static_cast<int64_t>(ch) * h + std::min(iy, h - 1)) * w + std::min(ix, w - 1)];
    };
    for (int ch = 0; ch < c; ++ch)
        for (int a = 0; a < f; ++a)
            for (int b = 0; b < f; ++b) {
                const Sample& s = samples[static_cast<size_t>(a) * f + b];
                double v00 = pix(ch, s.iy, s.ix);
                double v01 = pix(ch, s.iy, s.ix + 1);
                double v10 = pix(ch, s.iy + 1, s.ix);
                double v11 = pix(ch, s.iy + 1, s.ix + 1);
                out.at(ch, a, b) = (1 - s.tyf) * ((1 - s.txf) * v00 + s.txf * v01) +
                                   s.tyf * ((1 - s.txf) * v10 + s.txf * v11);
            }

    bool needs = rg(g, x, box_param);
    std::function<void(Graph&)> fn;
    if (needs) {
        Var self = static_cast<Var>(g.num_nodes());
        fn = [x, box_param, samples, c, h, w, f, bw, bh, self](Graph& gg) {
            const Tensor& go = gg.grad(self);
            const Tensor& tx2 = gg.val(x);
            const double* px2 = tx2.data();
            auto pix2 = [&](int ch, int iy, int ix) {
                return px2[(static_cast<int64_t>(ch) * h + std::min(iy, h - 1)) * w + std::min(ix, w - 1)];
            };
            bool need_x = gg.requires_grad(x);
            bool need_b = gg.requires_grad(box_param);
            Tensor* dx = need_x ? &gg.grad_buffer(x) : nullptr;
            double dcx = 0, dcy = 0, dlw = 0, dlh = 0;
            for (int ch = 0; ch < c; ++ch)
                for (int a = 0; a < f; ++a)
                    for (int b = 0; b < f; ++b) {
                        const Sample& s = samples[static_cast<size_t>(a) * f + b];
                        double gv = go.at(ch, a, b);
                        if (gv == 0.0) continue;
                        if (need_x) {
                            auto acc = [&](int iy, int ix, double wgt) {
                                int cy = std::min(iy, h - 1);
                                int cx = std::min(ix, w - 1);
                                (*dx)[(static_cast<int64_t>(ch) * h + cy) * w + cx] += gv * wgt;
                            };
                            acc(s.iy, s.ix, (1 - s.tyf) * (1 - s.txf));
                            acc(s.iy, s.ix + 1, (1 - s.tyf) * s.txf);
                            acc(s.iy + 1, s.ix, s.tyf * (1 - s.txf));
                            acc(s.iy + 1, s.ix + 1, s.tyf * s.txf);
                        }
                        if (need_b) {
                            double v00 = pix2(ch, s.iy, s.ix);
                            double v01 = pix2(ch, s.iy, s.ix + 1);
                            double v10 = pix2(ch, s.iy + 1, s.ix);
                            double v11 = pix2(ch, s.iy + 1, s.ix + 1);
                            double dfx = s.live_x ? (1 - s.tyf) * (v01 - v00) + s.tyf * (v11 - v10) : 0.0;
                            double dfy = s.live_y ? (1 - s.txf) * (v10 - v00) + s.txf * (v11 - v01) : 0.0;
                            // fx = (bcx + bw*off_x)*w - 0.5, bw = exp(lw)
                            dcx += gv * dfx * w;
                            dlw += gv * dfx * w * bw * s.off_x;
                            dcy += gv * dfy * h;
                            dlh += gv * dfy * h * bh * s.off_y;
                        }
                    }
            if (need_b) {
                Tensor& db = gg.grad_buffer(box_param);
                db[0] += dcx;
                db[1] += dcy;
                db[2] += dlw;
                db[3] += dlh;
            }
        };
    }
    return g.add_node(std::move(out), needs, std::move(fn));
}

}  // namespace iat
