#include "cmtf/tensor/graph.hpp"

#include <algorithm>
#include <cmath>

#include "cmtf/error.hpp"

namespace cmtf::tensor {

const char* op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::Transpose: return "transpose";
        case OpKind::Add: return "add";
        case OpKind::AddRow: return "add_row";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Relu: return "relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Softmax: return "softmax_rows";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::Slice: return "slice";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::BceWithLogits: return "bce_with_logits";
        case OpKind::Mse: return "mse";
    }
    return "?";
}

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

Var Graph::leaf(Tensor value, bool requires_grad) {
    require_finite(value, "leaf");
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

Var Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Graph::Node& Graph::node(Var v) {
    if (v.graph != this || v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
    return nodes_[v.id];
}

const Tensor& Graph::grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.empty()) throw ContractError("no gradient recorded for node " + std::to_string(id));
    return n.grad;
}

void Graph::accumulate(NodeId id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
        n.grad = g;
        return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

namespace {

Graph* common_graph(std::initializer_list<Var> vars) {
    Graph* g = vars.begin()->graph;
    for (const auto& v : vars) {
        if (v.graph != g || g == nullptr) throw ContractError("operands belong to different graphs");
    }
    return g;
}

bool any_requires(const Graph& g, std::initializer_list<Var> vars) {
    return std::any_of(vars.begin(), vars.end(), [&](const Var& v) { return g.requires_grad(v.id); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

double stable_sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph* g = common_graph({a, b});
    Graph::Node n;
    n.kind = OpKind::MatMul;
    n.inputs = {a.id, b.id};
    n.value = matmul(a.value(), b.value());
    n.requires_grad = any_requires(*g, {a, b});
    return g->push(std::move(n));
}

Var transpose(Var a) {
    Graph* g = a.graph;
    Graph::Node n;
    n.kind = OpKind::Transpose;
    n.inputs = {a.id};
    n.value = transpose(a.value());
    n.requires_grad = g->requires_grad(a.id);
    return g->push(std::move(n));
}

Var add(Var a, Var b) {
    Graph* g = common_graph({a, b});
    require_same_shape(a.value(), b.value(), "add");
    Graph::Node n;
    n.kind = OpKind::Add;
    n.inputs = {a.id, b.id};
    n.value = a.value();
    auto dst = n.value.data();
    auto src = b.value().data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    require_finite(n.value, "add");
    n.requires_grad = any_requires(*g, {a, b});
    return g->push(std::move(n));
}

Var add_row(Var m, Var bias) {
    Graph* g = common_graph({m, bias});
    const Tensor& mv = m.value();
    const Tensor& bv = bias.value();
    if (bv.size() != mv.cols()) {
        throw DimensionError("add_row: bias " + bv.shape_string() + " does not match columns of " + mv.shape_string());
    }
    Graph::Node n;
    n.kind = OpKind::AddRow;
    n.inputs = {m.id, bias.id};
    n.value = mv;
    const std::size_t r = mv.rows(), c = mv.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) n.value(i, j) += bv[j];
    require_finite(n.value, "add_row");
    n.requires_grad = any_requires(*g, {m, bias});
    return g->push(std::move(n));
}

Var mul(Var a, Var b) {
    Graph* g = common_graph({a, b});
    require_same_shape(a.value(), b.value(), "mul");
    Graph::Node n;
    n.kind = OpKind::Mul;
    n.inputs = {a.id, b.id};
    n.value = a.value();
    auto dst = n.value.data();
    auto src = b.value().data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= src[i];
    require_finite(n.value, "mul");
    n.requires_grad = any_requires(*g, {a, b});
    return g->push(std::move(n));
}

Var scale(Var a, double factor) {
    Graph* g = a.graph;
    Graph::Node n;
    n.kind = OpKind::Scale;
    n.inputs = {a.id};
    n.scalar = factor;
    n.value = a.value();
    for (auto& v : n.value.data()) v *= factor;
    require_finite(n.value, "scale");
    n.requires_grad = g->requires_grad(a.id);
    return g->push(std::move(n));
}

Var relu(Var a) {
    Graph* g = a.graph;
    Graph::Node n;
    n.kind = OpKind::Relu;
    n.inputs = {a.id};
    n.value = a.value();
    for (auto& v : n.value.data()) v = v > 0.0 ? v : 0.0;
    n.requires_grad = g->requires_grad(a.id);
    return g->push(std::move(n));
}

Var sigmoid(Var a) {
    Graph* g = a.graph;
    Graph::Node n;
    n.kind = OpKind::Sigmoid;
    n.inputs = {a.id};
    n.value = a.value();
    for (auto& v : n.value.data()) v = stable_sigmoid(v);
    n.requires_grad = g->requires_grad(a.id);
    return g->push(std::move(n));
}

Var softmax_rows(Var a) {
    Graph* g = a.graph;
    Graph::Node n;
    n.kind = OpKind::Softmax;
    n.inputs = {a.id};
    n.value = softmax_rows(a.value());
    n.requires_grad = g->requires_grad(a.id);
    return g->push(std::move(n));
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Graph* g = common_graph({x, gain, bias});
    const Tensor& xv = x.value();
    const std::size_t d = xv.cols();
    if (d == 0) throw DimensionError("layer_norm: zero-length last dimension");
    if (gain.value().size() != d || bias.value().size() != d) {
        throw DimensionError("layer_norm: gain/bias " + gain.value().shape_string() + "/" +
                             bias.value().shape_string() + " do not match last dimension of " + xv.shape_string());
    }
    Graph::Node n;
    n.kind = OpKind::LayerNorm;
    n.inputs = {x.id, gain.id, bias.id};
    n.scalar = eps;
    const std::size_t r = xv.rows();
    n.saved = xv;  // becomes x-hat
    n.saved_inv.resize(r);
    n.value = xv;
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xv(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        n.saved_inv[i] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (xv(i, j) - mean) * inv;
            n.saved(i, j) = xh;
            n.value(i, j) = gv[j] * xh + bv[j];
        }
    }
    require_finite(n.value, "layer_norm");
    n.requires_grad = any_requires(*g, {x, gain, bias});
    return g->push(std::move(n));
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    Graph* g = parts.front().graph;
    const std::size_t r = parts.front().value().rows();
    std::size_t total = 0;
    bool req = false;
    Graph::Node n;
    n.kind = OpKind::ConcatCols;
    for (const auto& p : parts) {
        if (p.graph != g) throw ContractError("operands belong to different graphs");
        if (p.value().rows() != r) {
            throw DimensionError("concat_cols: row mismatch " + parts.front().value().shape_string() + " vs " +
                                 p.value().shape_string());
        }
        total += p.value().cols();
        req = req || g->requires_grad(p.id);
        n.inputs.push_back(p.id);
    }
    n.value = Tensor::zeros(r, total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        const std::size_t c = pv.cols();
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(pv.data().data() + i * c, c, n.value.data().data() + i * total + off);
        off += c;
    }
    n.requires_grad = req;
    return g->push(std::move(n));
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    Graph* g = parts.front().graph;
    const std::size_t c = parts.front().value().cols();
    std::size_t total = 0;
    bool req = false;
    Graph::Node n;
    n.kind = OpKind::ConcatRows;
    for (const auto& p : parts) {
        if (p.graph != g) throw ContractError("operands belong to different graphs");
        if (p.value().cols() != c) {
            throw DimensionError("concat_rows: column mismatch " + parts.front().value().shape_string() + " vs " +
                                 p.value().shape_string());
        }
        total += p.value().rows();
        req = req || g->requires_grad(p.id);
        n.inputs.push_back(p.id);
    }
    std::vector<double> data;
    data.reserve(total * c);
    for (const auto& p : parts) data.insert(data.end(), p.value().values().begin(), p.value().values().end());
    n.value = Tensor({total, c}, std::move(data));
    n.requires_grad = req;
    return g->push(std::move(n));
}

Var slice(Var a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols) {
    Graph* g = a.graph;
    const Tensor& av = a.value();
    if (nrows == 0 || ncols == 0 || row0 + nrows > av.rows() || col0 + ncols > av.cols()) {
        throw DimensionError("slice: block [" + std::to_string(row0) + "+" + std::to_string(nrows) + ", " +
                             std::to_string(col0) + "+" + std::to_string(ncols) + "] outside " + av.shape_string());
    }
    Graph::Node n;
    n.kind = OpKind::Slice;
    n.inputs = {a.id};
    n.offset_row = row0;
    n.offset_col = col0;
    n.value = Tensor::zeros(nrows, ncols);
    for (std::size_t i = 0; i < nrows; ++i)
        std::copy_n(av.data().data() + (row0 + i) * av.cols() + col0, ncols, n.value.data().data() + i * ncols);
    n.requires_grad = g->requires_grad(a.id);
    return g->push(std::move(n));
}

Var sum(Var a) {
    Graph* g = a.graph;
    Graph::Node n;
    n.kind = OpKind::Sum;
    n.inputs = {a.id};
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    n.value = Tensor::scalar(s);
    require_finite(n.value, "sum");
    n.requires_grad = g->requires_grad(a.id);
    return g->push(std::move(n));
}

Var mean(Var a) {
    Graph* g = a.graph;
    Graph::Node n;
    n.kind = OpKind::Mean;
    n.inputs = {a.id};
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    n.value = Tensor::scalar(s / static_cast<double>(a.value().size()));
    require_finite(n.value, "mean");
    n.requires_grad = g->requires_grad(a.id);
    return g->push(std::move(n));
}

Var bce_with_logits(Var logits, Var targets) {
    Graph* g = common_graph({logits, targets});
    require_same_shape(logits.value(), targets.value(), "bce_with_logits");
    const auto z = logits.value().data();
    const auto y = targets.value().data();
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        s += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
    }
    Graph::Node n;
    n.kind = OpKind::BceWithLogits;
    n.inputs = {logits.id, targets.id};
    n.value = Tensor::scalar(s / static_cast<double>(z.size()));
    require_finite(n.value, "bce_with_logits");
    n.requires_grad = any_requires(*g, {logits, targets});
    return g->push(std::move(n));
}

Var mse(Var pred, Var target) {
    Graph* g = common_graph({pred, target});
    require_same_shape(pred.value(), target.value(), "mse");
    const auto p = pred.value().data();
    const auto t = target.value().data();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
    Graph::Node n;
    n.kind = OpKind::Mse;
    n.inputs = {pred.id, target.id};
    n.value = Tensor::scalar(s / static_cast<double>(p.size()));
    require_finite(n.value, "mse");
    n.requires_grad = any_requires(*g, {pred, target});
    return g->push(std::move(n));
}

void Graph::backward(Var loss) {
    Node& root = node(loss);
    if (root.value.size() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + root.value.shape_string());
    }
    for (auto& n : nodes_) n.grad = Tensor();
    if (!root.requires_grad) return;
    root.grad = Tensor(root.value.shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.kind == OpKind::Leaf || !n.requires_grad || n.grad.empty()) continue;
        backprop_node(n);
    }
    // Leaves that took part in the graph but received no signal still get a
    // zero gradient of matching shape.
    for (std::size_t i = 0; i <= loss.id; ++i) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    }
}

void Graph::backprop_node(Node& n) {
    const Tensor& gout = n.grad;
    auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
    auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

    switch (n.kind) {
        case OpKind::Leaf: break;
        case OpKind::MatMul: {
            if (wants(0)) {
                Tensor ga = matmul_nt(gout, in(1));
                accumulate(n.inputs[0], Tensor(in(0).shape(), std::vector<double>(ga.values())));
            }
            if (wants(1)) {
                Tensor gb = matmul_tn(in(0), gout);
                accumulate(n.inputs[1], Tensor(in(1).shape(), std::vector<double>(gb.values())));
            }
            break;
        }
        case OpKind::Transpose: {
            accumulate(n.inputs[0], transpose(gout));
            break;
        }
        case OpKind::Add: {
            if (wants(0)) accumulate(n.inputs[0], gout);
            if (wants(1)) accumulate(n.inputs[1], gout);
            break;
        }
        case OpKind::AddRow: {
            if (wants(0)) accumulate(n.inputs[0], gout);
            if (wants(1)) {
                Tensor gb(in(1).shape(), 0.0);
                const std::size_t r = gout.rows(), c = gout.cols();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += gout(i, j);
                accumulate(n.inputs[1], gb);
            }
            break;
        }
        case OpKind::Mul: {
            for (std::size_t k = 0; k < 2; ++k) {
                if (!wants(k)) continue;
                Tensor gk = gout;
                auto other = in(1 - k).data();
                auto dst = gk.data();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= other[i];
                accumulate(n.inputs[k], gk);
            }
            break;
        }
        case OpKind::Scale: {
            Tensor ga = gout;
            for (auto& v : ga.data()) v *= n.scalar;
            accumulate(n.inputs[0], ga);
            break;
        }
        case OpKind::Relu: {
            Tensor ga = gout;
            auto x = in(0).data();
            auto dst = ga.data();
            for (std::size_t i = 0; i < dst.size(); ++i)
                if (x[i] <= 0.0) dst[i] = 0.0;
            accumulate(n.inputs[0], ga);
            break;
        }
        case OpKind::Sigmoid: {
            Tensor ga = gout;
            auto y = n.value.data();
            auto dst = ga.data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= y[i] * (1.0 - y[i]);
            accumulate(n.inputs[0], ga);
            break;
        }
        case OpKind::Softmax: {
            Tensor ga = gout;
            const std::size_t r = n.value.rows(), c = n.value.cols();
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += gout(i, j) * n.value(i, j);
                for (std::size_t j = 0; j < c; ++j) ga(i, j) = n.value(i, j) * (gout(i, j) - dot);
            }
            accumulate(n.inputs[0], ga);
            break;
        }
        case OpKind::LayerNorm: {
            const Tensor& xhat = n.saved;
            const Tensor& gain = in(1);
            const std::size_t r = xhat.rows(), d = xhat.cols();
            if (wants(0)) {
                Tensor gx(in(0).shape(), 0.0);
                std::vector<double> dxh(d);
                for (std::size_t i = 0; i < r; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dxh[j] = gout(i, j) * gain[j];
                        m1 += dxh[j];
                        m2 += dxh[j] * xhat(i, j);
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) gx(i, j) = n.saved_inv[i] * (dxh[j] - m1 - xhat(i, j) * m2);
                }
                accumulate(n.inputs[0], gx);
            }
            if (wants(1) || wants(2)) {
                Tensor gg(gain.shape(), 0.0), gb(in(2).shape(), 0.0);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += gout(i, j) * xhat(i, j);
                        gb[j] += gout(i, j);
                    }
                }
                if (wants(1)) accumulate(n.inputs[1], gg);
                if (wants(2)) accumulate(n.inputs[2], gb);
            }
            break;
        }
        case OpKind::ConcatCols: {
            const std::size_t r = gout.rows(), total = gout.cols();
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                const Tensor& part = in(k);
                const std::size_t c = part.cols();
                if (wants(k)) {
                    Tensor gp(part.shape(), 0.0);
                    for (std::size_t i = 0; i < r; ++i)
                        std::copy_n(gout.data().data() + i * total + off, c, gp.data().data() + i * c);
                    accumulate(n.inputs[k], gp);
                }
                off += c;
            }
            break;
        }
        case OpKind::ConcatRows: {
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                const Tensor& part = in(k);
                if (wants(k)) {
                    std::vector<double> data(gout.data().begin() + static_cast<std::ptrdiff_t>(off),
                                             gout.data().begin() + static_cast<std::ptrdiff_t>(off + part.size()));
                    accumulate(n.inputs[k], Tensor(part.shape(), std::move(data)));
                }
                off += part.size();
            }
            break;
        }
        case OpKind::Slice: {
            Node& src = nodes_[n.inputs[0]];
            if (!src.requires_grad) break;
            if (src.grad.empty()) src.grad = Tensor(src.value.shape(), 0.0);
            const std::size_t nr = gout.rows(), nc = gout.cols(), sc = src.value.cols();
            for (std::size_t i = 0; i < nr; ++i)
                for (std::size_t j = 0; j < nc; ++j) src.grad[(n.offset_row + i) * sc + n.offset_col + j] += gout(i, j);
            break;
        }
        case OpKind::Sum: {
            accumulate(n.inputs[0], Tensor(in(0).shape(), gout[0]));
            break;
        }
        case OpKind::Mean: {
            accumulate(n.inputs[0], Tensor(in(0).shape(), gout[0] / static_cast<double>(in(0).size())));
            break;
        }
        case OpKind::BceWithLogits: {
            const auto z = in(0).data();
            const auto y = in(1).data();
            const double k = gout[0] / static_cast<double>(z.size());
            if (wants(0)) {
                Tensor gz(in(0).shape(), 0.0);
                for (std::size_t i = 0; i < z.size(); ++i) gz[i] = k * (stable_sigmoid(z[i]) - y[i]);
                accumulate(n.inputs[0], gz);
            }
            if (wants(1)) {
                Tensor gy(in(1).shape(), 0.0);
                for (std::size_t i = 0; i < z.size(); ++i) gy[i] = -k * z[i];
                accumulate(n.inputs[1], gy);
            }
            break;
        }
        case OpKind::Mse: {
            const auto p = in(0).data();
            const auto t = in(1).data();
            const double k = 2.0 * gout[0] / static_cast<double>(p.size());
            Tensor gp(in(0).shape(), 0.0);
            for (std::size_t i = 0; i < p.size(); ++i) gp[i] = k * (p[i] - t[i]);
            if (wants(0)) accumulate(n.inputs[0], gp);
            if (wants(1)) {
                for (auto& v : gp.data()) v = -v;
                accumulate(n.inputs[1], gp);
            }
            break;
        }
    }
}

}  // namespace cmtf::tensor
