#include "duet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace duet {

namespace {

thread_local bool g_grad_enabled = true;

Eigen::Index shape_product(const std::vector<int>& shape) {
    Eigen::Index n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

std::pair<int, int> as_2d(const std::vector<int>& shape) {
    switch (shape.size()) {
        case 0: return {1, 1};
        case 1: return {1, shape[0]};
        case 2: return {shape[0], shape[1]};
        default: throw ShapeError("rank > 2 is not supported");
    }
}

Arr& grad_buf(TensorNode& n) {
    if (n.grad.size() == 0) n.grad = Arr::Zero(n.data.size());
    return n.grad;
}

MatMap grad_as(TensorNode& n, int r, int c) { return MatMap(grad_buf(n).data(), r, c); }

ConstMatMap data_as(const TensorNode& n, int r, int c) {
    return ConstMatMap(n.data.data(), r, c);
}

Tensor make_op(std::vector<int> shape, Arr data, std::vector<NodePtr> parents,
               std::function<void(TensorNode&)> bw) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) any = any || p->requires_grad;
        if (any) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward = std::move(bw);
        }
    }
    return Tensor(node);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

// ---- Tensor basics ----

Tensor Tensor::scalar(Scalar v, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = {};
    n->data = Arr::Constant(1, v);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, Scalar v, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    Eigen::Index count = shape_product(shape);
    n->shape = std::move(shape);
    n->data = Arr::Constant(count, v);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_vector(const Vec& v, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = {static_cast<int>(v.size())};
    n->data = v.array();
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_matrix(const Mat& m, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
    n->data = Arr(Eigen::Map<const Arr>(m.data(), m.size()));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_flat(std::vector<int> shape, Arr data, bool requires_grad) {
    if (shape_product(shape) != data.size()) throw ShapeError("from_flat: size mismatch");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::randn(std::vector<int> shape, Scalar std, SeededRng& rng, bool requires_grad) {
    Eigen::Index count = shape_product(shape);
    Arr data(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        double z = rng.normal();
        while (std::abs(z) > 2.0) z = rng.normal();  // truncated at 2 sigma
        data[i] = z * std;
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

int Tensor::rows() const { return as_2d(node_->shape).first; }
int Tensor::cols() const { return as_2d(node_->shape).second; }

const Arr& Tensor::grad_flat() const {
    if (node_->grad.size() == 0) throw Error("tensor has no gradient");
    return node_->grad;
}

ConstMatMap Tensor::mat() const {
    auto [r, c] = as_2d(node_->shape);
    return ConstMatMap(node_->data.data(), r, c);
}

ConstVecMap Tensor::vec() const {
    if (rank() > 1) throw ShapeError("vec(): rank-0/1 tensors only");
    return ConstVecMap(node_->data.data(), node_->data.size());
}

ConstMatMap Tensor::grad_mat() const {
    auto [r, c] = as_2d(node_->shape);
    return ConstMatMap(grad_flat().data(), r, c);
}

ConstVecMap Tensor::grad_vec() const {
    return ConstVecMap(grad_flat().data(), grad_flat().size());
}

Scalar Tensor::value() const {
    if (node_->data.size() != 1) throw ShapeError("value(): scalar tensors only");
    return node_->data[0];
}

void Tensor::zero_grad() { node_->grad = Arr::Zero(node_->data.size()); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), pa->data + pb->data, {pa, pb}, [pa, pb](TensorNode& out) {
        if (pa->requires_grad) grad_buf(*pa) += out.grad;
        if (pb->requires_grad) grad_buf(*pb) += out.grad;
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 1 || a.cols() != static_cast<int>(b.size()))
        throw ShapeError("add_rowvec: want [m,n] + [n]");
    auto pa = a.node(), pb = b.node();
    const int m = a.rows(), n = a.cols();
    Arr data = pa->data;
    MatMap(data.data(), m, n).rowwise() += ConstVecMap(pb->data.data(), n).transpose();
    return make_op(a.shape(), std::move(data), {pa, pb}, [pa, pb, m, n](TensorNode& out) {
        ConstMatMap g(out.grad.data(), m, n);
        if (pa->requires_grad) grad_as(*pa, m, n) += g;
        if (pb->requires_grad)
            VecMap(grad_buf(*pb).data(), n) += g.colwise().sum().transpose();
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), pa->data - pb->data, {pa, pb}, [pa, pb](TensorNode& out) {
        if (pa->requires_grad) grad_buf(*pa) += out.grad;
        if (pb->requires_grad) grad_buf(*pb) -= out.grad;
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), pa->data * pb->data, {pa, pb}, [pa, pb](TensorNode& out) {
        if (pa->requires_grad) grad_buf(*pa) += out.grad * pb->data;
        if (pb->requires_grad) grad_buf(*pb) += out.grad * pa->data;
    });
}

Tensor scale(const Tensor& a, Scalar c) {
    auto pa = a.node();
    return make_op(a.shape(), pa->data * c, {pa}, [pa, c](TensorNode& out) {
        if (pa->requires_grad) grad_buf(*pa) += out.grad * c;
    });
}

Tensor add_scalar(const Tensor& a, Scalar c) {
    auto pa = a.node();
    return make_op(a.shape(), pa->data + c, {pa}, [pa](TensorNode& out) {
        if (pa->requires_grad) grad_buf(*pa) += out.grad;
    });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
    auto pa = a.node();
    return make_op(a.shape(), pa->data.square(), {pa}, [pa](TensorNode& out) {
        if (pa->requires_grad) grad_buf(*pa) += out.grad * 2.0 * pa->data;
    });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& a) {
    auto pa = a.node();
    Arr cdf = pa->data.unaryExpr([](double v) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)); });
    Arr data = pa->data * cdf;
    return make_op(a.shape(), std::move(data), {pa}, [pa, cdf](TensorNode& out) {
        if (!pa->requires_grad) return;
        Arr pdf = (-0.5 * pa->data.square()).exp() * kInvSqrt2Pi;
        grad_buf(*pa) += out.grad * (cdf + pa->data * pdf);
    });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() == 0 || b.rank() == 0) throw ShapeError("matmul: rank-0 operand");
    const int ar = (a.rank() == 1) ? 1 : a.shape()[0];
    const int ac = (a.rank() == 1) ? a.shape()[0] : a.shape()[1];
    const int br = b.shape()[0];
    const int bc = (b.rank() == 1) ? 1 : b.shape()[1];
    if (ac != br) throw ShapeError("matmul: inner dimensions differ");

    std::vector<int> out_shape;
    if (a.rank() == 2 && b.rank() == 2) out_shape = {ar, bc};
    else if (a.rank() == 2 && b.rank() == 1) out_shape = {ar};
    else if (a.rank() == 1 && b.rank() == 2) out_shape = {bc};
    // both rank-1: dot product, scalar

    auto pa = a.node(), pb = b.node();
    Arr data(static_cast<Eigen::Index>(ar) * bc);
    MatMap(data.data(), ar, bc).noalias() = data_as(*pa, ar, ac) * data_as(*pb, br, bc);
    return make_op(std::move(out_shape), std::move(data), {pa, pb},
                   [pa, pb, ar, ac, br, bc](TensorNode& out) {
                       ConstMatMap g(out.grad.data(), ar, bc);
                       if (pa->requires_grad)
                           grad_as(*pa, ar, ac).noalias() += g * data_as(*pb, br, bc).transpose();
                       if (pb->requires_grad)
                           grad_as(*pb, br, bc).noalias() += data_as(*pa, ar, ac).transpose() * g;
                   });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul_nt: rank-2 operands required");
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    auto pa = a.node(), pb = b.node();
    Arr data(static_cast<Eigen::Index>(m) * n);
    MatMap(data.data(), m, n).noalias() = data_as(*pa, m, k) * data_as(*pb, n, k).transpose();
    return make_op({m, n}, std::move(data), {pa, pb}, [pa, pb, m, k, n](TensorNode& out) {
        ConstMatMap g(out.grad.data(), m, n);
        if (pa->requires_grad) grad_as(*pa, m, k).noalias() += g * data_as(*pb, n, k);
        if (pb->requires_grad) grad_as(*pb, n, k).noalias() += g.transpose() * data_as(*pa, m, k);
    });
}

// ---- structural ----

Tensor rows(const Tensor& a, const std::vector<int>& idx) {
    if (a.rank() != 2) throw ShapeError("rows: rank-2 input required");
    const int m = a.rows(), n = a.cols();
    for (int i : idx)
        if (i < 0 || i >= m) throw ShapeError("rows: index out of range");
    auto pa = a.node();
    const int k = static_cast<int>(idx.size());
    Arr data(static_cast<Eigen::Index>(k) * n);
    MatMap out(data.data(), k, n);
    ConstMatMap src = data_as(*pa, m, n);
    for (int j = 0; j < k; ++j) out.row(j) = src.row(idx[j]);
    return make_op({k, n}, std::move(data), {pa}, [pa, idx, m, n, k](TensorNode& o) {
        if (!pa->requires_grad) return;
        MatMap g = grad_as(*pa, m, n);
        ConstMatMap go(o.grad.data(), k, n);
        for (int j = 0; j < k; ++j) g.row(idx[j]) += go.row(j);
    });
}

Tensor row(const Tensor& a, int i) {
    Tensor r = rows(a, {i});
    return reshape(r, {a.cols()});
}

Tensor cols(const Tensor& a, int start, int n) {
    if (a.rank() != 2) throw ShapeError("cols: rank-2 input required");
    const int m = a.rows(), c = a.cols();
    if (start < 0 || n <= 0 || start + n > c) throw ShapeError("cols: slice out of range");
    auto pa = a.node();
    Arr data(static_cast<Eigen::Index>(m) * n);
    MatMap(data.data(), m, n) = data_as(*pa, m, c).middleCols(start, n);
    return make_op({m, n}, std::move(data), {pa}, [pa, m, c, start, n](TensorNode& o) {
        if (!pa->requires_grad) return;
        grad_as(*pa, m, c).middleCols(start, n) += ConstMatMap(o.grad.data(), m, n);
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input");
    const int n = parts[0].cols();
    int m = 0;
    std::vector<NodePtr> ps;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.cols() != n) throw ShapeError("concat_rows: column mismatch");
        m += p.rows();
        ps.push_back(p.node());
    }
    Arr data(static_cast<Eigen::Index>(m) * n);
    MatMap out(data.data(), m, n);
    int r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p.mat();
        r += p.rows();
    }
    return make_op({m, n}, std::move(data), ps, [ps, m, n](TensorNode& o) {
        ConstMatMap go(o.grad.data(), m, n);
        int r = 0;
        for (const auto& p : ps) {
            const int pr = static_cast<int>(p->data.size()) / n;
            if (p->requires_grad) grad_as(*p, pr, n) += go.middleRows(r, pr);
            r += pr;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    const int m = parts[0].rows();
    int n = 0;
    std::vector<NodePtr> ps;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.rows() != m) throw ShapeError("concat_cols: row mismatch");
        n += p.cols();
        ps.push_back(p.node());
    }
    Arr data(static_cast<Eigen::Index>(m) * n);
    MatMap out(data.data(), m, n);
    int c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p.cols()) = p.mat();
        c += p.cols();
    }
    return make_op({m, n}, std::move(data), ps, [ps, m, n](TensorNode& o) {
        ConstMatMap go(o.grad.data(), m, n);
        int c = 0;
        for (const auto& p : ps) {
            const int pc = static_cast<int>(p->data.size()) / m;
            if (p->requires_grad) grad_as(*p, m, pc) += go.middleCols(c, pc);
            c += pc;
        }
    });
}

Tensor concat_scalars(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_scalars: empty input");
    std::vector<NodePtr> ps;
    Arr data(static_cast<Eigen::Index>(parts.size()));
    for (size_t i = 0; i < parts.size(); ++i) {
        if (parts[i].size() != 1) throw ShapeError("concat_scalars: scalar inputs required");
        data[static_cast<Eigen::Index>(i)] = parts[i].flat()[0];
        ps.push_back(parts[i].node());
    }
    return make_op({static_cast<int>(parts.size())}, std::move(data), ps, [ps](TensorNode& o) {
        for (size_t i = 0; i < ps.size(); ++i)
            if (ps[i]->requires_grad)
                grad_buf(*ps[i])[0] += o.grad[static_cast<Eigen::Index>(i)];
    });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_product(shape) != a.size()) throw ShapeError("reshape: size mismatch");
    auto pa = a.node();
    return make_op(std::move(shape), pa->data, {pa}, [pa](TensorNode& out) {
        if (pa->requires_grad) grad_buf(*pa) += out.grad;
    });
}

Tensor at(const Tensor& a, Eigen::Index flat_index) {
    if (flat_index < 0 || flat_index >= a.size()) throw ShapeError("at: index out of range");
    auto pa = a.node();
    return make_op({}, Arr::Constant(1, pa->data[flat_index]), {pa},
                   [pa, flat_index](TensorNode& out) {
                       if (pa->requires_grad) grad_buf(*pa)[flat_index] += out.grad[0];
                   });
}

// ---- reductions / normalizations ----

namespace {

void check_axis(const Tensor& a, int axis, const char* op) {
    if (a.rank() == 0) throw ShapeError(std::string(op) + ": rank-0 input");
    if (a.rank() == 1 && axis != 0) throw ShapeError(std::string(op) + ": axis out of range");
    if (a.rank() == 2 && (axis < 0 || axis > 1))
        throw ShapeError(std::string(op) + ": axis out of range");
}

// Rowwise stable softmax on a 2-D view; axis-0 callers pass a transposed copy.
Mat rowwise_softmax(ConstMatMap x) {
    Mat e = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
    Vec s = e.rowwise().sum();
    return e.array().colwise() / s.array();
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    check_axis(a, axis, "softmax");
    if (!a.flat().allFinite()) throw NumericError("softmax: non-finite input");
    auto pa = a.node();
    const bool along_cols = (a.rank() == 2 && axis == 0);
    const int m = a.rows(), n = a.cols();

    Mat sm;
    if (along_cols) {
        Mat xt = data_as(*pa, m, n).transpose();
        sm = rowwise_softmax(ConstMatMap(xt.data(), n, m)).transpose();
    } else {
        sm = rowwise_softmax(data_as(*pa, m, n));
    }
    Arr data = Eigen::Map<const Arr>(sm.data(), sm.size());
    return make_op(a.shape(), std::move(data), {pa}, [pa, m, n, along_cols](TensorNode& out) {
        if (!pa->requires_grad) return;
        ConstMatMap g(out.grad.data(), m, n);
        ConstMatMap s(out.data.data(), m, n);
        MatMap gi = grad_as(*pa, m, n);
        if (along_cols) {
            for (int j = 0; j < n; ++j) {
                const double dot = g.col(j).dot(s.col(j));
                gi.col(j) += (s.col(j).array() * (g.col(j).array() - dot)).matrix();
            }
        } else {
            for (int i = 0; i < m; ++i) {
                const double dot = g.row(i).dot(s.row(i));
                gi.row(i) += (s.row(i).array() * (g.row(i).array() - dot)).matrix();
            }
        }
    });
}

Tensor log_softmax(const Tensor& a, int axis) {
    check_axis(a, axis, "log_softmax");
    if (!a.flat().allFinite()) throw NumericError("log_softmax: non-finite input");
    auto pa = a.node();
    const bool along_cols = (a.rank() == 2 && axis == 0);
    const int m = a.rows(), n = a.cols();

    Mat x = data_as(*pa, m, n);
    if (along_cols) x.transposeInPlace();
    Vec mx = x.rowwise().maxCoeff();
    Mat sh = x.colwise() - mx;
    Vec lse = sh.array().exp().rowwise().sum().log().matrix();
    Mat ls = sh.colwise() - lse;
    if (along_cols) ls.transposeInPlace();

    Arr data = Eigen::Map<const Arr>(ls.data(), ls.size());
    return make_op(a.shape(), std::move(data), {pa}, [pa, m, n, along_cols](TensorNode& out) {
        if (!pa->requires_grad) return;
        ConstMatMap g(out.grad.data(), m, n);
        ConstMatMap l(out.data.data(), m, n);
        MatMap gi = grad_as(*pa, m, n);
        if (along_cols) {
            for (int j = 0; j < n; ++j)
                gi.col(j) += g.col(j) - l.col(j).array().exp().matrix() * g.col(j).sum();
        } else {
            for (int i = 0; i < m; ++i)
                gi.row(i) += g.row(i) - l.row(i).array().exp().matrix() * g.row(i).sum();
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
    if (x.rank() != 2) throw ShapeError("layer_norm: rank-2 input required");
    const int m = x.rows(), n = x.cols();
    if (gain.rank() != 1 || bias.rank() != 1 || static_cast<int>(gain.size()) != n ||
        static_cast<int>(bias.size()) != n)
        throw ShapeError("layer_norm: gain/bias must be [n]");
    auto px = x.node(), pg = gain.node(), pb = bias.node();

    ConstMatMap xm = data_as(*px, m, n);
    Vec mu = xm.rowwise().mean();
    Mat centered = xm.colwise() - mu;
    Vec inv_std = (centered.array().square().rowwise().mean() + eps).rsqrt().matrix();
    Mat xhat = (centered.array().colwise() * inv_std.array()).matrix();
    Mat y = xhat * ConstVecMap(pg->data.data(), n).asDiagonal();
    y.rowwise() += ConstVecMap(pb->data.data(), n).transpose();

    Arr data = Eigen::Map<const Arr>(y.data(), y.size());
    return make_op(x.shape(), std::move(data), {px, pg, pb},
                   [px, pg, pb, m, n, xhat, inv_std](TensorNode& out) {
                       ConstMatMap g(out.grad.data(), m, n);
                       if (pg->requires_grad)
                           VecMap(grad_buf(*pg).data(), n) +=
                               (g.array() * xhat.array()).colwise().sum().matrix().transpose();
                       if (pb->requires_grad)
                           VecMap(grad_buf(*pb).data(), n) += g.colwise().sum().transpose();
                       if (px->requires_grad) {
                           MatMap gx = grad_as(*px, m, n);
                           ConstVecMap gv(pg->data.data(), n);
                           for (int i = 0; i < m; ++i) {
                               Vec gg = (g.row(i).transpose().array() * gv.array()).matrix();
                               const double s1 = gg.sum() / n;
                               const double s2 = gg.dot(xhat.row(i).transpose()) / n;
                               gx.row(i) += (inv_std[i] *
                                             (gg.array() - s1 - xhat.row(i).transpose().array() * s2))
                                                .matrix()
                                                .transpose();
                           }
                       }
                   });
}

Tensor mean_pool(const Tensor& a, int axis) {
    if (a.rank() != 2) throw ShapeError("mean_pool: rank-2 input required");
    check_axis(a, axis, "mean_pool");
    const int m = a.rows(), n = a.cols();
    auto pa = a.node();
    ConstMatMap x = data_as(*pa, m, n);
    Vec v = (axis == 0) ? Vec(x.colwise().mean().transpose()) : Vec(x.rowwise().mean());
    const int out_len = (axis == 0) ? n : m;
    Arr data = Eigen::Map<const Arr>(v.data(), v.size());
    return make_op({out_len}, std::move(data), {pa}, [pa, m, n, axis](TensorNode& out) {
        if (!pa->requires_grad) return;
        MatMap gx = grad_as(*pa, m, n);
        if (axis == 0) {
            gx.rowwise() += (ConstVecMap(out.grad.data(), n) / m).transpose();
        } else {
            gx.colwise() += (ConstVecMap(out.grad.data(), m) / n);
        }
    });
}

Tensor sum_all(const Tensor& a) {
    auto pa = a.node();
    return make_op({}, Arr::Constant(1, pa->data.sum()), {pa}, [pa](TensorNode& out) {
        if (pa->requires_grad) grad_buf(*pa) += out.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    auto pa = a.node();
    const double inv = 1.0 / static_cast<double>(pa->data.size());
    return make_op({}, Arr::Constant(1, pa->data.mean()), {pa}, [pa, inv](TensorNode& out) {
        if (pa->requires_grad) grad_buf(*pa) += out.grad[0] * inv;
    });
}

Tensor l2_norm(const Tensor& a) {
    auto pa = a.node();
    const double nrm = std::sqrt(pa->data.square().sum());
    return make_op({}, Arr::Constant(1, nrm), {pa}, [pa, nrm](TensorNode& out) {
        if (!pa->requires_grad || nrm == 0.0) return;  // zero subgradient at the origin
        grad_buf(*pa) += out.grad[0] * pa->data / nrm;
    });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size())
        throw ShapeError("cosine_similarity: two equal-length vectors required");
    auto pa = a.node(), pb = b.node();
    const double na = std::sqrt(pa->data.square().sum());
    const double nb = std::sqrt(pb->data.square().sum());
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm input");
    const double dot = (pa->data * pb->data).sum();
    const double c = dot / (na * nb);
    return make_op({}, Arr::Constant(1, c), {pa, pb}, [pa, pb, na, nb, c](TensorNode& out) {
        const double g = out.grad[0];
        if (pa->requires_grad)
            grad_buf(*pa) += g * (pb->data / (na * nb) - pa->data * (c / (na * na)));
        if (pb->requires_grad)
            grad_buf(*pb) += g * (pa->data / (na * nb) - pb->data * (c / (nb * nb)));
    });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) { return rows(table, ids); }

// ---- backward ----

void backward(const Tensor& root) {
    if (root.size() != 1) throw ShapeError("backward: scalar root required");
    if (!root.node()->requires_grad) return;

    // Iterative post-order DFS over grad-requiring nodes.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior nodes get fresh gradients each sweep; leaves accumulate.
    for (TensorNode* n : order) {
        if (n->backward) n->grad = Arr::Zero(n->data.size());
        else grad_buf(*n);
    }
    grad_buf(*root.node())[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

void zero_grad(std::span<Tensor> params) {
    for (auto& p : params) p.zero_grad();
}

// ---- AdamW ----

OptimizerState OptimizerState::init(std::span<const Tensor> params, AdamWConfig hp) {
    OptimizerState st;
    st.hp = hp;
    for (const auto& p : params) {
        st.m.emplace_back(Arr::Zero(p.size()));
        st.v.emplace_back(Arr::Zero(p.size()));
    }
    return st;
}

void adamw_step(std::span<Tensor> params, OptimizerState& state) {
    if (params.size() != state.m.size())
        throw ShapeError("adamw_step: state/parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) throw Error("adamw_step: missing gradient");
        if (params[i].grad_flat().size() != params[i].size())
            throw ShapeError("adamw_step: gradient shape mismatch");
        if (!params[i].grad_flat().allFinite())
            throw PoisonedStepError("adamw_step: non-finite gradient");
    }

    const auto& hp = state.hp;
    const long t = state.step + 1;
    const double bc1 = 1.0 - std::pow(hp.beta1, t);
    const double bc2 = 1.0 - std::pow(hp.beta2, t);

    std::vector<Arr> new_m(params.size()), new_v(params.size()), new_p(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        const Arr& g = params[i].grad_flat();
        const Arr& x = params[i].flat();
        new_m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        new_v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g.square();
        Arr m_hat = new_m[i] / bc1;
        Arr v_hat = new_v[i] / bc2;
        new_p[i] = x - hp.lr * (m_hat / (v_hat.sqrt() + hp.eps)) - hp.lr * hp.weight_decay * x;
        if (!new_p[i].allFinite())
            throw PoisonedStepError("adamw_step: update produced non-finite parameters");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        params[i].mutable_flat() = std::move(new_p[i]);
        state.m[i] = std::move(new_m[i]);
        state.v[i] = std::move(new_v[i]);
    }
    state.step = t;
}

// ---- gradient checking ----

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double perturbation) {
    if (!(perturbation >= 1e-7 && perturbation <= 1e-3))
        throw ConfigError("grad_check: perturbation outside [1e-7, 1e-3]");

    const double f1 = f().value();
    const double f2 = f().value();
    if (!std::isfinite(f1)) throw NumericError("grad_check: non-finite function value");
    if (f1 != f2) throw DeterminismError("grad_check: non-deterministic function");

    zero_grad(params);
    Tensor out = f();
    backward(out);
    std::vector<Arr> autodiff;
    autodiff.reserve(params.size());
    for (auto& p : params)
        autodiff.push_back(p.has_grad() ? p.grad_flat() : Arr(Arr::Zero(p.size())));

    double max_err = 0.0;
    NoGradGuard ng;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Arr& x = params[pi].mutable_flat();
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double x0 = x[i];
            x[i] = x0 + perturbation;
            const double fp = f().value();
            x[i] = x0 - perturbation;
            const double fm = f().value();
            x[i] = x0;
            const double cd = (fp - fm) / (2.0 * perturbation);
            const double err = std::abs(autodiff[pi][i] - cd) / std::max(1.0, std::abs(cd));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

double global_grad_norm(std::span<const Tensor> params) {
    double acc = 0.0;
    for (const auto& p : params)
        if (p.has_grad()) acc += p.grad_flat().square().sum();
    return std::sqrt(acc);
}

}  // namespace duet
