#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "duet/errors.hpp"
#include "duet/rng.hpp"

namespace duet {

using Scalar = double;
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Vec>;
using ConstVecMap = Eigen::Map<const Vec>;

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

/// One node of the reverse-mode tape. `backward` pulls this node's gradient
/// into its parents; leaves (parameters, constants) have no backward.
struct TensorNode {
    std::vector<int> shape;
    Arr data;
    Arr grad;  // empty until backward touches it
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward;

    Eigen::Index size() const { return data.size(); }
};

/// Dense tensor of 64-bit floats, rank 0 (scalar), 1 (vector) or 2 (matrix),
/// stored flat in row-major order. Copying a Tensor copies the handle, not
/// the buffer; tensors are immutable after construction except for gradient
/// accumulation.
class Tensor {
public:
    Tensor() = default;

    static Tensor scalar(Scalar v, bool requires_grad = false);
    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, Scalar v, bool requires_grad = false);
    static Tensor from_vector(const Vec& v, bool requires_grad = false);
    static Tensor from_matrix(const Mat& m, bool requires_grad = false);
    static Tensor from_flat(std::vector<int> shape, Arr data, bool requires_grad = false);
    /// Truncated-normal(0, std) init, resampling outside 2*std.
    static Tensor randn(std::vector<int> shape, Scalar std, SeededRng& rng, bool requires_grad = true);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    Eigen::Index size() const { return node_->data.size(); }
    int rows() const;
    int cols() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->grad.size() > 0; }

    const Arr& flat() const { return node_->data; }
    Arr& mutable_flat() { return node_->data; }
    const Arr& grad_flat() const;
    ConstMatMap mat() const;     // rank-2 (or rank-1 as 1 x n) view
    ConstVecMap vec() const;     // rank-0/1 view
    ConstMatMap grad_mat() const;
    ConstVecMap grad_vec() const;
    Scalar value() const;        // rank-0 (or single-element) only
    Scalar at(Eigen::Index flat_index) const { return node_->data[flat_index]; }

    void set_requires_grad(bool v) { node_->requires_grad = v; }
    void zero_grad();

    NodePtr node() const { return node_; }
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

private:
    NodePtr node_;
};

/// Thread-local autograd switch; ops record the tape only while enabled.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

// ---- elementwise / arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& b);       // [m,n] + [n] per row
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);              // elementwise
Tensor scale(const Tensor& a, Scalar c);
Tensor add_scalar(const Tensor& a, Scalar c);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor gelu(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);           // [m,k]x[k,n]; rank-1 operands allowed
Tensor matmul_nt(const Tensor& a, const Tensor& b);        // a * b^T, [m,k]x[n,k] -> [m,n]

// ---- structural ----
Tensor rows(const Tensor& a, const std::vector<int>& idx); // gather rows (also embedding lookup)
Tensor row(const Tensor& a, int i);                        // -> rank-1
Tensor cols(const Tensor& a, int start, int n);            // column slice
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_scalars(const std::vector<Tensor>& parts);  // rank-0 list -> rank-1
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor at(const Tensor& a, Eigen::Index flat_index);       // -> scalar

// ---- reductions / normalizations ----
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps = 1e-5);
Tensor mean_pool(const Tensor& a, int axis);               // rank-2 -> rank-1
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor l2_norm(const Tensor& a);
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

/// Embedding lookup: rows of the (tied) embedding table.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

/// Reverse-mode sweep from a scalar root. Gradients of leaf nodes
/// (parameters) accumulate by summation; zero them explicitly per step.
void backward(const Tensor& root);
void zero_grad(std::span<Tensor> params);

// ---- AdamW ----
struct AdamWConfig {
    Scalar lr = 3e-4;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    Scalar eps = 1e-8;
    Scalar weight_decay = 0.0;
};

struct OptimizerState {
    AdamWConfig hp;
    long step = 0;
    std::vector<Arr> m;  // first moments, one per parameter
    std::vector<Arr> v;  // second moments

    static OptimizerState init(std::span<const Tensor> params, AdamWConfig hp);
};

/// One decoupled-weight-decay Adam step over `params` using their accumulated
/// gradients. Non-finite gradients raise PoisonedStepError and leave both
/// parameters and state untouched.
void adamw_step(std::span<Tensor> params, OptimizerState& state);

/// Max over all parameter entries of |autodiff - central difference| /
/// max(1, |central difference|). The function must be a deterministic scalar
/// forward pass over `params`; two disagreeing evaluations raise
/// DeterminismError.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double perturbation = 1e-5);

/// Euclidean norm over all accumulated parameter gradients.
double global_grad_norm(std::span<const Tensor> params);

}  // namespace duet
