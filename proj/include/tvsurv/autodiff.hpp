#pragma once

// Minimal reverse-mode automatic differentiation over dense 2-D real tensors.
//
// A Var is a shared handle to a graph Node. Operations build the graph eagerly;
// backward() walks it in reverse topological order and accumulates gradients
// into every node that requires them. Graphs are per-thread: nothing here is
// shared between model instances.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tvsurv::ad {

/// Dense row-major matrix of doubles. Scalars are 1x1.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor row(std::vector<double> values);
    static Tensor column(std::vector<double> values);
    static Tensor identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }
    std::string shape_str() const;

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double item() const;
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& vec() const { return data_; }

    void fill(double v);
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;
    double max_abs() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads self.grad and accumulates into parents' grads.
    std::function<void(Node& self)> backward_fn;
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }

    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    double item() const { return node_->value.item(); }

    void zero_grad();
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Leaf without gradient.
Var constant(Tensor value);
/// Leaf that accumulates gradient.
Var parameter(Tensor value);

/// While alive, operations on this thread record no backward information.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

// Elementwise binary ops broadcast 2-D operands when a dimension is 1.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);

Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
/// log(max(x, 1e-12)); gradient is zero where the clamp is active.
Var log(const Var& x);
Var square(const Var& x);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var softmax(const Var& x);  // over the last axis

Var concat(std::span<const Var> parts, int axis);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var gather_rows(const Var& x, std::span<const std::size_t> rows);

Var sum(const Var& x);
Var mean(const Var& x);
Var row_sum(const Var& x);  // [R,C] -> [R,1]

/// Gaussian RBF Gram matrix: K(i,j) = exp(-|a_i - b_j|^2 / (2 sigma^2)).
Var rbf_gram(const Var& a, const Var& b, double sigma);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

/// Fills gradients of every node reachable from a scalar root.
void backward(const Var& root);

void zero_grads(std::span<Var> params);

struct GradCheckReport {
    double max_rel_deviation = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_coord = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coords_checked = 0;
    bool passed = false;
};

/// Compares reverse-mode gradients of f against central differences over every
/// coordinate of params. Deviation is |a - n| / max(|a|, |n|, 1e-5).
GradCheckReport grad_check(const std::function<Var()>& f, std::span<Var> params, double step,
                           double tol);

}  // namespace tvsurv::ad
