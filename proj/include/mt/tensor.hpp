#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mt {

using Shape = std::vector<std::size_t>;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Pulls this node's grad into its parents' grads. Must accumulate (+=).
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense 64-bit float tensor participating in a reverse-mode tape. Value
// semantics on the handle; the underlying node is shared. A fresh graph is
// built on every forward pass; only leaf parameters persist across steps.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& data() { return node_->value; }
    double item() const;  // scalar tensors only
    double at(std::size_t i) const { return node_->value[i]; }
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t i, std::size_t j);

    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<double>& grad() const;
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad();

    // Reverse sweep from a scalar. Visits each reachable node once in
    // reverse topological order and accumulates into parent grads.
    void backward() const;

    // Constant copy of the values, cut off from the tape.
    Tensor detach() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

std::string shape_string(const Shape& s);

// --- recorded operations (each with a backward rule) ---

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// a[m×n] + v (length n), broadcast over rows.
Tensor add_row_vector(const Tensor& a, const Tensor& v);
// Row selection with repeats allowed; backward scatter-adds.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
// Column-wise mean of an m×n matrix, result 1×n.
Tensor mean_rows(const Tensor& a);
// Vertical concatenation of matrices with equal column counts.
Tensor concat_rows(const std::vector<Tensor>& parts);
// Elementwise product with a constant mask of the same size.
Tensor mul_const(const Tensor& a, const std::vector<double>& mask);
// Sum of w[i]*v[i] over a flat tensor; w is constant.
Tensor weighted_sum(const Tensor& v, const std::vector<double>& w);

// Rescales each row of a square matrix to sum 1. A row whose surviving mass
// is below `eps` falls back to the one-hot self row (constant, no grad).
Tensor row_renormalize(const Tensor& a, double eps = 1e-12);

// Row-wise softmax of a/temperature with mandatory row-max subtraction.
Tensor row_softmax(const Tensor& a, double temperature);

// Mean negative log-softmax of the true class.
Tensor loss_ce(const Tensor& logits, const std::vector<int>& labels);
// Per-instance negative log-softmax, result length n.
Tensor loss_ce_vector(const Tensor& logits, const std::vector<int>& labels);
// Mean squared error against a constant target.
Tensor loss_mse(const Tensor& pred, const std::vector<double>& target);

// Central-difference gradient check. `f` rebuilds the forward pass from the
// current parameter values; returns the worst relative error over all
// parameter elements with denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h = 1e-5);

}  // namespace mt
