#include "mt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "mt/errors.hpp"

namespace mt {

namespace {

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<double> value, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

bool any_requires(const std::vector<NodePtr>& parents) {
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

Tensor record(Shape shape, std::vector<double> value,
              std::vector<NodePtr> parents,
              std::function<void(detail::Node&)> backward) {
    auto n = make_node(std::move(shape), std::move(value), any_requires(parents));
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return Tensor(n);
}

void check_matrix(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                             shape_string(t.shape()));
}

}  // namespace

std::string shape_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0),
                            requires_grad));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    auto n = numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, fill),
                            requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != data.size())
        throw DimensionError("Tensor::from: shape " + shape_string(shape) +
                             " does not match data length " +
                             std::to_string(data.size()));
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor(make_node({1}, {v}, requires_grad));
}

std::size_t Tensor::rows() const {
    check_matrix(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    check_matrix(*this, "cols");
    return node_->shape[1];
}

double Tensor::item() const {
    if (node_->value.size() != 1)
        throw UsageError("item() on non-scalar tensor of shape " +
                         shape_string(node_->shape));
    return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    return node_->value[i * node_->shape[1] + j];
}

double& Tensor::at(std::size_t i, std::size_t j) {
    return node_->value[i * node_->shape[1] + j];
}

const std::vector<double>& Tensor::grad() const {
    const_cast<detail::Node*>(node_.get())->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

void Tensor::backward() const {
    if (node_->value.size() != 1)
        throw UsageError("backward() requires a scalar loss, got shape " +
                         shape_string(node_->shape));
    // Iterative postorder topological sort.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    struct Frame {
        detail::Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& f = stack.back();
        if (f.next < f.n->parents.size()) {
            detail::Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && seen.insert(p).second)
                stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (!n->backward) continue;
        for (auto& p : n->parents) p->ensure_grad();
        n->backward(*n);
    }
}

Tensor Tensor::detach() const {
    return Tensor(make_node(node_->shape, node_->value, false));
}

// --- operations ---

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_matrix(a, "matmul");
    check_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner extents disagree, " +
                             shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    std::vector<double> out(m * p, 0.0);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const double aval = av[i * k + l];
            if (aval == 0.0) continue;
            for (std::size_t j = 0; j < p; ++j)
                out[i * p + j] += aval * bv[l * p + j];
        }
    auto an = a.node(), bn = b.node();
    return record({m, p}, std::move(out), {an, bn},
                  [an, bn, m, k, p](detail::Node& self) {
                      const auto& g = self.grad;
                      if (an->requires_grad) {
                          // dA = G B^T
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t l = 0; l < k; ++l) {
                                  double acc = 0.0;
                                  for (std::size_t j = 0; j < p; ++j)
                                      acc += g[i * p + j] * bn->value[l * p + j];
                                  an->grad[i * k + l] += acc;
                              }
                      }
                      if (bn->requires_grad) {
                          // dB = A^T G
                          for (std::size_t l = 0; l < k; ++l)
                              for (std::size_t j = 0; j < p; ++j) {
                                  double acc = 0.0;
                                  for (std::size_t i = 0; i < m; ++i)
                                      acc += an->value[i * k + l] * g[i * p + j];
                                  bn->grad[l * p + j] += acc;
                              }
                      }
                  });
}

Tensor transpose(const Tensor& a) {
    check_matrix(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.at(i, j);
    auto an = a.node();
    return record({n, m}, std::move(out), {an}, [an, m, n](detail::Node& self) {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                an->grad[i * n + j] += self.grad[j * m + i];
    });
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch, " +
                             shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    auto an = a.node(), bn = b.node();
    return record(a.shape(), std::move(out), {an, bn},
                  [an, bn](detail::Node& self) {
                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                          if (an->requires_grad) an->grad[i] += self.grad[i];
                          if (bn->requires_grad) bn->grad[i] += self.grad[i];
                      }
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    auto an = a.node(), bn = b.node();
    return record(a.shape(), std::move(out), {an, bn},
                  [an, bn](detail::Node& self) {
                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                          if (an->requires_grad) an->grad[i] += self.grad[i];
                          if (bn->requires_grad) bn->grad[i] -= self.grad[i];
                      }
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    auto an = a.node(), bn = b.node();
    return record(a.shape(), std::move(out), {an, bn},
                  [an, bn](detail::Node& self) {
                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                          if (an->requires_grad)
                              an->grad[i] += self.grad[i] * bn->value[i];
                          if (bn->requires_grad)
                              bn->grad[i] += self.grad[i] * an->value[i];
                      }
                  });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
    auto an = a.node();
    return record(a.shape(), std::move(out), {an}, [an, c](detail::Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * c;
    });
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
    auto an = a.node();
    return record(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * self.value[i];
    });
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.at(i));
    auto an = a.node();
    return record(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] / an->value[i];
    });
}

Tensor tanh(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
    auto an = a.node();
    return record(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
    auto an = a.node();
    return record(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
    auto an = a.node();
    return record({1}, {acc}, {an}, [an](detail::Node& self) {
        for (std::size_t i = 0; i < an->grad.size(); ++i)
            an->grad[i] += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
    auto an = a.node();
    return record({1}, {acc * inv}, {an}, [an, inv](detail::Node& self) {
        for (std::size_t i = 0; i < an->grad.size(); ++i)
            an->grad[i] += self.grad[0] * inv;
    });
}

Tensor add_row_vector(const Tensor& a, const Tensor& v) {
    check_matrix(a, "add_row_vector");
    const std::size_t m = a.rows(), n = a.cols();
    if (v.size() != n)
        throw DimensionError("add_row_vector: vector length " +
                             std::to_string(v.size()) + " vs matrix " +
                             shape_string(a.shape()));
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) + v.at(j);
    auto an = a.node(), vn = v.node();
    return record({m, n}, std::move(out), {an, vn},
                  [an, vn, m, n](detail::Node& self) {
                      for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j) {
                              const double g = self.grad[i * n + j];
                              if (an->requires_grad) an->grad[i * n + j] += g;
                              if (vn->requires_grad) vn->grad[j] += g;
                          }
                  });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    check_matrix(a, "gather_rows");
    const std::size_t n = a.cols();
    std::vector<double> out(idx.size() * n);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= a.rows())
            throw DataError("gather_rows: index " + std::to_string(idx[r]) +
                            " out of range for " + std::to_string(a.rows()) +
                            " rows");
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = a.at(idx[r], j);
    }
    auto an = a.node();
    return record({idx.size(), n}, std::move(out), {an},
                  [an, idx, n](detail::Node& self) {
                      for (std::size_t r = 0; r < idx.size(); ++r)
                          for (std::size_t j = 0; j < n; ++j)
                              an->grad[idx[r] * n + j] += self.grad[r * n + j];
                  });
}

Tensor mean_rows(const Tensor& a) {
    check_matrix(a, "mean_rows");
    const std::size_t m = a.rows(), n = a.cols();
    const double inv = 1.0 / static_cast<double>(m);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += a.at(i, j) * inv;
    auto an = a.node();
    return record({1, n}, std::move(out), {an},
                  [an, m, n, inv](detail::Node& self) {
                      for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j)
                              an->grad[i * n + j] += self.grad[j] * inv;
                  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("concat_rows: empty part list");
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.cols() != n)
            throw DimensionError("concat_rows: column mismatch, " +
                                 std::to_string(p.cols()) + " vs " +
                                 std::to_string(n));
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        parents.push_back(p.node());
    }
    auto parent_copy = parents;
    return record({m, n}, std::move(out), std::move(parents),
                  [parent_copy](detail::Node& self) {
                      std::size_t off = 0;
                      for (auto& p : parent_copy) {
                          if (p->requires_grad)
                              for (std::size_t i = 0; i < p->value.size(); ++i)
                                  p->grad[i] += self.grad[off + i];
                          off += p->value.size();
                      }
                  });
}

Tensor mul_const(const Tensor& a, const std::vector<double>& mask) {
    if (mask.size() != a.size())
        throw DimensionError("mul_const: mask length " +
                             std::to_string(mask.size()) + " vs tensor size " +
                             std::to_string(a.size()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * mask[i];
    auto an = a.node();
    return record(a.shape(), std::move(out), {an},
                  [an, mask](detail::Node& self) {
                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                          an->grad[i] += self.grad[i] * mask[i];
                  });
}

Tensor weighted_sum(const Tensor& v, const std::vector<double>& w) {
    if (w.size() != v.size())
        throw DimensionError("weighted_sum: weight length " +
                             std::to_string(w.size()) + " vs tensor size " +
                             std::to_string(v.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * v.at(i);
    auto vn = v.node();
    return record({1}, {acc}, {vn}, [vn, w](detail::Node& self) {
        for (std::size_t i = 0; i < w.size(); ++i)
            vn->grad[i] += self.grad[0] * w[i];
    });
}

Tensor row_renormalize(const Tensor& a, double eps) {
    check_matrix(a, "row_renormalize");
    const std::size_t m = a.rows(), n = a.cols();
    if (m != n)
        throw DimensionError("row_renormalize: expected square matrix, got " +
                             shape_string(a.shape()));
    std::vector<double> out(m * n);
    std::vector<double> rowsum(m);
    std::vector<char> fallback(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a.at(i, j);
        rowsum[i] = s;
        if (s < eps) {
            fallback[i] = 1;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (i == j) ? 1.0 : 0.0;
        } else {
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) / s;
        }
    }
    auto an = a.node();
    return record({m, n}, std::move(out), {an},
                  [an, rowsum, fallback, m, n](detail::Node& self) {
                      for (std::size_t i = 0; i < m; ++i) {
                          if (fallback[i]) continue;  // constant one-hot row
                          double dot = 0.0;
                          for (std::size_t j = 0; j < n; ++j)
                              dot += self.grad[i * n + j] * self.value[i * n + j];
                          for (std::size_t j = 0; j < n; ++j)
                              an->grad[i * n + j] +=
                                  (self.grad[i * n + j] - dot) / rowsum[i];
                      }
                  });
}

Tensor row_softmax(const Tensor& a, double temperature) {
    check_matrix(a, "row_softmax");
    if (!(temperature > 0.0))
        throw ParameterError("row_softmax: temperature must be positive, got " +
                             std::to_string(temperature));
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (!std::isfinite(a.at(i, j)))
                throw NumericError("row_softmax: non-finite input at row " +
                                   std::to_string(i));
            mx = std::max(mx, a.at(i, j));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp((a.at(i, j) - mx) / temperature);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    auto an = a.node();
    const double invt = 1.0 / temperature;
    return record({m, n}, std::move(out), {an},
                  [an, m, n, invt](detail::Node& self) {
                      for (std::size_t i = 0; i < m; ++i) {
                          double dot = 0.0;
                          for (std::size_t j = 0; j < n; ++j)
                              dot += self.grad[i * n + j] * self.value[i * n + j];
                          for (std::size_t j = 0; j < n; ++j)
                              an->grad[i * n + j] += invt * self.value[i * n + j] *
                                                     (self.grad[i * n + j] - dot);
                      }
                  });
}

namespace {

// Row-wise log-softmax probabilities with max subtraction, shared by the
// cross-entropy losses.
std::vector<double> softmax_probs(const Tensor& logits) {
    const std::size_t n = logits.rows(), c = logits.cols();
    std::vector<double> p(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            p[i * c + j] = std::exp(logits.at(i, j) - mx);
            z += p[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) p[i * c + j] /= z;
    }
    return p;
}

void check_labels(const std::vector<int>& labels, std::size_t n, std::size_t c) {
    if (labels.size() != n)
        throw DimensionError("cross-entropy: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(n) + " rows");
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw DataError("cross-entropy: label " + std::to_string(labels[i]) +
                            " out of range [0," + std::to_string(c) + ")");
}

}  // namespace

Tensor loss_ce(const Tensor& logits, const std::vector<int>& labels) {
    check_matrix(logits, "loss_ce");
    const std::size_t n = logits.rows(), c = logits.cols();
    check_labels(labels, n, c);
    auto p = softmax_probs(logits);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        loss -= std::log(p[i * c + static_cast<std::size_t>(labels[i])]);
    loss /= static_cast<double>(n);
    auto ln = logits.node();
    return record({1}, {loss}, {ln}, [ln, p, labels, n, c](detail::Node& self) {
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double onehot =
                    (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                ln->grad[i * c + j] += g * (p[i * c + j] - onehot);
            }
    });
}

Tensor loss_ce_vector(const Tensor& logits, const std::vector<int>& labels) {
    check_matrix(logits, "loss_ce_vector");
    const std::size_t n = logits.rows(), c = logits.cols();
    check_labels(labels, n, c);
    auto p = softmax_probs(logits);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = -std::log(p[i * c + static_cast<std::size_t>(labels[i])]);
    auto ln = logits.node();
    return record({n}, std::move(out), {ln},
                  [ln, p, labels, n, c](detail::Node& self) {
                      for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < c; ++j) {
                              const double onehot =
                                  (static_cast<std::size_t>(labels[i]) == j) ? 1.0
                                                                             : 0.0;
                              ln->grad[i * c + j] +=
                                  self.grad[i] * (p[i * c + j] - onehot);
                          }
                  });
}

Tensor loss_mse(const Tensor& pred, const std::vector<double>& target) {
    if (pred.size() != target.size())
        throw DimensionError("loss_mse: " + std::to_string(pred.size()) +
                             " predictions vs " + std::to_string(target.size()) +
                             " targets");
    const std::size_t n = pred.size();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred.at(i) - target[i];
        loss += d * d;
    }
    loss /= static_cast<double>(n);
    auto pn = pred.node();
    return record({1}, {loss}, {pn}, [pn, target, n](detail::Node& self) {
        const double g = 2.0 * self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            pn->grad[i] += g * (pn->value[i] - target[i]);
    });
}

double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double h) {
    if (!(h > 0.0)) throw ParameterError("finite_diff_check: h must be positive");
    Tensor loss = f();
    for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = const_cast<Tensor&>(params[pi]).data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + h;
            const double fp = f().item();
            data[i] = orig - h;
            const double fm = f().item();
            data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][i];
            if (!std::isfinite(numeric) || !std::isfinite(a))
                return std::numeric_limits<double>::infinity();
            const double denom =
                std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace mt
