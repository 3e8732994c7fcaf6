#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "medkg/common.hpp"

namespace medkg::ag {

using Matrix = Eigen::MatrixXd;

// One tape entry: a float64 matrix plus the closure that pushes its
// gradient into its inputs. Graphs are built per forward pass and freed
// when the last Tensor handle drops.
struct Node {
  Matrix value;
  Matrix grad;
  bool has_grad = false;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
};

using NodePtr = std::shared_ptr<Node>;

// Value-semantics handle onto a tape node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor constant(Matrix v);
  static Tensor param(Matrix v);  // leaf that accumulates gradient

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }  // params only; graph must be rebuilt
  const Matrix& grad() const;
  bool has_grad() const { return node_->has_grad; }
  void clear_grad();
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Reverse sweep from a 1x1 loss; gradients accumulate additively, so
// parameters shared across the graph sum contributions.
void backward(const Tensor& loss);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor transpose(const Tensor& a);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor leaky_relu(const Tensor& a, double negative_slope);
Tensor elu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);

// Row-wise softmax over positions where mask != 0; masked positions emit 0.
// Every row needs at least one unmasked entry.
Tensor masked_softmax(const Tensor& a, const Matrix& mask);

// Inverted-dropout with the keep mask drawn from `rng`; rate 0 is a no-op.
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng);

Tensor embedding_gather(const Tensor& table, const std::vector<int>& rows);
Tensor mean_all(const Tensor& a);   // 1x1
Tensor sum_all(const Tensor& a);    // 1x1
Tensor mean_rows(const Tensor& a);  // 1 x cols, column means

// Numerically stable mean binary cross-entropy over all entries of a logit
// matrix against a constant {0,1} target of the same shape.
Tensor bce_with_logits(const Tensor& logits, const Matrix& targets);

// Named parameter registry: creation order is the canonical order used by
// the optimizer and the checkpoint format.
class ParamStore {
 public:
  Tensor create(const std::string& name, Matrix init);
  Tensor at(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  void zero_grad();
  std::size_t size() const { return items_.size(); }

  std::vector<Matrix> snapshot_values() const;
  void restore_values(const std::vector<Matrix>& values);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Glorot-uniform init: entries in [-r, r], r = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

}  // namespace medkg::ag
