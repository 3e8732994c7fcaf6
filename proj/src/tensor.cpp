#include "medkg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace medkg::ag {

void Node::accumulate(const Matrix& g) {
  if (!has_grad) {
    grad = g;
    has_grad = true;
  } else {
    grad += g;
  }
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ConfigError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()) + ")");
}

NodePtr make_node(Matrix value, std::vector<NodePtr> inputs, const char* op) {
  if (!value.allFinite()) throw NumericalError(std::string("non-finite value in op '") + op + "'");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  n->op = op;
  for (const auto& in : n->inputs) {
    if (in->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  return n;
}

}  // namespace

Tensor Tensor::constant(Matrix v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->op = "constant";
  return Tensor(std::move(n));
}

Tensor Tensor::param(Matrix v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  n->op = "param";
  return Tensor(std::move(n));
}

const Matrix& Tensor::grad() const {
  if (!node_->has_grad) throw NumericalError("gradient read before backward");
  return node_->grad;
}

void Tensor::clear_grad() {
  node_->has_grad = false;
  node_->grad.resize(0, 0);
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1)
    throw ConfigError("backward expects a 1x1 loss tensor");
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // iterative post-order over the requires_grad subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* in = node->inputs[next++].get();
      if (in->requires_grad && !seen.count(in)) {
        seen.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward || !node->has_grad) continue;
    if (!node->grad.allFinite())
      throw NumericalError(std::string("non-finite gradient at op '") + node->op + "'");
    node->backward(*node);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  auto n = make_node(a.value() * b.value(), {a.node(), b.node()}, "matmul");
  n->backward = [](Node& self) {
    Node* a = self.inputs[0].get();
    Node* b = self.inputs[1].get();
    if (a->requires_grad) a->accumulate(self.grad * b->value.transpose());
    if (b->requires_grad) b->accumulate(a->value.transpose() * self.grad);
  };
  return Tensor(std::move(n));
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a, b);
  auto n = make_node(a.value() + b.value(), {a.node(), b.node()}, "add");
  n->backward = [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->accumulate(self.grad);
  };
  return Tensor(std::move(n));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a, b);
  auto n = make_node(a.value() - b.value(), {a.node(), b.node()}, "sub");
  n->backward = [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(-self.grad);
  };
  return Tensor(std::move(n));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a, b);
  auto n = make_node(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, "mul");
  n->backward = [](Node& self) {
    Node* a = self.inputs[0].get();
    Node* b = self.inputs[1].get();
    if (a->requires_grad) a->accumulate(self.grad.cwiseProduct(b->value));
    if (b->requires_grad) b->accumulate(self.grad.cwiseProduct(a->value));
  };
  return Tensor(std::move(n));
}

Tensor scale(const Tensor& a, double c) {
  auto n = make_node(a.value() * c, {a.node()}, "scale");
  n->backward = [c](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad * c);
  };
  return Tensor(std::move(n));
}

Tensor transpose(const Tensor& a) {
  auto n = make_node(a.value().transpose(), {a.node()}, "transpose");
  n->backward = [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad.transpose());
  };
  return Tensor(std::move(n));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  Eigen::Index cols = parts[0].cols(), rows = 0;
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts[0], p);
    rows += p.rows();
    inputs.push_back(p.node());
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  auto n = make_node(std::move(v), std::move(inputs), "concat_rows");
  n->backward = [](Node& self) {
    Eigen::Index at = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->accumulate(self.grad.middleRows(at, in->value.rows()));
      at += in->value.rows();
    }
  };
  return Tensor(std::move(n));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts[0], p);
    cols += p.cols();
    inputs.push_back(p.node());
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  auto n = make_node(std::move(v), std::move(inputs), "concat_cols");
  n->backward = [](Node& self) {
    Eigen::Index at = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->accumulate(self.grad.middleCols(at, in->value.cols()));
      at += in->value.cols();
    }
  };
  return Tensor(std::move(n));
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw ConfigError("slice_rows: range out of bounds");
  auto n = make_node(a.value().middleRows(start, count), {a.node()}, "slice_rows");
  n->backward = [start, count](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    Matrix g = Matrix::Zero(in->value.rows(), in->value.cols());
    g.middleRows(start, count) = self.grad;
    in->accumulate(g);
  };
  return Tensor(std::move(n));
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw ConfigError("slice_cols: range out of bounds");
  auto n = make_node(a.value().middleCols(start, count), {a.node()}, "slice_cols");
  n->backward = [start, count](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    Matrix g = Matrix::Zero(in->value.rows(), in->value.cols());
    g.middleCols(start, count) = self.grad;
    in->accumulate(g);
  };
  return Tensor(std::move(n));
}

Tensor leaky_relu(const Tensor& a, double negative_slope) {
  const Matrix& x = a.value();
  Matrix v = x.unaryExpr([negative_slope](double t) { return t > 0.0 ? t : negative_slope * t; });
  auto n = make_node(std::move(v), {a.node()}, "leaky_relu");
  n->backward = [negative_slope](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    Matrix d = in->value.unaryExpr(
        [negative_slope](double t) { return t > 0.0 ? 1.0 : negative_slope; });
    in->accumulate(self.grad.cwiseProduct(d));
  };
  return Tensor(std::move(n));
}

Tensor elu(const Tensor& a) {
  Matrix v = a.value().unaryExpr([](double t) { return t >= 0.0 ? t : std::expm1(t); });
  auto n = make_node(std::move(v), {a.node()}, "elu");
  n->backward = [](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    Matrix d = in->value.unaryExpr([](double t) { return t >= 0.0 ? 1.0 : std::exp(t); });
    in->accumulate(self.grad.cwiseProduct(d));
  };
  return Tensor(std::move(n));
}

Tensor sigmoid(const Tensor& a) {
  Matrix v = a.value().unaryExpr([](double t) {
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
  });
  auto n = make_node(std::move(v), {a.node()}, "sigmoid");
  n->backward = [](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    Matrix d = self.value.cwiseProduct(Matrix::Ones(self.value.rows(), self.value.cols()) - self.value);
    in->accumulate(self.grad.cwiseProduct(d));
  };
  return Tensor(std::move(n));
}

Tensor tanh_op(const Tensor& a) {
  Matrix v = a.value().array().tanh().matrix();
  auto n = make_node(std::move(v), {a.node()}, "tanh");
  n->backward = [](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    Matrix d = (1.0 - self.value.array().square()).matrix();
    in->accumulate(self.grad.cwiseProduct(d));
  };
  return Tensor(std::move(n));
}

Tensor masked_softmax(const Tensor& a, const Matrix& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols())
    throw ConfigError("masked_softmax: mask shape mismatch");
  const Matrix& x = a.value();
  Matrix v = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (mask(r, c) != 0.0) mx = std::max(mx, x(r, c));
    if (!std::isfinite(mx))
      throw ConfigError("masked_softmax: fully masked row " + std::to_string(r));
    double denom = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) != 0.0) {
        v(r, c) = std::exp(x(r, c) - mx);
        denom += v(r, c);
      }
    }
    v.row(r) /= denom;
  }
  auto n = make_node(std::move(v), {a.node()}, "masked_softmax");
  n->backward = [](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    const Matrix& y = self.value;
    Matrix gy = self.grad.cwiseProduct(y);
    Eigen::VectorXd rowsum = gy.rowwise().sum();
    Matrix g = gy - (y.array().colwise() * rowsum.array()).matrix();
    in->accumulate(g);
  };
  return Tensor(std::move(n));
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (rate == 0.0) return a;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double keep = 1.0 - rate;
  Matrix m(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = unit(rng) < keep ? 1.0 / keep : 0.0;
  auto n = make_node(a.value().cwiseProduct(m), {a.node()}, "dropout");
  n->backward = [m](Node& self) {
    Node* in = self.inputs[0].get();
    if (in->requires_grad) in->accumulate(self.grad.cwiseProduct(m));
  };
  return Tensor(std::move(n));
}

Tensor embedding_gather(const Tensor& table, const std::vector<int>& rows) {
  Matrix v(static_cast<Eigen::Index>(rows.size()), table.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= table.rows())
      throw ConfigError("embedding_gather: row index out of range");
    v.row(static_cast<Eigen::Index>(i)) = table.value().row(rows[i]);
  }
  auto n = make_node(std::move(v), {table.node()}, "embedding_gather");
  n->backward = [rows](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    Matrix g = Matrix::Zero(in->value.rows(), in->value.cols());
    for (size_t i = 0; i < rows.size(); ++i)
      g.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    in->accumulate(g);
  };
  return Tensor(std::move(n));
}

Tensor mean_all(const Tensor& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().mean();
  auto n = make_node(std::move(v), {a.node()}, "mean_all");
  n->backward = [](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    double g = self.grad(0, 0) / static_cast<double>(in->value.size());
    in->accumulate(Matrix::Constant(in->value.rows(), in->value.cols(), g));
  };
  return Tensor(std::move(n));
}

Tensor sum_all(const Tensor& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  auto n = make_node(std::move(v), {a.node()}, "sum_all");
  n->backward = [](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    in->accumulate(Matrix::Constant(in->value.rows(), in->value.cols(), self.grad(0, 0)));
  };
  return Tensor(std::move(n));
}

Tensor mean_rows(const Tensor& a) {
  Matrix v = a.value().colwise().mean();
  auto n = make_node(std::move(v), {a.node()}, "mean_rows");
  n->backward = [](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    double r = static_cast<double>(in->value.rows());
    Matrix g = (Matrix::Ones(in->value.rows(), 1) * self.grad) / r;
    in->accumulate(g);
  };
  return Tensor(std::move(n));
}

Tensor bce_with_logits(const Tensor& logits, const Matrix& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw ConfigError("bce_with_logits: target shape mismatch");
  for (Eigen::Index r = 0; r < targets.rows(); ++r)
    for (Eigen::Index c = 0; c < targets.cols(); ++c)
      if (targets(r, c) != 0.0 && targets(r, c) != 1.0)
        throw DataError("bce_with_logits: non-binary target");
  const Matrix& x = logits.value();
  double total = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double v = x(r, c);
      total += std::max(v, 0.0) - v * targets(r, c) + std::log1p(std::exp(-std::abs(v)));
    }
  }
  Matrix v(1, 1);
  v(0, 0) = total / static_cast<double>(x.size());
  auto n = make_node(std::move(v), {logits.node()}, "bce_with_logits");
  n->backward = [targets](Node& self) {
    Node* in = self.inputs[0].get();
    if (!in->requires_grad) return;
    const Matrix& x = in->value;
    Matrix s = x.unaryExpr([](double t) {
      return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
    });
    double scale = self.grad(0, 0) / static_cast<double>(x.size());
    in->accumulate((s - targets) * scale);
  };
  return Tensor(std::move(n));
}

Tensor ParamStore::create(const std::string& name, Matrix init) {
  for (const auto& [n, t] : items_) {
    if (n == name) throw ConfigError("duplicate parameter name: " + name);
  }
  Tensor t = Tensor::param(std::move(init));
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::at(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw ConfigError("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [n, t] : items_) out.push_back(t);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [n, t] : items_) t.clear_grad();
}

std::vector<Matrix> ParamStore::snapshot_values() const {
  std::vector<Matrix> out;
  out.reserve(items_.size());
  for (const auto& [n, t] : items_) out.push_back(t.value());
  return out;
}

void ParamStore::restore_values(const std::vector<Matrix>& values) {
  if (values.size() != items_.size()) throw ConfigError("restore_values: size mismatch");
  for (size_t i = 0; i < values.size(); ++i) items_[i].second.mutable_value() = values[i];
}

Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  double r = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-r, r);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace medkg::ag
