#include "medkg/attention.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "medkg/common.hpp"
#include "medkg/tensor.hpp"

using namespace medkg;
using ag::backward;
using ag::mean_all;
using ag::ParamStore;
using ag::Tensor;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = gauss(rng);
  return m;
}

double elu_scalar(double x) { return x >= 0.0 ? x : std::expm1(x); }

}  // namespace

TEST_CASE("self-loop-only adjacency reduces graph attention to a projected elu") {
  std::mt19937_64 rng(7);
  ParamStore params;
  auto gat = make_graph_attention(params, "g", 3, 2, 1, rng);
  Matrix hv = random_matrix(4, 3, rng);
  Matrix adj = Matrix::Identity(4, 4);
  Tensor out = graph_attention_forward(gat, Tensor::constant(hv), adj, 0.0, rng);
  Matrix th = hv * gat.heads[0].W.value();
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index c = 0; c < 2; ++c)
      CHECK(out.value()(r, c) == doctest::Approx(elu_scalar(th(r, c))).epsilon(1e-12));
}

TEST_CASE("equal scores split attention evenly between two peers") {
  std::mt19937_64 rng(11);
  ParamStore params;
  auto gat = make_graph_attention(params, "g", 3, 2, 1, rng);
  // zero score vectors make every allowed peer equally attractive
  gat.heads[0].a_self.mutable_value().setZero();
  gat.heads[0].a_peer.mutable_value().setZero();
  Matrix hv = random_matrix(3, 3, rng);
  Matrix adj = Matrix::Identity(3, 3);
  adj(0, 0) = 0.0;
  adj(0, 1) = 1.0;
  adj(0, 2) = 1.0;  // node 0 attends exactly {1, 2}
  std::vector<Matrix> probe;
  Tensor out = graph_attention_forward(gat, Tensor::constant(hv), adj, 0.0, rng, &probe);
  REQUIRE(probe.size() == 1);
  CHECK(probe[0](0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(probe[0](0, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(probe[0](0, 0) == 0.0);
  Matrix th = hv * gat.heads[0].W.value();
  Matrix mixed = 0.5 * (th.row(1) + th.row(2));
  for (Eigen::Index c = 0; c < 2; ++c)
    CHECK(out.value()(0, c) == doctest::Approx(elu_scalar(mixed(0, c))).epsilon(1e-12));
}

TEST_CASE("attention rows are probability vectors over allowed peers") {
  std::mt19937_64 rng(13);
  ParamStore params;
  auto gat = make_graph_attention(params, "g", 4, 6, 2, rng);
  Matrix hv = random_matrix(6, 4, rng);
  Matrix adj = Matrix::Identity(6, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index r = 0; r < 6; ++r)
    for (Eigen::Index c = 0; c < 6; ++c)
      if (unit(rng) < 0.4) adj(r, c) = 1.0;
  std::vector<Matrix> probe;
  graph_attention_forward(gat, Tensor::constant(hv), adj, 0.0, rng, &probe);
  REQUIRE(probe.size() == 2);
  for (const Matrix& attn : probe) {
    for (Eigen::Index r = 0; r < attn.rows(); ++r) {
      CHECK(attn.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
      for (Eigen::Index c = 0; c < attn.cols(); ++c) {
        CHECK(attn(r, c) >= 0.0);
        if (adj(r, c) == 0.0) CHECK(attn(r, c) == 0.0);
      }
    }
  }
}

TEST_CASE("graph attention is permutation-equivariant") {
  std::mt19937_64 rng(17);
  ParamStore params;
  auto gat = make_graph_attention(params, "g", 4, 6, 2, rng);
  const int n = 6;
  Matrix hv = random_matrix(n, 4, rng);
  Matrix adj = Matrix::Identity(n, n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c)
      if (unit(rng) < 0.35) adj(r, c) = 1.0;
  Matrix base = graph_attention_forward(gat, Tensor::constant(hv), adj, 0.0, rng).value();
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix p = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) p(i, perm[i]) = 1.0;  // row i takes old row perm[i]
    Matrix hp = p * hv;
    Matrix ap = p * adj * p.transpose();
    Matrix out = graph_attention_forward(gat, Tensor::constant(hp), ap, 0.0, rng).value();
    CHECK((out - p * base).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("graph attention gradients match finite differences") {
  std::mt19937_64 rng(23);
  ParamStore params;
  auto gat = make_graph_attention(params, "g", 3, 4, 2, rng);
  Matrix hv = random_matrix(5, 3, rng);
  Matrix adj = Matrix::Identity(5, 5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index r = 0; r < 5; ++r)
    for (Eigen::Index c = 0; c < 5; ++c)
      if (unit(rng) < 0.4) adj(r, c) = 1.0;
  std::mt19937_64 noop(0);
  auto rep = fd::check(params, [&] {
    return mean_all(graph_attention_forward(gat, Tensor::constant(hv), adj, 0.0, noop));
  });
  CAPTURE(rep.where);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("graph attention rejects bad shapes and head splits") {
  std::mt19937_64 rng(29);
  ParamStore params;
  CHECK_THROWS_AS(make_graph_attention(params, "g", 4, 5, 2, rng), ConfigError);
  auto gat = make_graph_attention(params, "ok", 4, 4, 2, rng);
  Matrix hv = Matrix::Zero(3, 4);
  CHECK_THROWS_AS(
      graph_attention_forward(gat, Tensor::constant(hv), Matrix::Identity(4, 4), 0.0, rng),
      ConfigError);
  CHECK_THROWS_AS(
      graph_attention_forward(gat, Tensor::constant(Matrix::Zero(3, 2)), Matrix::Identity(3, 3),
                              0.0, rng),
      ConfigError);
}

TEST_CASE("a single all-member hyperedge with zero scores averages the projections") {
  std::mt19937_64 rng(31);
  ParamStore params;
  auto hat = make_hypergraph_attention(params, "h", 3, 2, 1, rng);
  for (auto& head : hat.heads) {
    head.a_edge.mutable_value().setZero();
    head.a_node.mutable_value().setZero();
    head.b_node.mutable_value().setZero();
    head.b_edge.mutable_value().setZero();
  }
  Matrix hv = random_matrix(4, 3, rng);
  Matrix inc = Matrix::Ones(4, 1);
  Tensor out = hypergraph_attention_forward(hat, Tensor::constant(hv), inc, 0.0, rng);
  Matrix th = hv * hat.heads[0].W.value();
  Matrix mean = th.colwise().mean();
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index c = 0; c < 2; ++c)
      CHECK(out.value()(r, c) == doctest::Approx(elu_scalar(mean(0, c))).epsilon(1e-12));
}

TEST_CASE("singleton hyperedges give isolated nodes a self-projection") {
  std::mt19937_64 rng(37);
  Matrix inc(3, 1);
  inc << 1, 1, 0;  // node 2 sits in no hyperedge
  Matrix widened = ensure_membership(inc);
  REQUIRE(widened.cols() == 2);
  CHECK(widened(2, 1) == 1.0);
  CHECK(widened.col(0) == inc.col(0));

  ParamStore params;
  auto hat = make_hypergraph_attention(params, "h", 3, 2, 1, rng);
  Matrix hv = random_matrix(3, 3, rng);
  Tensor out = hypergraph_attention_forward(hat, Tensor::constant(hv), widened, 0.0, rng);
  Matrix th = hv * hat.heads[0].W.value();
  for (Eigen::Index c = 0; c < 2; ++c)
    CHECK(out.value()(2, c) == doctest::Approx(elu_scalar(th(2, c))).epsilon(1e-12));
}

TEST_CASE("ensure_membership leaves fully covered node sets alone") {
  Matrix inc(2, 2);
  inc << 1, 0, 0, 1;
  CHECK(ensure_membership(inc) == inc);
}

TEST_CASE("hypergraph attention is permutation-equivariant over nodes") {
  std::mt19937_64 rng(41);
  ParamStore params;
  auto hat = make_hypergraph_attention(params, "h", 4, 6, 2, rng);
  const int n = 5;
  Matrix hv = random_matrix(n, 4, rng);
  Matrix inc(n, 3);
  inc << 1, 0, 0,
         1, 1, 0,
         0, 1, 0,
         0, 1, 1,
         0, 0, 1;
  Matrix base = hypergraph_attention_forward(hat, Tensor::constant(hv), inc, 0.0, rng).value();
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix p = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) p(i, perm[i]) = 1.0;
    Matrix out =
        hypergraph_attention_forward(hat, Tensor::constant(p * hv), p * inc, 0.0, rng).value();
    CHECK((out - p * base).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("hypergraph attention gradients match finite differences") {
  std::mt19937_64 rng(43);
  ParamStore params;
  auto hat = make_hypergraph_attention(params, "h", 3, 4, 2, rng);
  Matrix hv = random_matrix(5, 3, rng);
  Matrix inc(5, 3);
  inc << 1, 0, 0,
         1, 1, 0,
         0, 1, 1,
         0, 0, 1,
         1, 0, 1;
  std::mt19937_64 noop(0);
  auto rep = fd::check(params, [&] {
    return mean_all(hypergraph_attention_forward(hat, Tensor::constant(hv), inc, 0.0, noop));
  });
  CAPTURE(rep.where);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("hypergraph attention rejects empty edges and missing membership") {
  std::mt19937_64 rng(47);
  ParamStore params;
  auto hat = make_hypergraph_attention(params, "h", 3, 2, 1, rng);
  Matrix hv = Matrix::Zero(3, 3);
  Matrix empty_edge(3, 2);
  empty_edge << 1, 0, 1, 0, 1, 0;
  CHECK_THROWS_AS(hypergraph_attention_forward(hat, Tensor::constant(hv), empty_edge, 0.0, rng),
                  DataError);
  CHECK_THROWS_AS(hypergraph_attention_forward(hat, Tensor::constant(hv), Matrix(3, 0), 0.0, rng),
                  DataError);
  Matrix uncovered(3, 1);
  uncovered << 1, 1, 0;  // node 2 would have an empty softmax row in phase 2
  CHECK_THROWS_AS(hypergraph_attention_forward(hat, Tensor::constant(hv), uncovered, 0.0, rng),
                  ConfigError);
}

TEST_CASE("dropout on attention rows perturbs only the trained path") {
  std::mt19937_64 rng(53);
  ParamStore params;
  auto gat = make_graph_attention(params, "g", 3, 2, 1, rng);
  Matrix hv = random_matrix(4, 3, rng);
  Matrix adj = Matrix::Ones(4, 4);
  std::mt19937_64 r1(5), r2(5), r3(6);
  Matrix a = graph_attention_forward(gat, Tensor::constant(hv), adj, 0.5, r1).value();
  Matrix b = graph_attention_forward(gat, Tensor::constant(hv), adj, 0.5, r2).value();
  Matrix c = graph_attention_forward(gat, Tensor::constant(hv), adj, 0.5, r3).value();
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);  // same seed, same mask
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);   // different seed, different mask
}
