// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "maple/model/aggregator.hpp"
#include "maple/numerics/grad_check.hpp"
#include "maple/numerics/random.hpp"
#include "support.hpp"

using namespace maple;
using V = Var<double>;
using test_support::max_abs_diff;
using test_support::to_ref;

namespace {

ref::Vec flat(const Matrix<double>& m) { return ref::Vec(m.values().begin(), m.values().end()); }

GatOutput<double> run_gat(Tape<double>& t, const Matrix<double>& x, const EntityGraph& g, const Matrix<double>& w,
                          const Matrix<double>& a) {
  return gat_update(t.constant(x), g, {t.constant(w), t.constant(a)});
}

PooledSlide<double> run_pool(Tape<double>& t, const Matrix<double>& h, const Matrix<double>& wv,
                             const Matrix<double>& wu, const Matrix<double>& w) {
  return gated_attention_pool(t.constant(h), {t.constant(wv), t.constant(wu), t.constant(w)});
}

}  // namespace

TEST(Graph, TwoNodes) {
  Rng rng(1);
  const auto g = build_entity_graph(rng.normal_matrix<double>(2, 4, 1.0), 1);
  EXPECT_EQ(g.neighbors, (std::vector<std::vector<std::size_t>>{{1}, {0}}));
  EXPECT_EQ(g.support(), (std::vector<std::vector<std::size_t>>{{1, 0}, {0, 1}}));
  EXPECT_THROW(build_entity_graph(Matrix<double>(1, 4, 1.0), 1), ArgumentError);
  EXPECT_THROW(build_entity_graph(Matrix<double>(3, 4, 1.0), 0), ConfigError);
  EXPECT_EQ(kDefaultNeighbors, 7u);
}

TEST(Graph, HandChosenVectors) {
  // Pairwise cosines: (0,1) 0.8, (0,2) 0.6, (0,3) -1, (1,2) 0, (1,3) -0.8, (2,3) -0.6.
  Matrix<double> x(4, 2);
  x(0, 0) = 1;
  x(1, 0) = 0.8;
  x(1, 1) = 0.6;
  x(2, 0) = 0.6;
  x(2, 1) = -0.8;
  x(3, 0) = -1;
  const auto g = build_entity_graph(x, 2);
  EXPECT_EQ(g.neighbors, (std::vector<std::vector<std::size_t>>{{1, 2}, {0, 2}, {0, 1}, {2, 1}}));
  EXPECT_EQ(g.neighbors, ref::knn(to_ref(x), 2));
}

TEST(Graph, MatchesSortOracle) {
  Rng rng(2);
  for (int it = 0; it < 500; ++it) {
    const std::size_t n = 2 + rng.index(12);
    const std::size_t k = 1 + rng.index(10);
    const auto x = rng.normal_matrix<double>(n, 1 + rng.index(6), 1.0);
    const auto g = build_entity_graph(x, k);
    EXPECT_EQ(g.neighbors, ref::knn(to_ref(x), k));
    for (std::size_t v = 0; v < n; ++v) {
      EXPECT_EQ(g.neighbors[v].size(), std::min(k, n - 1));
      EXPECT_EQ(std::count(g.neighbors[v].begin(), g.neighbors[v].end(), v), 0);
    }
  }
}

TEST(Gat, SelfOnlyNeighborhood) {
  Rng rng(3);
  const auto x = rng.normal_matrix<double>(3, 4, 1.0);
  const auto w = rng.normal_matrix<double>(4, 4, 0.5);
  const auto a = rng.normal_matrix<double>(8, 1, 1.0);
  EntityGraph g;
  g.neighbors = {{}, {}, {}};
  Tape<double> t;
  const auto out = run_gat(t, x, g, w, a);
  const auto h = ref::mul(to_ref(x), to_ref(w));
  for (std::size_t v = 0; v < 3; ++v) {
    EXPECT_DOUBLE_EQ(out.coefficients.value()(v, v), 1.0);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.features.value()(v, j), std::max(0.0, h[v][j]), 1e-14);
  }
}

TEST(Gat, IdenticalNodesSplitEvenly) {
  Rng rng(4);
  Matrix<double> x = rng.normal_matrix<double>(2, 5, 1.0);
  for (std::size_t j = 0; j < 5; ++j) x(1, j) = x(0, j);
  Tape<double> t;
  const auto out =
      run_gat(t, x, build_entity_graph(x, 1), rng.normal_matrix<double>(5, 5, 0.5), rng.normal_matrix<double>(10, 1, 1.0));
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t u = 0; u < 2; ++u) EXPECT_NEAR(out.coefficients.value()(v, u), 0.5, 1e-15);
}

TEST(Gat, MatchesOracle) {
  Rng rng(5);
  for (int it = 0; it < 100; ++it) {
    const auto x = rng.normal_matrix<double>(6, 5, 1.0);
    const auto w = rng.normal_matrix<double>(5, 5, 0.5);
    const auto a = rng.normal_matrix<double>(10, 1, 1.0);
    const auto g = build_entity_graph(x, 1 + rng.index(5));
    Tape<double> t;
    const auto out = run_gat(t, x, g, w, a);
    const auto want = ref::gat(to_ref(x), g.neighbors, to_ref(w), flat(a));
    EXPECT_LE(max_abs_diff(out.features.value(), want.features), 1e-10);
    EXPECT_LE(max_abs_diff(out.coefficients.value(), want.alpha), 1e-10);
    for (std::size_t v = 0; v < 6; ++v) {
      double s = 0;
      for (std::size_t u = 0; u < 6; ++u) s += out.coefficients.value()(v, u);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Gat, Errors) {
  Tape<double> t;
  EntityGraph g;
  g.neighbors = {{1}, {0}};
  EXPECT_THROW(run_gat(t, Matrix<double>(3, 2, 1.0), g, Matrix<double>(2, 2), Matrix<double>(4, 1)), DimensionError);
  EXPECT_THROW(run_gat(t, Matrix<double>(2, 2, 1.0), g, Matrix<double>(2, 2), Matrix<double>(3, 1)), DimensionError);
}

TEST(Pool, SingleRow) {
  Rng rng(6);
  const auto h = rng.normal_matrix<double>(1, 4, 1.0);
  Tape<double> t;
  const auto out = run_pool(t, h, rng.normal_matrix<double>(4, 4, 1.0), rng.normal_matrix<double>(4, 4, 1.0),
                            rng.normal_matrix<double>(4, 1, 1.0));
  EXPECT_DOUBLE_EQ(out.weights.value()(0, 0), 1.0);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(out.feature.value()(0, j), h(0, j));
}

TEST(Pool, DuplicateRowsShareWeight) {
  Rng rng(7);
  Matrix<double> h = rng.normal_matrix<double>(4, 3, 1.0);
  for (std::size_t j = 0; j < 3; ++j) h(2, j) = h(0, j);
  Tape<double> t;
  const auto w = run_pool(t, h, rng.normal_matrix<double>(3, 3, 1.0), rng.normal_matrix<double>(3, 3, 1.0),
                          rng.normal_matrix<double>(3, 1, 1.0))
                     .weights.value();
  EXPECT_EQ(w(0, 0), w(0, 2));
}

TEST(Pool, MatchesOracle) {
  Rng rng(8);
  for (int it = 0; it < 100; ++it) {
    const std::size_t d = 2 + rng.index(6);
    const auto h = rng.normal_matrix<double>(8, d, 1.0);
    const auto wv = rng.normal_matrix<double>(d, d, 1.0), wu = rng.normal_matrix<double>(d, d, 1.0);
    const auto w = rng.normal_matrix<double>(d, 1, 1.0);
    Tape<double> t;
    const auto out = run_pool(t, h, wv, wu, w);
    const auto want = ref::gated_pool(to_ref(h), to_ref(wv), to_ref(wu), flat(w));
    EXPECT_LE(max_abs_diff(out.feature.value(), {want.feature}), 1e-10);
    EXPECT_LE(max_abs_diff(out.weights.value(), {want.weights}), 1e-10);
    double s = 0;
    for (double a : out.weights.value().values()) s += a;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(SlideLogits, CosineAgainstPrompts) {
  Tape<double> t;
  Matrix<double> z(1, 3);
  z(0, 1) = 3;
  Matrix<double> p(2, 3);
  p(0, 1) = 0.2;
  p(1, 0) = 1;
  const auto l = slide_logits(t.constant(z), t.constant(p)).value();
  EXPECT_NEAR(l(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(l(0, 1), 0.0, 1e-15);
  Rng rng(9);
  const auto zr = rng.normal_matrix<double>(1, 5, 1.0);
  const auto pr = rng.normal_matrix<double>(4, 5, 1.0);
  Matrix<double> z7 = zr;
  for (double& x : z7.values()) x *= 7;
  const auto a = slide_logits(t.constant(zr), t.constant(pr)).value();
  const auto b = slide_logits(t.constant(z7), t.constant(pr)).value();
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(a(0, c), b(0, c), 1e-14);
    EXPECT_NEAR(a(0, c), ref::cosine(flat(zr), to_ref(pr)[c]), 1e-13);
  }
  EXPECT_THROW(slide_logits(t.constant(zr), t.constant(Matrix<double>(0, 5))), ArgumentError);
}

// Permuting the nodes of one scale permutes the refined features and leaves the pooled vector unchanged.
TEST(Aggregator, RelabelingEntities) {
  Rng rng(10);
  for (int it = 0; it < 30; ++it) {
    const std::size_t d = 4;
    const auto x = rng.normal_matrix<double>(6, d, 1.0);
    const auto w = rng.normal_matrix<double>(d, d, 0.5), a = rng.normal_matrix<double>(2 * d, 1, 1.0);
    const auto wv = rng.normal_matrix<double>(d, d, 1.0), wu = rng.normal_matrix<double>(d, d, 1.0);
    const auto sw = rng.normal_matrix<double>(d, 1, 1.0);
    std::vector<std::size_t> perm{2, 0, 1, 3, 4, 5};
    Matrix<double> xp(6, d);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < d; ++j) xp(i, j) = x(perm[i], j);
    Tape<double> t;
    const auto g1 = run_gat(t, x, build_entity_graph(x, 3), w, a);
    const auto g2 = run_gat(t, xp, build_entity_graph(xp, 3), w, a);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(g2.features.value()(i, j), g1.features.value()(perm[i], j), 1e-12);
    const auto p1 = gated_attention_pool(ops::slice_rows(g1.features, 0, 3), {t.constant(wv), t.constant(wu), t.constant(sw)});
    const auto p2 = gated_attention_pool(ops::slice_rows(g2.features, 0, 3), {t.constant(wv), t.constant(wu), t.constant(sw)});
    EXPECT_LE(max_abs_diff(p1.feature.value(), to_ref(p2.feature.value())), 1e-12);
  }
}

TEST(Aggregator, GradientWithFixedTopology) {
  Rng rng(11);
  const std::size_t d = 4;
  const auto x = rng.normal_matrix<double>(6, d, 1.0);
  const auto graph = build_entity_graph(x, 3);
  const auto prompts = rng.normal_matrix<double>(3, d, 1.0);
  const auto r = grad_check(
      [&](Tape<double>& t, std::span<const V> v) {
        const auto g = gat_update(v[0], graph, {v[1], v[2]});
        V total;
        for (std::size_t s = 0; s < 2; ++s) {
          const auto pooled = gated_attention_pool(ops::slice_rows(g.features, 3 * s, 3), {v[3], v[4], v[5]});
          const V l = slide_logits(pooled.feature, t.constant(prompts));
          total = s == 0 ? l : ops::add(total, l);
        }
        return ops::cross_entropy(total, 1);
      },
      {x, rng.normal_matrix<double>(d, d, 0.7), rng.normal_matrix<double>(2 * d, 1, 1.0),
       rng.normal_matrix<double>(d, d, 1.0), rng.normal_matrix<double>(d, d, 1.0), rng.normal_matrix<double>(d, 1, 1.0)});
  EXPECT_LE(r.max_rel_error, 1e-5);
}

TEST(Aggregator, GraphDump) {
  EntityGraph g;
  g.neighbors = {{1}, {0}};
  Matrix<double> c(2, 2);
  c(0, 0) = 0.4;
  c(0, 1) = 0.6;
  c(1, 0) = 0.5;
  c(1, 1) = 0.5;
  const auto j = graph_dump({{"low", "gland"}, {"high", "nucleus"}}, g, c);
  EXPECT_EQ(j["nodes"][1]["entity"], "nucleus");
  ASSERT_EQ(j["edges"].size(), 4u);
  EXPECT_EQ(j["edges"][0][0], 0);
  EXPECT_EQ(j["edges"][0][1], 1);
  EXPECT_DOUBLE_EQ(j["edges"][0][2].get<double>(), 0.6);
  EXPECT_DOUBLE_EQ(j["edges"][1][2].get<double>(), 0.4);
}
