#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "udagcn/gradcheck.hpp"
#include "udagcn/graph.hpp"

using namespace udagcn;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double dot_cos(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Dense evaluation of act(D^{-1/2} Â D^{-1/2} X W) written from the formula,
// starting from Â rather than a prenormalized S.
Tensor dense_gcn_oracle(const Tensor& a_hat, const Tensor& x, const Tensor& w, bool relu) {
  const std::size_t n = a_hat.dim(0), k = x.dim(1), c = w.dim(1);
  std::vector<double> d(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i] += a_hat.at(i, j);
  Tensor z(Shape{n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < c; ++q) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double xw = 0.0;
        for (std::size_t p = 0; p < k; ++p) xw += x.at(j, p) * w.at(p, q);
        s += a_hat.at(i, j) / (std::sqrt(d[i]) * std::sqrt(d[j])) * xw;
      }
      z.at(i, q) = relu ? std::max(s, 0.0) : s;
    }
  return z;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t cols = t.size() / t.dim(0);
  Tensor out(t.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(t.data() + perm[i] * cols, cols, out.data() + i * cols);
  return out;
}

}  // namespace

TEST(SimilarityScores, IdenticalCodesScoreOne) {
  std::mt19937_64 rng(1);
  const Tensor t = random_tensor({1, 5}, rng), s = random_tensor({1, 9}, rng);
  Tensor tex(Shape{3, 5}), str(Shape{3, 9});
  for (std::size_t i = 0; i < 3; ++i) {
    std::copy_n(t.data(), 5, tex.data() + 5 * i);
    std::copy_n(s.data(), 9, str.data() + 9 * i);
  }
  const Tensor sc = similarity_scores(tex, str);
  ASSERT_EQ(sc.shape(), (Shape{3, 2}));
  for (double v : sc.values()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(SimilarityScores, OrthogonalToAnchorScoresZero) {
  // Batch mean is (2/3, 2/3); rows 0 and 1 are orthogonal to it.
  const Tensor tex = Tensor::matrix({{1, -1}, {-1, 1}, {2, 2}});
  const Tensor sc = similarity_scores(tex, tex);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(sc.at(i, 0), 0.0, 1e-15);
    EXPECT_NEAR(sc.at(i, 1), 0.0, 1e-15);
  }
}

TEST(SimilarityScores, MatchesHandCosineOracle) {
  std::mt19937_64 rng(2);
  const Tensor tex = random_tensor({3, 4}, rng), str = random_tensor({3, 1, 3, 3}, rng);
  const Tensor sc = similarity_scores(tex, str);
  std::vector<double> mt(4, 0.0), ms(9, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) mt[k] += tex[i * 4 + k] / 3.0;
    for (std::size_t k = 0; k < 9; ++k) ms[k] += str[i * 9 + k] / 3.0;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(sc.at(i, 0), dot_cos(tex.values().subspan(4 * i, 4), mt), 1e-14);
    EXPECT_NEAR(sc.at(i, 1), dot_cos(str.values().subspan(9 * i, 9), ms), 1e-14);
  }
}

TEST(SimilarityScores, PrincipalAnchorIsSignedAndBounded) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor tex = random_tensor({8, 6}, rng), str = random_tensor({8, 1, 4, 4}, rng);
    const Tensor sc = similarity_scores(tex, str, ScoreAnchor::Principal);
    bool neg = false;
    for (double v : sc.values()) {
      EXPECT_LE(std::abs(v), 1.0 + 1e-12);
      neg = neg || v < 0;
    }
    EXPECT_TRUE(neg);  // centered codes straddle the principal axis
  }
}

TEST(SimilarityScores, PrincipalAnchorIsPermutationEquivariant) {
  std::mt19937_64 rng(4);
  const Tensor tex = random_tensor({6, 5}, rng), str = random_tensor({6, 1, 2, 2}, rng);
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Tensor a = similarity_scores(tex, str, ScoreAnchor::Principal);
  const Tensor b = similarity_scores(permute_rows(tex, perm), permute_rows(str, perm), ScoreAnchor::Principal);
  const Tensor pa = permute_rows(a, perm);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], pa[i], 1e-10);
}

TEST(SimilarityScores, EmptyBatchThrows) {
  EXPECT_THROW(similarity_scores(std::span<const LatentCode>{}), ContractError);
}

TEST(BuildAdjacency, OrthogonalRows) {
  const Adjacency adj = build_adjacency(Tensor::matrix({{1, 0}, {0, 1}}));
  EXPECT_EQ(adj.a_hat.at(0, 0), 1.0);
  EXPECT_EQ(adj.a_hat.at(0, 1), 0.0);
  EXPECT_EQ(adj.a_hat.at(1, 0), 0.0);
  EXPECT_EQ(adj.a_hat.at(1, 1), 1.0);
  EXPECT_EQ(adj.degrees[0], 1.0);
  EXPECT_EQ(adj.degrees[1], 1.0);
}

TEST(BuildAdjacency, EqualRows) {
  const Adjacency adj = build_adjacency(Tensor::matrix({{1, 1}, {1, 1}}));
  EXPECT_EQ(adj.a_hat.at(0, 0), 1.0);
  EXPECT_EQ(adj.a_hat.at(0, 1), 2.0);
  EXPECT_EQ(adj.a_hat.at(1, 0), 2.0);
  EXPECT_EQ(adj.degrees[0], 3.0);
  EXPECT_EQ(adj.degrees[1], 3.0);
}

TEST(BuildAdjacency, NegativeAffinityClamps) {
  const Adjacency adj = build_adjacency(Tensor::matrix({{1, 0}, {-1, 0}}));
  EXPECT_EQ(adj.a_hat.at(0, 1), 0.0);
  EXPECT_EQ(adj.a_hat.at(1, 0), 0.0);
  EXPECT_EQ(adj.degrees[0], 1.0);
}

TEST(NormalizeAdjacency, Examples) {
  const Tensor s = normalize_adjacency(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::from({1, 1}));
  EXPECT_EQ(s.at(0, 0), 1.0);
  EXPECT_EQ(s.at(0, 1), 0.0);
  const Tensor s2 = normalize_adjacency(Tensor::matrix({{1, 2}, {2, 1}}), Tensor::from({3, 3}));
  EXPECT_NEAR(s2.at(0, 0), 1.0 / 3.0, 1e-16);
  EXPECT_NEAR(s2.at(0, 1), 2.0 / 3.0, 1e-16);
  EXPECT_NEAR(s2.at(1, 0), 2.0 / 3.0, 1e-16);
}

TEST(NormalizeAdjacency, NonPositiveDegreeIsInvariantViolation) {
  EXPECT_THROW(normalize_adjacency(Tensor::matrix({{1}}), Tensor::from({0})), std::logic_error);
}

TEST(NormalizeAdjacency, SqrtDegreeIsFixedPoint) {
  // S·sqrt(d) = D^{-1/2}·Â·1 = sqrt(d); plain row sums can exceed 1 at hubs.
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t w = 1 + rng() % 16;
    const Adjacency adj = build_adjacency(random_tensor({w, 2}, rng));
    const Tensor s = normalize_adjacency(adj.a_hat, adj.degrees);
    for (std::size_t i = 0; i < w; ++i) {
      double r = 0, weighted = 0;
      for (std::size_t j = 0; j < w; ++j) {
        r += s.at(i, j);
        weighted += s.at(i, j) * std::sqrt(adj.degrees[j]);
      }
      EXPECT_GT(r, 0.0);
      EXPECT_NEAR(weighted, std::sqrt(adj.degrees[i]), 1e-12);
    }
  }
}

TEST(NormalizeAdjacency, HubRowSumExceedsOne) {
  // Star with four leaves: the centre row sums to 1/5 + 4/sqrt(10).
  Tensor sc(Shape{5, 2});
  for (std::size_t i = 0; i < 5; ++i) sc.at(i, 0) = 1.0;
  Adjacency adj = build_adjacency(sc);
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 1; j < 5; ++j) adj.a_hat.at(i, j) = i == j ? 1.0 : 0.0;
  adj.degrees = Tensor::from({5, 2, 2, 2, 2});
  const Tensor s = normalize_adjacency(adj.a_hat, adj.degrees);
  double r = 0;
  for (std::size_t j = 0; j < 5; ++j) r += s.at(0, j);
  EXPECT_NEAR(r, 0.2 + 4.0 / std::sqrt(10.0), 1e-15);
  EXPECT_GT(r, 1.0);
}

TEST(AdjacencyProperties, RandomScoreMatrices) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t w = 1 + rng() % 16;
    const Tensor sc = random_tensor({w, 2}, rng);
    const Adjacency adj = build_adjacency(sc);
    for (std::size_t i = 0; i < w; ++i) {
      EXPECT_EQ(adj.a_hat.at(i, i), 1.0);
      EXPECT_GE(adj.degrees[i], 1.0);
      for (std::size_t j = 0; j < w; ++j) {
        EXPECT_EQ(adj.a_hat.at(i, j), adj.a_hat.at(j, i));
        EXPECT_GE(adj.a_hat.at(i, j), 0.0);
      }
    }
    const Tensor s = normalize_adjacency(adj.a_hat, adj.degrees);
    EXPECT_TRUE(s.all_finite());
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(w);
    for (auto& e : v) e = u(rng);
    double q = 0;
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < w; ++j)
        q += v[i] * (sc.at(i, 0) * sc.at(j, 0) + sc.at(i, 1) * sc.at(j, 1)) * v[j];
    EXPECT_GE(q, -1e-10);
  }
}

TEST(GcnLayer, SingleNodeIdentity) {
  Tape tape;
  const Var z = gcn_layer(tape.constant(Tensor::matrix({{1}})), tape.constant(Tensor::matrix({{0.3, -2, 5}})),
                          tape.constant(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}})), Activation::None);
  EXPECT_EQ(z.value()[0], 0.3);
  EXPECT_EQ(z.value()[1], -2.0);
  EXPECT_EQ(z.value()[2], 5.0);
}

TEST(GcnLayer, IdentityGraphIsPerNodeLinear) {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({5, 4}, rng), w = random_tensor({4, 3}, rng);
  Tensor id(Shape{5, 5});
  for (std::size_t i = 0; i < 5; ++i) id.at(i, i) = 1.0;
  Tape tape;
  const Var z = gcn_layer(tape.constant(id), tape.constant(x), tape.constant(w), Activation::None);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      double ref = 0;
      for (std::size_t k = 0; k < 4; ++k) ref += x.at(i, k) * w.at(k, c);
      EXPECT_NEAR(z.value().at(i, c), ref, 1e-14);
    }
}

TEST(GcnLayer, MatchesDenseOracleOnRandomGraphs) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t w = 1 + rng() % 16, k = 1 + rng() % 6, c = 1 + rng() % 5;
    const Adjacency adj = build_adjacency(random_tensor({w, 2}, rng));
    const Tensor x = random_tensor({w, k}, rng), wt = random_tensor({k, c}, rng);
    const bool relu = trial % 2 == 0;
    Tape tape;
    const Var z = gcn_layer(tape.constant(normalize_adjacency(adj.a_hat, adj.degrees)), tape.constant(x),
                            tape.constant(wt), relu ? Activation::Relu : Activation::None);
    const Tensor ref = dense_gcn_oracle(adj.a_hat, x, wt, relu);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(z.value()[i], ref[i], 1e-10);
  }
}

TEST(GcnLayer, DimensionMismatchThrows) {
  Tape tape;
  EXPECT_THROW(gcn_layer(tape.constant(Tensor(Shape{3, 3})), tape.constant(Tensor(Shape{2, 4})),
                         tape.constant(Tensor(Shape{4, 2})), Activation::None),
               DimensionError);
  EXPECT_THROW(gcn_layer(tape.constant(Tensor(Shape{2, 2})), tape.constant(Tensor(Shape{2, 4})),
                         tape.constant(Tensor(Shape{3, 2})), Activation::None),
               DimensionError);
}

TEST(GcnLayer, FiniteDifferenceOnFeaturesAndWeights) {
  std::mt19937_64 rng(9);
  const Adjacency adj = build_adjacency(random_tensor({5, 2}, rng));
  const Tensor s = normalize_adjacency(adj.a_hat, adj.degrees);
  const Tensor x = random_tensor({5, 4}, rng), w = random_tensor({4, 3}, rng), mix = random_tensor({5, 3}, rng);
  const auto rx = finite_diff_check(
      [&](Tape& t, const Var& xv) {
        return sum(mul(gcn_layer(t.constant(s), xv, t.constant(w), Activation::None), t.constant(mix)));
      },
      x);
  EXPECT_LT(rx.max_rel_error, 1e-6);
  const auto rw = finite_diff_check(
      [&](Tape& t, const Var& wv) {
        return sum(mul(gcn_layer(t.constant(s), t.constant(x), wv, Activation::None), t.constant(mix)));
      },
      w);
  EXPECT_LT(rw.max_rel_error, 1e-6);
}

TEST(GcnForward, ShapeAndZeroFeatures) {
  Rng prng(10);
  GcnParams params({6, 8, 3}, prng);
  std::mt19937_64 rng(11);
  const InstanceGraph g = build_graph(random_tensor({4, 2}, rng), random_tensor({4, 1, 2, 2}, rng));
  const Tensor z = gcn_forward(params, g);
  EXPECT_EQ(z.shape(), (Shape{4, 3}));
  Tape tape;
  const Var zero = gcn_forward(tape, params, tape.constant(g.normalized), tape.constant(Tensor(Shape{4, 6})));
  for (double v : zero.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(GcnForward, PermutationEquivariant) {
  Rng prng(12);
  GcnParams params({7, 5, 3}, prng);
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = 2 + rng() % 15;
    const Tensor tex = random_tensor({w, 3}, rng), str = random_tensor({w, 1, 2, 2}, rng);
    std::vector<std::size_t> perm(w);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor z = gcn_forward(params, build_graph(tex, str));
    const Tensor zp = gcn_forward(params, build_graph(permute_rows(tex, perm), permute_rows(str, perm)));
    const Tensor ref = permute_rows(z, perm);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(zp[i], ref[i], 1e-10);
  }
}

TEST(GcnForward, SameParamsServeBothGraphs) {
  Rng prng(14);
  GcnParams params({3, 4, 2}, prng);
  std::mt19937_64 rng(15);
  const InstanceGraph ga = build_graph(random_tensor({3, 2}, rng), random_tensor({3, 1}, rng));
  const InstanceGraph gb = build_graph(random_tensor({5, 2}, rng), random_tensor({5, 1}, rng));
  Tape tape;
  const Var za = gcn_forward(tape, params, tape.constant(ga.normalized), tape.constant(ga.features));
  const Var zb = gcn_forward(tape, params, tape.constant(gb.normalized), tape.constant(gb.features));
  tape.backward(add(sum(za), sum(zb)));
  ParamRefs refs = params.parameters();
  ASSERT_EQ(refs.size(), 2u);
  for (Parameter* p : refs) EXPECT_FALSE(p->grad.empty());
}

TEST(GcnParams, LayerDimsChain) {
  Rng prng(16);
  GcnParams params({10, 6, 4}, prng);
  EXPECT_EQ(params.layers(), 2u);
  EXPECT_EQ(params.in_dim(), 10u);
  EXPECT_EQ(params.out_dim(), 4u);
  EXPECT_EQ(params.weights[0].value.dim(1), params.weights[1].value.dim(0));
}

TEST(BuildGraph, SingleImageBatchIsSelfLoop) {
  std::mt19937_64 rng(17);
  const InstanceGraph g = build_graph(random_tensor({1, 3}, rng), random_tensor({1, 4}, rng));
  EXPECT_EQ(g.a_hat.at(0, 0), 1.0);
  EXPECT_EQ(g.normalized.at(0, 0), 1.0);
}

TEST(DumpGraph, WritesThreeCsvFiles) {
  std::mt19937_64 rng(18);
  const InstanceGraph g = build_graph(random_tensor({3, 2}, rng), random_tensor({3, 2}, rng));
  const auto dir = std::filesystem::temp_directory_path() / "udagcn_graph_dump";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  dump_graph_csv(g, dir / "g");
  for (const char* suffix : {"g_a_hat.csv", "g_degrees.csv", "g_normalized.csv"}) {
    std::ifstream in(dir / suffix);
    ASSERT_TRUE(in.good()) << suffix;
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_GE(rows, 1u);
  }
  std::filesystem::remove_all(dir);
}
