#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "onedm/core/rng.hpp"
#include "onedm/model/model.hpp"

using namespace onedm;

namespace {

std::vector<Tensor<double>> unit_batch(Rng& r, int n, int p) {
  std::vector<Tensor<double>> z;
  for (int i = 0; i < n; ++i) {
    Tensor<double> v({p});
    double nrm = 0;
    for (auto& x : v.v) {
      x = r.normal();
      nrm += x * x;
    }
    nrm = std::sqrt(nrm);
    for (auto& x : v.v) x /= nrm;
    z.push_back(std::move(v));
  }
  return z;
}

// literal transcription of the contrastive objective, computed with plain
// loops and no stability tricks
double nce_oracle(const std::vector<Tensor<double>>& z,
                  const std::vector<int>& writer, double tau) {
  int N = int(z.size());
  auto dot = [&](int i, int j) {
    double d = 0;
    for (size_t k = 0; k < z[size_t(i)].numel(); ++k)
      d += z[size_t(i)][k] * z[size_t(j)][k];
    return d;
  };
  double total = 0;
  int contributing = 0;
  for (int i = 0; i < N; ++i) {
    std::vector<int> pos;
    for (int j = 0; j < N; ++j)
      if (j != i && writer[size_t(j)] == writer[size_t(i)]) pos.push_back(j);
    if (pos.empty()) continue;
    ++contributing;
    double denom = 0;
    for (int a = 0; a < N; ++a)
      if (a != i) denom += std::exp(dot(i, a) / tau);
    double anchor = 0;
    for (int p : pos) anchor += -std::log(std::exp(dot(i, p) / tau) / denom);
    total += anchor / double(pos.size());
  }
  return contributing ? total / contributing : 0.0;
}

Tensor<double> random_canvas(Rng& r, int h, int w) {
  Tensor<double> img({h, w});
  for (auto& x : img.v) x = r.uniform(0.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("contrastive loss matches the loop oracle") {
  Rng r(101);
  SUBCASE("three samples, two writers, tau 1") {
    auto z = unit_batch(r, 3, 6);
    std::vector<int> w = {7, 7, 9};
    double got = lap_nce_loss<double>(z, w, 1.0);
    double want = nce_oracle(z, w, 1.0);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
  SUBCASE("mixed batch, small temperature") {
    auto z = unit_batch(r, 8, 16);
    std::vector<int> w = {0, 1, 2, 0, 1, 2, 0, 0};
    double got = lap_nce_loss<double>(z, w, 0.1);
    double want = nce_oracle(z, w, 0.1);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("contrastive loss two-sample edge cases") {
  Rng r(102);
  auto z = unit_batch(r, 2, 8);
  // same writer: single candidate is the positive, so -log 1 = 0
  CHECK(lap_nce_loss<double>(z, {4, 4}, 0.1) == 0.0);
  // different writers: no anchor has a positive, loss defined as 0
  CHECK(lap_nce_loss<double>(z, {4, 5}, 0.1) == 0.0);
}

TEST_CASE("contrastive loss invariances") {
  Rng r(103);
  auto z = unit_batch(r, 6, 8);
  std::vector<int> w = {0, 0, 1, 1, 2, 2};
  double base = lap_nce_loss<double>(z, w, 0.2);

  SUBCASE("joint rotation of all embeddings") {
    // compose a few Givens rotations; inner products are preserved
    auto rot = z;
    const std::vector<std::tuple<int, int, double>> givens = {
        {0, 3, 0.7}, {1, 5, -1.2}, {2, 4, 2.1}};
    for (auto [a, b, th] : givens) {
      for (auto& v : rot) {
        double x = v[size_t(a)], y = v[size_t(b)];
        v[size_t(a)] = std::cos(th) * x - std::sin(th) * y;
        v[size_t(b)] = std::sin(th) * x + std::cos(th) * y;
      }
    }
    CHECK(lap_nce_loss<double>(rot, w, 0.2) ==
          doctest::Approx(base).epsilon(1e-6));
  }

  SUBCASE("batch order permutation") {
    std::vector<int> perm = {4, 1, 5, 0, 3, 2};
    std::vector<Tensor<double>> zp;
    std::vector<int> wp;
    for (int i : perm) {
      zp.push_back(z[size_t(i)]);
      wp.push_back(w[size_t(i)]);
    }
    CHECK(lap_nce_loss<double>(zp, wp, 0.2) ==
          doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("contrastive loss gradient matches finite differences") {
  Rng r(104);
  auto z = unit_batch(r, 6, 5);
  std::vector<int> w = {0, 0, 0, 1, 1, 2};
  double tau = 0.3;
  std::vector<Tensor<double>> dz;
  lap_nce_loss<double>(z, w, tau, &dz);
  double h = 1e-4;
  for (int i = 0; i < 6; ++i)
    for (size_t k = 0; k < z[size_t(i)].numel(); ++k) {
      double orig = z[size_t(i)][k];
      z[size_t(i)][k] = orig + h;
      double lp = lap_nce_loss<double>(z, w, tau);
      z[size_t(i)][k] = orig - h;
      double lm = lap_nce_loss<double>(z, w, tau);
      z[size_t(i)][k] = orig;
      double fd = (lp - lm) / (2 * h);
      double got = dz[size_t(i)][k];
      double rel =
          std::abs(fd - got) / std::max({std::abs(fd), std::abs(got), 1e-8});
      REQUIRE(rel < 1e-5);
    }
}

TEST_CASE("contrastive loss argument validation") {
  Rng r(105);
  auto z = unit_batch(r, 3, 4);
  std::vector<int> w = {0, 0, 1};
  CHECK_THROWS_AS(lap_nce_loss<double>(z, w, 0.0), UsageError);
  CHECK_THROWS_AS(lap_nce_loss<double>(z, w, -0.5), UsageError);
  CHECK_THROWS_WITH_AS(lap_nce_loss<double>(z, w, 0.0),
                       doctest::Contains("parameter error"), UsageError);
  auto z1 = unit_batch(r, 1, 4);
  CHECK_THROWS_WITH_AS(lap_nce_loss<double>(z1, {0}, 0.1),
                       doctest::Contains("batch error"), UsageError);
  CHECK_THROWS_AS(lap_nce_loss<double>(z, {0, 1}, 0.1), UsageError);
}

TEST_CASE("gate at zero parameters halves every row") {
  ParamStore<double> ps;
  GateLayer<double> gate(ps, "g", 5);
  ps.finalize();  // all zeros, sigmoid(0) = 1/2 exactly

  Rng r(106);
  Tensor<double> f({4, 5});
  for (auto& x : f.v) x = r.normal();
  Tape<double> t(&ps, nullptr);
  auto [gated, units] = gate.forward(t, t.constant(f));
  for (int i = 0; i < 4; ++i) {
    CHECK(t.val(units).at(i, 0) == 0.5);
    for (int j = 0; j < 5; ++j)
      CHECK(t.val(gated).at(i, j) == 0.5 * f.at(i, j));
  }
}

TEST_CASE("gate saturates shut at a large negative bias") {
  ParamStore<double> ps;
  GateLayer<double> gate(ps, "g", 5);
  ps.finalize();
  ps.raw()[ps.size() - 1] = -20.0;  // bias is the last registered scalar

  Tensor<double> f({3, 5});
  for (auto& x : f.v) x = 1.0;
  Tape<double> t(&ps, nullptr);
  auto [gated, units] = gate.forward(t, t.constant(f));
  for (int i = 0; i < 3; ++i) CHECK(t.val(units).at(i, 0) < 1e-8);
  (void)gated;
}

TEST_CASE("gate scales rows exactly and never grows the input") {
  ParamStore<double> ps;
  GateLayer<double> gate(ps, "g", 6);
  ps.finalize();
  Rng r(107);
  ps.init_params(Rng(107));
  ps.raw()[ps.size() - 1] = 0.3;  // nonzero bias for variety

  Tensor<double> f({5, 6});
  for (auto& x : f.v) x = r.normal();
  Tape<double> t(&ps, nullptr);
  auto [gated, units] = gate.forward(t, t.constant(f));
  double nf = 0, ng = 0;
  for (int i = 0; i < 5; ++i) {
    double w = t.val(units).at(i, 0);
    CHECK(w > 0.0);
    CHECK(w < 1.0);
    for (int j = 0; j < 6; ++j) {
      CHECK(t.val(gated).at(i, j) == w * f.at(i, j));
      nf += f.at(i, j) * f.at(i, j);
      ng += t.val(gated).at(i, j) * t.val(gated).at(i, j);
    }
  }
  CHECK(std::sqrt(ng) <= std::sqrt(nf));
}

TEST_CASE("projection head lands on the unit sphere") {
  ParamStore<double> ps;
  ProjHead<double> proj(ps, "p", 12, 7);
  ps.finalize();
  ps.init_params(Rng(108));

  Rng r(109);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> f({5, 12});
    for (auto& x : f.v) x = r.normal(0.0, 2.0);
    Tape<double> t(&ps, nullptr);
    int z = proj.forward(t, t.constant(f));
    REQUIRE(t.val(z).shape == std::vector<int>{1, 7});
    double n = 0;
    for (auto v : t.val(z).v) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
  }
}

TEST_CASE("projection head ignores input scale when biases are zero") {
  ParamStore<double> ps;
  ProjHead<double> proj(ps, "p", 10, 6);
  ps.finalize();
  ps.init_params(Rng(110));  // linear biases start at zero

  Rng r(111);
  Tensor<double> f({4, 10}), f2({4, 10});
  for (size_t i = 0; i < f.numel(); ++i) {
    f[i] = r.normal();
    f2[i] = 2.0 * f[i];
  }
  Tape<double> t(&ps, nullptr);
  int a = proj.forward(t, t.constant(f));
  int b = proj.forward(t, t.constant(f2));
  for (size_t i = 0; i < t.val(a).numel(); ++i)
    CHECK(t.val(a)[i] == doctest::Approx(t.val(b)[i]).epsilon(1e-12));
}

namespace {

// scalar re-derivation of the cross stage: LN both sides, project, one head
Tensor<double> cross_oracle(const ParamStore<double>& ps,
                            const Fusion<double>& fu, const Tensor<double>& e,
                            const Tensor<double>& style) {
  int L = e.dim(0), c = e.dim(1), d = style.dim(0);
  auto ln = [&](const Tensor<double>& x, ParamId g, ParamId b) {
    Tensor<double> out(x.shape);
    for (int i = 0; i < x.dim(0); ++i) {
      double mu = 0, var = 0;
      for (int j = 0; j < c; ++j) mu += x.at(i, j);
      mu /= c;
      for (int j = 0; j < c; ++j) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
      var /= c;
      double is = 1.0 / std::sqrt(var + 1e-5);
      for (int j = 0; j < c; ++j)
        out.at(i, j) =
            (x.at(i, j) - mu) * is * ps.ptr(g)[j] + ps.ptr(b)[j];
    }
    return out;
  };
  auto matvec = [&](const Tensor<double>& x, ParamId w, ParamId b) {
    Tensor<double> out({x.dim(0), c});
    for (int i = 0; i < x.dim(0); ++i)
      for (int j = 0; j < c; ++j) {
        double s = ps.ptr(b)[j];
        for (int k = 0; k < x.dim(1); ++k)
          s += x.at(i, k) * ps.ptr(w)[k * c + j];
        out.at(i, j) = s;
      }
    return out;
  };
  Tensor<double> q = matvec(ln(e, fu.ln1g, fu.ln1b), fu.cross.wq, fu.cross.bq);
  Tensor<double> sk = ln(style, fu.ln2g, fu.ln2b);
  Tensor<double> k = matvec(sk, fu.cross.wk, fu.cross.bk);
  Tensor<double> v = matvec(sk, fu.cross.wv, fu.cross.bv);
  Tensor<double> att({L, c});
  for (int i = 0; i < L; ++i) {
    std::vector<double> s(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) {
      double dd = 0;
      for (int x = 0; x < c; ++x) dd += q.at(i, x) * k.at(j, x);
      s[size_t(j)] = dd / std::sqrt(double(c));
    }
    double mx = *std::max_element(s.begin(), s.end());
    double den = 0;
    for (auto& x : s) {
      x = std::exp(x - mx);
      den += x;
    }
    for (int j = 0; j < d; ++j)
      for (int x = 0; x < c; ++x) att.at(i, x) += s[size_t(j)] / den * v.at(j, x);
  }
  return matvec(att, fu.cross.wo, fu.cross.bo);
}

ModelDims fusion_dims(int c, int heads) {
  ModelDims d = ModelDims::tiny();
  d.c = c;
  d.heads = heads;
  return d;
}

}  // namespace

TEST_CASE("fusion cross stage matches a scalar oracle") {
  ModelDims d = fusion_dims(8, 1);
  ParamStore<double> ps;
  Fusion<double> fu(ps, "f", d);
  ps.finalize();
  ps.init_params(Rng(112));

  Rng r(113);
  Tensor<double> e({3, 8}), style({4, 8});
  for (auto& x : e.v) x = r.normal();
  for (auto& x : style.v) x = r.normal();

  Tape<double> t(&ps, nullptr);
  int out = fu.cross_attend(t, t.constant(e), t.constant(style));
  Tensor<double> want = cross_oracle(ps, fu, e, style);
  REQUIRE(t.val(out).shape == want.shape);
  for (size_t i = 0; i < want.numel(); ++i)
    CHECK(t.val(out)[i] == doctest::Approx(want[i]).epsilon(1e-9));
}

TEST_CASE("single style token makes the cross output query independent") {
  ModelDims d = fusion_dims(8, 2);
  ParamStore<double> ps;
  Fusion<double> fu(ps, "f", d);
  ps.finalize();
  ps.init_params(Rng(114));

  Rng r(115);
  Tensor<double> e({5, 8}), style({1, 8});
  for (auto& x : e.v) x = r.normal();
  for (auto& x : style.v) x = r.normal();

  Tape<double> t(&ps, nullptr);
  int out = fu.cross_attend(t, t.constant(e), t.constant(style));
  for (int i = 1; i < 5; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(t.val(out).at(i, j) == doctest::Approx(t.val(out).at(0, j))
                                       .epsilon(1e-12));
}

TEST_CASE("zeroed style tokens collapse the cross stage to its biases") {
  // freshly constructed biases are zero, so the output must be exactly zero
  ModelDims d = fusion_dims(8, 2);
  ParamStore<double> ps;
  Fusion<double> fu(ps, "f", d);
  ps.finalize();
  ps.init_params(Rng(116));  // weights random, every bias still zero

  Rng r(117);
  Tensor<double> e({4, 8});
  for (auto& x : e.v) x = r.normal();
  Tensor<double> zero({3, 8});

  Tape<double> t(&ps, nullptr);
  int out = fu.cross_attend(t, t.constant(e), t.constant(zero));
  for (auto v : t.val(out).v) CHECK(v == 0.0);
}

TEST_CASE("self stage on cancelling inputs collapses to its biases") {
  ModelDims d = fusion_dims(8, 2);
  ParamStore<double> ps;
  Fusion<double> fu(ps, "f", d);
  ps.finalize();
  ps.init_params(Rng(118));

  Rng r(119);
  Tensor<double> e({4, 8}), o({4, 8});
  for (size_t i = 0; i < e.numel(); ++i) {
    e[i] = r.normal();
    o[i] = -e[i];
  }
  Tape<double> t(&ps, nullptr);
  int out = fu.self_attend(t, t.constant(o), t.constant(e));
  for (auto v : t.val(out).v) CHECK(v == 0.0);
}

TEST_CASE("fusion permutation structure") {
  ModelDims d = fusion_dims(8, 2);
  ParamStore<double> ps;
  Fusion<double> fu(ps, "f", d);
  ps.finalize();
  ps.init_params(Rng(120));

  Rng r(121);
  Tensor<double> e({4, 8}), style({5, 8});
  for (auto& x : e.v) x = r.normal();
  for (auto& x : style.v) x = r.normal();

  SUBCASE("style token order is irrelevant to the cross stage") {
    std::vector<int> perm = {3, 0, 4, 2, 1};
    Tensor<double> sp({5, 8});
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 8; ++j) sp.at(i, j) = style.at(perm[size_t(i)], j);
    Tape<double> t(&ps, nullptr);
    int a = fu.cross_attend(t, t.constant(e), t.constant(style));
    int b = fu.cross_attend(t, t.constant(e), t.constant(sp));
    for (size_t i = 0; i < t.val(a).numel(); ++i)
      CHECK(t.val(a)[i] == doctest::Approx(t.val(b)[i]).epsilon(1e-12));
  }

  SUBCASE("the self stage is equivariant to token order") {
    Tensor<double> o({4, 8});
    for (auto& x : o.v) x = r.normal();
    std::vector<int> perm = {2, 0, 3, 1};
    Tensor<double> op({4, 8}), ep({4, 8});
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 8; ++j) {
        op.at(i, j) = o.at(perm[size_t(i)], j);
        ep.at(i, j) = e.at(perm[size_t(i)], j);
      }
    Tape<double> t(&ps, nullptr);
    int a = fu.self_attend(t, t.constant(o), t.constant(e));
    int b = fu.self_attend(t, t.constant(op), t.constant(ep));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 8; ++j)
        CHECK(t.val(b).at(i, j) ==
              doctest::Approx(t.val(a).at(perm[size_t(i)], j)).epsilon(1e-12));
  }
}

TEST_CASE("fusion handles a single content token") {
  ModelDims d = fusion_dims(8, 2);
  ParamStore<double> ps;
  Fusion<double> fu(ps, "f", d);
  ps.finalize();
  ps.init_params(Rng(122));

  Rng r(123);
  Tensor<double> e({1, 8}), style({3, 8});
  for (auto& x : e.v) x = r.normal();
  for (auto& x : style.v) x = r.normal();
  Tape<double> t(&ps, nullptr);
  int g = fu.forward(t, t.constant(e), t.constant(style));
  REQUIRE(t.val(g).shape == std::vector<int>{1, 8});
  for (auto v : t.val(g).v) CHECK(std::isfinite(v));
}

TEST_CASE("fusion rejects mismatched shapes") {
  ModelDims d = fusion_dims(8, 2);
  ParamStore<double> ps;
  Fusion<double> fu(ps, "f", d);
  ps.finalize();
  Tape<double> t(&ps, nullptr);
  int e = t.constant(Tensor<double>({2, 8}));
  int narrow = t.constant(Tensor<double>({3, 4}));
  CHECK_THROWS_AS(fu.cross_attend(t, e, narrow), DataError);
  int o = t.constant(Tensor<double>({3, 8}));
  CHECK_THROWS_AS(fu.self_attend(t, o, e), DataError);
}

TEST_CASE("fusion gradient check") {
  ModelDims d = fusion_dims(6, 2);
  ParamStore<double> ps;
  auto e_id = ps.add("e", {3, 6}, Init::XavierLinear);
  auto s_id = ps.add("s", {2, 6}, Init::XavierLinear);
  Fusion<double> fu(ps, "f", d);
  ps.finalize();
  ps.init_params(Rng(124));

  Rng tr(125);
  Tensor<double> target({3, 6});
  for (auto& x : target.v) x = tr.normal();

  auto build = [&](Tape<double>& t) {
    int g = fu.forward(t, t.param(e_id), t.param(s_id));
    return t.mse_to(g, target);
  };
  std::vector<double> grad(ps.size(), 0.0);
  Tape<double> t(&ps, &grad);
  Tensor<double> seed({1});
  seed[0] = 1.0;
  t.backward({{build(t), seed}});
  double h = 1e-5;
  for (size_t i = 0; i < ps.size(); ++i) {
    double orig = ps.raw()[i];
    ps.raw()[i] = orig + h;
    Tape<double> tp(&ps, nullptr);
    double lp = tp.val(build(tp))[0];
    ps.raw()[i] = orig - h;
    Tape<double> tm(&ps, nullptr);
    double lm = tm.val(build(tm))[0];
    ps.raw()[i] = orig;
    double fd = (lp - lm) / (2 * h);
    double diff = std::abs(fd - grad[i]);
    double bound = 1e-9 + 1e-5 * std::max(std::abs(fd), std::abs(grad[i]));
    REQUIRE(diff < bound);
  }
}

TEST_CASE("content encoder position wiring") {
  ModelDims d = ModelDims::tiny();
  ParamStore<double> ps;
  ContentEncoder<double> enc(ps, "ce", d);
  ps.finalize();
  ps.init_params(Rng(126));

  auto glyph = [&](char c) { return glyph_canvas(c).cast<double>(); };
  std::vector<Tensor<double>> ab = {glyph('a'), glyph('b')};
  std::vector<Tensor<double>> ba = {glyph('b'), glyph('a')};

  SUBCASE("without positions the stack is permutation equivariant") {
    enc.use_positions = false;
    Tape<double> t(&ps, nullptr);
    int x = enc.forward(t, ab);
    int y = enc.forward(t, ba);
    for (int j = 0; j < d.c; ++j) {
      CHECK(t.val(x).at(0, j) == doctest::Approx(t.val(y).at(1, j)).epsilon(1e-12));
      CHECK(t.val(x).at(1, j) == doctest::Approx(t.val(y).at(0, j)).epsilon(1e-12));
    }
  }

  SUBCASE("with positions the order changes the encoding") {
    Tape<double> t(&ps, nullptr);
    int x = enc.forward(t, ab);
    int y = enc.forward(t, ba);
    double diff = 0;
    for (int j = 0; j < d.c; ++j)
      diff += std::abs(t.val(x).at(0, j) - t.val(y).at(1, j));
    CHECK(diff > 1e-3);
  }

  SUBCASE("empty glyph list is a data error") {
    Tape<double> t(&ps, nullptr);
    CHECK_THROWS_AS(enc.forward(t, {}), DataError);
  }
}

TEST_CASE("style encoder validates the canvas and survives blank input") {
  ModelDims d = ModelDims::tiny();
  ParamStore<double> ps;
  StyleEncoder<double> enc(ps, "se", d);
  ps.finalize();
  ps.init_params(Rng(127));

  Tape<double> t(&ps, nullptr);
  CHECK_THROWS_AS(enc.forward(t, Tensor<double>({4, 16})), DataError);
  CHECK_THROWS_AS(enc.forward(t, Tensor<double>({8, 8})), DataError);

  int x = enc.forward(t, Tensor<double>({8, 16}));  // all zeros
  REQUIRE(t.val(x).shape == std::vector<int>{d.style_tokens(), d.c});
  for (auto v : t.val(x).v) CHECK(std::isfinite(v));
}

TEST_CASE("model condition shapes at the tiny scale") {
  ModelDims d = ModelDims::tiny();
  Model<double> m(d, Ablation::Full);
  Rng r(128);
  m.init(r);

  Rng ir(129);
  Tensor<double> img = random_canvas(ir, d.canvas_h, d.canvas_w);
  Tape<double> t = m.make_tape();
  CondNodes<double> cn = m.encode_condition(t, img, "ab");

  CHECK(t.val(cn.f_spa).shape == std::vector<int>{2, d.c});
  CHECK(t.val(cn.f_fre).shape == std::vector<int>{2, d.c});
  CHECK(t.val(cn.style_kv).shape == std::vector<int>{2, d.c});
  CHECK(t.val(cn.gate).shape == std::vector<int>{2, 1});
  CHECK(t.val(cn.g).shape == std::vector<int>{2, d.c});
  REQUIRE(t.val(cn.z).shape == std::vector<int>{1, d.p});
  double n = 0;
  for (auto v : t.val(cn.z).v) n += v * v;
  CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);

  // denoiser round trip on the same tape
  Tensor<double> xt({1, d.canvas_h, d.canvas_w});
  for (auto& v : xt.v) v = ir.normal();
  int x0 = m.predict_x0(t, t.constant(xt), 3, cn.g);
  CHECK(t.val(x0).shape == std::vector<int>{1, d.canvas_h, d.canvas_w});
  for (auto v : t.val(x0).v) CHECK(std::isfinite(v));
}

TEST_CASE("model rejects bad denoiser arguments") {
  ModelDims d = ModelDims::tiny();
  Model<double> m(d, Ablation::Full);
  Rng r(130);
  m.init(r);
  Rng ir(131);
  Tensor<double> img = random_canvas(ir, d.canvas_h, d.canvas_w);
  Tape<double> t = m.make_tape();
  CondNodes<double> cn = m.encode_condition(t, img, "a");
  int bad = t.constant(Tensor<double>({1, 4, 4}));
  CHECK_THROWS_AS(m.predict_x0(t, bad, 3, cn.g), DataError);
  int ok = t.constant(Tensor<double>({1, d.canvas_h, d.canvas_w}));
  CHECK_THROWS_AS(m.predict_x0(t, ok, 0, cn.g), UsageError);
}

TEST_CASE("model text validation") {
  ModelDims d = ModelDims::tiny();
  Model<double> m(d, Ablation::Full);
  CHECK_THROWS_AS(m.glyphs_of(""), DataError);
  CHECK_THROWS_AS(m.glyphs_of("a b"), DataError);
  CHECK_THROWS_AS(m.glyphs_of("A"), DataError);
  CHECK(m.glyphs_of("abc9").size() == 4);
}

TEST_CASE("ablation wiring") {
  ModelDims d = ModelDims::tiny();
  Rng ir(132);
  Tensor<double> img = random_canvas(ir, d.canvas_h, d.canvas_w);

  auto encode = [&](Ablation ab) {
    Model<double> m(d, ab);
    Rng r(133);
    m.init(r);
    Tape<double> t = m.make_tape();
    return std::pair{m.encode_style(t, img), std::move(t)};
  };

  SUBCASE("full keeps every branch") {
    auto [cn, t] = encode(Ablation::Full);
    CHECK(cn.f_fre != -1);
    CHECK(cn.gate != -1);
  }
  SUBCASE("no-gate bypasses the gate only") {
    auto [cn, t] = encode(Ablation::NoGate);
    CHECK(cn.gate == -1);
    CHECK(cn.f_fre != -1);
  }
  SUBCASE("no-lap drops the frequency branch") {
    auto [cn, t] = encode(Ablation::NoLap);
    CHECK(cn.f_fre == -1);
    CHECK(cn.gate != -1);
    // style tokens reduce to the gated spatial branch
    for (size_t i = 0; i < t.val(cn.style_kv).numel(); ++i)
      CHECK(t.val(cn.style_kv)[i] ==
            t.val(cn.f_spa)[i] * t.val(cn.gate)[i / size_t(d.c)]);
  }
  SUBCASE("no-lapnce keeps the branch but the loss is off") {
    auto [cn, t] = encode(Ablation::NoLapNCE);
    CHECK(cn.f_fre != -1);
  }
  SUBCASE("raw-nce contrasts the spatial features") {
    auto [cn, t] = encode(Ablation::RawNCE);
    CHECK(cn.f_fre == -1);
  }
  SUBCASE("contrastive objective toggles") {
    CHECK(Model<double>(d, Ablation::Full).contrastive_on());
    CHECK(Model<double>(d, Ablation::NoGate).contrastive_on());
    CHECK(Model<double>(d, Ablation::RawNCE).contrastive_on());
    CHECK_FALSE(Model<double>(d, Ablation::NoLap).contrastive_on());
    CHECK_FALSE(Model<double>(d, Ablation::NoLapNCE).contrastive_on());
  }
}

TEST_CASE("every ablation registers the same parameter layout") {
  ModelDims d = ModelDims::tiny();
  Model<double> ref(d, Ablation::Full);
  for (Ablation ab : {Ablation::NoGate, Ablation::NoLap, Ablation::NoLapNCE,
                      Ablation::RawNCE}) {
    Model<double> m(d, ab);
    REQUIRE(m.params().size() == ref.params().size());
    REQUIRE(m.params().n_entries() == ref.params().n_entries());
    for (int i = 0; i < ref.params().n_entries(); ++i) {
      CHECK(m.params().info(i).name == ref.params().info(i).name);
      CHECK(m.params().info(i).offset == ref.params().info(i).offset);
    }
  }
}

TEST_CASE("unused branches receive zero gradient") {
  ModelDims d = ModelDims::tiny();
  Model<double> m(d, Ablation::NoLap);
  Rng r(134);
  m.init(r);

  Rng ir(135);
  Tensor<double> img = random_canvas(ir, d.canvas_h, d.canvas_w);
  Tensor<double> target({2, d.c});
  for (auto& v : target.v) v = ir.normal();

  std::vector<double> grad(m.params().size(), 0.0);
  Tape<double> t = m.make_tape(&grad);
  CondNodes<double> cn = m.encode_condition(t, img, "ab");
  int loss = t.mse_to(cn.g, target);
  Tensor<double> seed({1});
  seed[0] = 1.0;
  t.backward({{loss, seed}});

  double fre_mass = 0, spa_mass = 0;
  for (const auto& e : m.params().entries()) {
    double s = 0;
    for (size_t i = 0; i < e.count; ++i) s += std::abs(grad[e.offset + i]);
    if (e.name.rfind("style_fre", 0) == 0) fre_mass += s;
    if (e.name.rfind("style_spa", 0) == 0) spa_mass += s;
  }
  CHECK(fre_mass == 0.0);
  CHECK(spa_mass > 0.0);
}

TEST_CASE("whole-model gradient check at the tiny scale") {
  // the exact training gradient path: reconstruction mse plus the
  // contrastive term seeded through the embedding nodes
  ModelDims d = ModelDims::tiny();
  Model<double> m(d, Ablation::Full);
  Rng r(136);
  m.init(r);
  // shrink to tame silu/attention curvature under finite differences
  for (auto& v : m.params().raw()) v *= 0.5;

  Rng ir(137);
  std::vector<Tensor<double>> imgs = {random_canvas(ir, 8, 16),
                                      random_canvas(ir, 8, 16)};
  std::vector<std::string> texts = {"ab", "cd"};
  std::vector<int> writers = {0, 0};
  std::vector<Tensor<double>> xts, targets;
  for (int s = 0; s < 2; ++s) {
    Tensor<double> xt({1, 8, 16}), tg({1, 8, 16});
    for (auto& v : xt.v) v = ir.normal();
    for (auto& v : tg.v) v = ir.normal();
    xts.push_back(std::move(xt));
    targets.push_back(std::move(tg));
  }
  double tau = 0.5;

  auto forward_loss = [&]() {
    Tape<double> t = m.make_tape();
    std::vector<Tensor<double>> zs;
    double loss = 0;
    for (int s = 0; s < 2; ++s) {
      CondNodes<double> cn = m.encode_condition(t, imgs[size_t(s)], texts[size_t(s)]);
      int x0 = m.predict_x0(t, t.constant(xts[size_t(s)]), 2, cn.g);
      loss += t.val(t.mse_to(x0, targets[size_t(s)]))[0];
      Tensor<double> z(std::vector<int>{d.p}, t.val(cn.z).v);
      zs.push_back(std::move(z));
    }
    loss += lap_nce_loss<double>(zs, writers, tau);
    return loss;
  };

  std::vector<double> grad(m.params().size(), 0.0);
  {
    Tape<double> t = m.make_tape(&grad);
    std::vector<std::pair<int, Tensor<double>>> seeds;
    std::vector<Tensor<double>> zs;
    std::vector<int> znodes;
    for (int s = 0; s < 2; ++s) {
      CondNodes<double> cn = m.encode_condition(t, imgs[size_t(s)], texts[size_t(s)]);
      int x0 = m.predict_x0(t, t.constant(xts[size_t(s)]), 2, cn.g);
      int mse = t.mse_to(x0, targets[size_t(s)]);
      Tensor<double> one({1});
      one[0] = 1.0;
      seeds.emplace_back(mse, one);
      zs.emplace_back(std::vector<int>{d.p}, t.val(cn.z).v);
      znodes.push_back(cn.z);
    }
    std::vector<Tensor<double>> dz;
    lap_nce_loss<double>(zs, writers, tau, &dz);
    for (int s = 0; s < 2; ++s)
      seeds.emplace_back(znodes[size_t(s)],
                         Tensor<double>(std::vector<int>{1, d.p}, dz[size_t(s)].v));
    t.backward(seeds);
  }

  // spot check a spread of parameters rather than all of them; every entry
  // type is hit because offsets stride across module boundaries
  double h = 1e-4;
  size_t n = m.params().size();
  size_t stride = std::max<size_t>(1, n / 300);
  for (size_t i = 0; i < n; i += stride) {
    double orig = m.params().raw()[i];
    m.params().raw()[i] = orig + h;
    double lp = forward_loss();
    m.params().raw()[i] = orig - h;
    double lm = forward_loss();
    m.params().raw()[i] = orig;
    double fd = (lp - lm) / (2 * h);
    double diff = std::abs(fd - grad[i]);
    double bound = 1e-8 + 1e-4 * std::max(std::abs(fd), std::abs(grad[i]));
    if (diff >= bound) {
      CAPTURE(i);
      CAPTURE(fd);
      CAPTURE(grad[i]);
    }
    REQUIRE(diff < bound);
  }
}

TEST_CASE("style embedding helper is deterministic and normalized") {
  ModelDims d = ModelDims::tiny();
  Model<double> m(d, Ablation::Full);
  Rng r(138);
  m.init(r);
  Rng ir(139);
  Tensor<double> img = random_canvas(ir, 8, 16);
  Tensor<double> a = m.style_embedding(img);
  Tensor<double> b = m.style_embedding(img);
  REQUIRE(a.shape == std::vector<int>{1, d.p});
  double n = 0;
  for (size_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] == b[i]);
    n += a[i] * a[i];
  }
  CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
}

TEST_CASE("ablation names round trip") {
  for (Ablation a : {Ablation::Full, Ablation::NoGate, Ablation::NoLap,
                     Ablation::NoLapNCE, Ablation::RawNCE})
    CHECK(ablation_parse(ablation_name(a)) == a);
  CHECK_THROWS_AS(ablation_parse("nolap"), UsageError);
  CHECK_THROWS_AS(ablation_parse(""), UsageError);
}

TEST_CASE("group count picks the largest divisor up to eight") {
  CHECK(gn_groups(128) == 8);
  CHECK(gn_groups(6) == 6);
  CHECK(gn_groups(7) == 7);
  CHECK(gn_groups(12) == 6);
  CHECK(gn_groups(1) == 1);
}
