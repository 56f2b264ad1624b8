#include <cmath>
#include <vector>

#include "csenn/losses.hpp"
#include "doctest_torch.hpp"
#include "oracles.hpp"

using namespace csenn;

namespace {

torch::Tensor d64(std::vector<double> v, std::vector<std::int64_t> shape) {
  return torch::tensor(v, torch::kDouble).view(shape);
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("classification loss") {
  SUBCASE("saturated logits give ~0") {
    auto labels = d64({1, 0, 0, 1}, {2, 2});
    auto logits = (labels * 2 - 1) * 50;
    CHECK(classification_loss(logits, labels).item<double>() < 1e-20);
  }
  SUBCASE("matches elementwise BCE") {
    auto logits = torch::randn({4, 4}, torch::kDouble);
    auto labels = (torch::rand({4, 4}, torch::kDouble) > 0.5).to(torch::kDouble);
    double ref = 0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const double z = logits[i][j].item<double>();
        const double y = labels[i][j].item<double>();
        const double p = 1.0 / (1.0 + std::exp(-z));
        ref += -(y * std::log(p) + (1 - y) * std::log(1 - p));
      }
    CHECK(classification_loss(logits, labels).item<double>() == doctest::Approx(ref / 16).epsilon(1e-10));
  }
  SUBCASE("gradient matches finite differences") {
    auto logits = torch::randn({3, 4}, torch::kDouble);
    auto labels = (torch::rand({3, 4}, torch::kDouble) > 0.5).to(torch::kDouble);
    auto leaf = logits.clone().requires_grad_(true);
    auto g = torch::autograd::grad({classification_loss(leaf, labels)}, {leaf})[0];
    auto fd = oracle::fd_gradient(
        [&](const torch::Tensor& t) { return classification_loss(t, labels).item<double>(); }, logits.clone());
    CHECK(oracle::rel_err(g, fd) < 1e-4);
  }
  CHECK_THROWS_AS(classification_loss(torch::zeros({2, 4}), torch::zeros({2, 3})), ShapeError);
}

TEST_CASE("discriminator loss") {
  CHECK(discriminator_loss(1.0, 0.0) == 0.0);
  CHECK(discriminator_loss(0.0, 1.0) == 2.0);
  CHECK(discriminator_loss(0.5, 0.5) == 0.5);
  auto d = torch::tensor({0.3, 0.9}, torch::kDouble);
  auto dm = torch::tensor({0.2, 0.6}, torch::kDouble);
  const double ref = (discriminator_loss(0.3, 0.2) + discriminator_loss(0.9, 0.6)) / 2;
  CHECK(discriminator_loss(d, dm).item<double>() == doctest::Approx(ref).epsilon(1e-14));

  auto leaf = d.clone().requires_grad_(true);
  auto g = torch::autograd::grad({discriminator_loss(leaf, dm)}, {leaf})[0];
  auto fd = oracle::fd_gradient([&](const torch::Tensor& t) { return discriminator_loss(t, dm).item<double>(); },
                                d.clone());
  CHECK(oracle::rel_err(g, fd) < 1e-4);
}

TEST_CASE("theta stability") {
  SUBCASE("linear concepts and constant theta give zero") {
    auto c = oracle::desk_config(Variant::CSenn);
    c.concept_head = HeadKind::Linear;
    c.relevance_head = HeadKind::Constant;
    auto m = oracle::desk_model(c);
    auto h = m->encode_intermediate(oracle::desk_images(3));
    CHECK(theta_stability_loss(m, {h.map.detach()}).item<double>() < 1e-9);
  }
  SUBCASE("input-dependent theta and nonlinear concepts give a positive loss") {
    auto m = oracle::desk_model(oracle::desk_config(Variant::CSenn));
    auto h = m->encode_intermediate(oracle::desk_images(2));
    CHECK(theta_stability_loss(m, {h.map.detach()}).item<double>() > 0.0);
  }
  SUBCASE("value matches a finite-difference residual") {
    auto m = oracle::desk_model(oracle::desk_config(Variant::CSenn));
    auto h = m->encode_intermediate(oracle::desk_images(2)).map.detach().clone();
    double ref = 0;
    for (std::int64_t b = 0; b < 2; ++b) {
      auto hb = h.narrow(0, b, 1).clone();
      auto theta0 = m->relevance({hb}).weights[0].detach();  // D_c x k
      for (int j = 0; j < 4; ++j) {
        auto grad_f = oracle::fd_gradient(
            [&](const torch::Tensor& t) { return m->forward_features({t}).logits[0][j].item<double>(); },
            hb.clone());
        auto product = torch::zeros_like(hb);
        for (int i = 0; i < 3; ++i) {
          auto grad_c = oracle::fd_gradient(
              [&](const torch::Tensor& t) { return m->encode_concepts({t}).values[0][i].item<double>(); },
              hb.clone());
          product += theta0[i][j].item<double>() * grad_c;
        }
        ref += (grad_f - product).pow(2).sum().item<double>();
      }
    }
    ref /= 2;
    const double got = theta_stability_loss(m, {h}).item<double>();
    CHECK(std::abs(got - ref) / ref < 1e-4);
  }
  SUBCASE("gradient w.r.t. the feature matches finite differences") {
    auto m = oracle::desk_model(oracle::desk_config(Variant::CSenn));
    auto h = m->encode_intermediate(oracle::desk_images(1)).map.detach().clone();
    auto leaf = h.clone().requires_grad_(true);
    auto g = torch::autograd::grad({theta_stability_loss(m, {leaf})}, {leaf})[0];
    auto fd = oracle::fd_gradient(
        [&](const torch::Tensor& t) { return theta_stability_loss(m, {t.clone()}).item<double>(); }, h.clone());
    CHECK(oracle::rel_err(g, fd) < 1e-4);
  }
  SUBCASE("vanilla has no concepts") {
    auto m = oracle::desk_model(oracle::desk_config(Variant::Vanilla));
    CHECK_THROWS_AS(theta_stability_loss(m, {torch::zeros({1, 4, 2, 2}, torch::kDouble)}), ConfigError);
  }
}

TEST_CASE("supervised contrastive loss") {
  SUBCASE("equal similarities give ln M") {
    // Three identical rows: the anchor sees M = 2 other pool rows.
    auto pool = d64({1, 0, 1, 0, 1, 0}, {3, 2});
    auto v = scl_loss(pool, {0, 1}, {{1}, {2}}, 0.1);
    CHECK(v.item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("one positive and one negative at equal similarity, tau 1") {
    auto pool = d64({1, 0, 0, 1, 0, -1}, {3, 2});
    auto v = scl_loss(pool, {0}, {{1}}, 1.0);
    CHECK(v.item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("three-sample batch matches the term-by-term oracle") {
    const double s = 1.0 / std::sqrt(2.0);
    std::vector<std::vector<double>> orig{{1, 0}, {s, s}, {0, 1}};
    std::vector<std::vector<double>> masked{{0.8, 0.6}, {0.6, 0.8}, {-0.6, 0.8}};
    std::vector<std::vector<int>> labels{{1, 0}, {1, 0}, {0, 1}};
    ContrastiveBatch batch{d64({1, 0, s, s, 0, 1}, {3, 2}), d64({0.8, 0.6, 0.6, 0.8, -0.6, 0.8}, {3, 2}),
                           d64({1, 0, 1, 0, 0, 1}, {3, 2})};
    for (double tau : {0.1, 0.5, 1.0}) {
      const double ref = oracle::scl_reference(orig, masked, labels, tau);
      CHECK(std::abs(scl_loss(batch, tau).item<double>() - ref) < 1e-10);
    }
    const double ref_sum = 3 * oracle::scl_reference(orig, masked, labels, 0.1);
    CHECK(std::abs(scl_loss(batch, 0.1, SclReduction::Sum).item<double>() - ref_sum) < 1e-10);
  }
  SUBCASE("non-negative on random batches") {
    for (int trial = 0; trial < 20; ++trial) {
      ContrastiveBatch batch{torch::randn({6, 5}, torch::kDouble), torch::randn({6, 5}, torch::kDouble),
                             (torch::rand({6, 2}, torch::kDouble) > 0.5).to(torch::kDouble)};
      CHECK(scl_loss(batch, 0.1).item<double>() >= 0.0);
    }
  }
  SUBCASE("increasing a positive's similarity decreases the loss") {
    double prev = 1e300;
    for (double a : {0.0, 0.3, 0.6, 0.9}) {
      // Row 1 is the only positive of anchor 0 and rotates toward it.
      auto pool = d64({1, 0, std::cos(1.2 - a), std::sin(1.2 - a), -1, 0.2}, {3, 2});
      const double v = scl_loss(pool, {0}, {{1}}, 0.5).item<double>();
      CHECK(v < prev);
      prev = v;
    }
  }
  SUBCASE("gradient matches finite differences through the normalization") {
    auto labels = d64({1, 0, 1, 0, 0, 1, 0, 1}, {4, 2});
    auto c = torch::randn({4, 3}, torch::kDouble);
    auto cm = torch::randn({4, 3}, torch::kDouble);
    auto leaf = c.clone().requires_grad_(true);
    auto g = torch::autograd::grad({scl_loss(ContrastiveBatch{leaf, cm, labels}, 0.1)}, {leaf})[0];
    auto fd = oracle::fd_gradient(
        [&](const torch::Tensor& t) { return scl_loss(ContrastiveBatch{t, cm, labels}, 0.1).item<double>(); },
        c.clone());
    CHECK(oracle::rel_err(g, fd) < 1e-4);
  }
  SUBCASE("zero-norm concept is rejected") {
    ContrastiveBatch batch{d64({1, 0, 0, 0}, {2, 2}), d64({1, 1, 1, 1}, {2, 2}), d64({1, 0}, {2, 1})};
    CHECK_THROWS_AS(scl_loss(batch, 0.1), DegenerateColumnError);
  }
}

TEST_CASE("cross-correlation") {
  SUBCASE("orthogonal columns give the identity") {
    auto c = d64({1, 0, 0, 2}, {2, 2});
    CHECK(torch::allclose(cross_correlation(c, c), torch::eye(2, torch::kDouble)));
  }
  SUBCASE("negation flips the diagonal") {
    auto c = torch::randn({5, 3}, torch::kDouble);
    auto r = cross_correlation(c, -c);
    CHECK(torch::allclose(r.diagonal(), -torch::ones({3}, torch::kDouble)));
  }
  SUBCASE("hand example") {
    auto c = d64({1, -1, -1, 1}, {2, 2});
    CHECK(torch::allclose(cross_correlation(c, c), d64({1, -1, -1, 1}, {2, 2})));
  }
  SUBCASE("uncentered cosine against explicit sums") {
    auto c = torch::randn({7, 3}, torch::kDouble);
    auto m = torch::randn({7, 3}, torch::kDouble);
    auto r = cross_correlation(c, m);
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) {
        double num = 0, nc = 0, nm = 0;
        for (int i = 0; i < 7; ++i) {
          num += c[i][j].item<double>() * m[i][k].item<double>();
          nc += c[i][j].item<double>() * c[i][j].item<double>();
          nm += m[i][k].item<double>() * m[i][k].item<double>();
        }
        CHECK(std::abs(r[j][k].item<double>() - num / std::sqrt(nc * nm)) < 1e-12);
      }
  }
  SUBCASE("invariant to positive column rescaling") {
    auto c = torch::randn({6, 4}, torch::kDouble);
    auto m = torch::randn({6, 4}, torch::kDouble);
    auto scale = torch::rand({1, 4}, torch::kDouble) * 10 + 0.1;
    CHECK(oracle::rel_err(cross_correlation(c * scale, m), cross_correlation(c, m)) < 1e-10);
    CHECK(oracle::rel_err(cross_correlation(c, m * scale), cross_correlation(c, m)) < 1e-10);
  }
  SUBCASE("zero column names its index") {
    auto c = d64({1, 0, 2, 0}, {2, 2});
    try {
      cross_correlation(c, torch::ones({2, 2}, torch::kDouble));
      FAIL("expected DegenerateColumnError");
    } catch (const DegenerateColumnError& e) {
      CHECK(e.column() == 1);
    }
  }
}

TEST_CASE("Barlow Twins loss") {
  CHECK(bt_loss(torch::eye(5, torch::kDouble), 0.1).item<double>() == 0.0);
  CHECK(bt_loss(d64({1, -1, -1, 1}, {2, 2}), 0.1).item<double>() == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(bt_loss(-torch::eye(21, torch::kDouble), 0.1).item<double>() == doctest::Approx(84.0).epsilon(1e-14));
  CHECK_THROWS_AS(bt_loss(torch::zeros({2, 3}), 0.1), ShapeError);

  SUBCASE("zero only at the identity") {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        auto r = torch::eye(3, torch::kDouble);
        r[i][j] += 1e-3;
        const double bound = i == j ? 1e-6 : 0.1 * 1e-6;
        CHECK(bt_loss(r, 0.1).item<double>() >= bound * (1 - 1e-9));
      }
  }
  SUBCASE("gradient through the cross-correlation matches finite differences") {
    auto c = torch::randn({6, 3}, torch::kDouble);
    auto m = torch::randn({6, 3}, torch::kDouble);
    auto leaf = c.clone().requires_grad_(true);
    auto g = torch::autograd::grad({bt_loss(cross_correlation(leaf, m), 0.1)}, {leaf})[0];
    auto fd = oracle::fd_gradient(
        [&](const torch::Tensor& t) { return bt_loss(cross_correlation(t, m), 0.1).item<double>(); }, c.clone());
    CHECK(oracle::rel_err(g, fd) < 1e-4);
  }
}

TEST_CASE("composite objectives") {
  auto t = [](double v) { return torch::tensor(v, torch::kDouble); };
  const auto paper = LossWeights::for_variant(Variant::CSenn);
  CHECK(paper.beta == 0.01);
  CHECK(paper.lambda_bt_offdiag == 0.1);
  CHECK(paper.lambda_scl == 1.0);
  CHECK(paper.lambda_bt == 0.001);

  SUBCASE("csenn bookkeeping") {
    LossTerms terms{t(1.0), std::nullopt, t(0.5), t(0.7), t(84.0), std::nullopt};
    auto obj = csenn_total(terms, paper);
    CHECK(std::abs(obj.breakdown.total - 1.789) < 1e-12);
    CHECK(std::abs(obj.total.item<double>() - 1.789) < 1e-12);
    CHECK(std::abs(recompute_total(obj.breakdown, paper) - obj.breakdown.total) < 1e-12);
    CHECK_FALSE(obj.breakdown.discriminator.has_value());

    LossWeights only_y = paper;
    only_y.beta = only_y.lambda_scl = only_y.lambda_bt = 0;
    CHECK(csenn_total(terms, only_y).breakdown.total == 1.0);

    terms.discriminator = t(0.1);
    CHECK_THROWS_AS(csenn_total(terms, paper), ConfigError);
  }
  SUBCASE("sc-senn drops the BT term") {
    LossTerms terms{t(1.0), std::nullopt, t(0.5), t(0.7), std::nullopt, std::nullopt};
    auto w = LossWeights::for_variant(Variant::ScSenn);
    CHECK(std::abs(csenn_total(terms, w).breakdown.total - 1.705) < 1e-12);
    CHECK_FALSE(csenn_total(terms, w).breakdown.bt.has_value());
    CHECK_THROWS_AS(csenn_total(terms, paper), ConfigError);
  }
  SUBCASE("msenn bookkeeping") {
    LossTerms terms{t(1.0), t(0.5), t(0.2), std::nullopt, std::nullopt, std::nullopt};
    LossWeights w = LossWeights::for_variant(Variant::MSenn);
    w.alpha = 1.0;
    CHECK(std::abs(msenn_total(terms, w).breakdown.total - 1.502) < 1e-12);
    w.alpha = w.beta = 0.0;
    CHECK(msenn_total(terms, w).breakdown.total == 1.0);
    auto bd = msenn_total(terms, w).breakdown;
    CHECK_FALSE(bd.scl.has_value());
    CHECK_FALSE(bd.bt.has_value());
    terms.theta_stability.reset();
    CHECK_THROWS_AS(msenn_total(terms, w), ConfigError);
  }
  SUBCASE("weights validate") {
    LossWeights w;
    w.tau = 0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w.tau = 0.1;
    w.beta = -1;
    CHECK_THROWS_AS(w.validate(), ConfigError);
  }
}

}  // TEST_SUITE
