#include <doctest.h>

#include <cmath>

#include "landseg/losses.hpp"
#include "landseg/rng.hpp"
#include "support/oracles.hpp"

using namespace landseg;

namespace {

Eigen::MatrixXd random_points(int n, int c, Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(n, c);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Eigen::MatrixXd random_unit_points(int n, int c, Rng& rng) {
  Eigen::MatrixXd m = random_points(n, c, rng);
  for (int i = 0; i < n; ++i) m.row(i) /= m.row(i).norm();
  return m;
}

}  // namespace

TEST_CASE("mfm_loss hand values") {
  SUBCASE("identical inputs give zero") {
    Rng rng(1);
    Eigen::MatrixXd a = random_points(3, 4, rng);
    CHECK(mfm_loss(a, a).value == 0.0);
  }
  SUBCASE("single element: values 3 and 1 give 4") {
    Eigen::MatrixXd r(1, 1), l(1, 1);
    r(0, 0) = 3.0;
    l(0, 0) = 1.0;
    const auto v = mfm_loss(r, l);
    CHECK_FALSE(v.skipped);
    CHECK(v.value == doctest::Approx(4.0).epsilon(1e-15));
  }
  SUBCASE("two elements with diffs (1,-1) average to 1") {
    Eigen::MatrixXd r(2, 1), l(2, 1);
    r(0, 0) = 2.0;
    l(0, 0) = 1.0;
    r(1, 0) = 0.0;
    l(1, 0) = 1.0;
    CHECK(mfm_loss(r, l).value == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("empty point sets are skipped with value 0") {
    Eigen::MatrixXd empty(0, 4);
    const auto v = mfm_loss(empty, empty);
    CHECK(v.skipped);
    CHECK(v.value == 0.0);
  }
  SUBCASE("shape mismatches are rejected") {
    Eigen::MatrixXd a(2, 3), b(2, 4);
    CHECK_THROWS(mfm_loss(a, b));
  }
}

TEST_CASE("mfm_loss gradient matches finite differences") {
  Rng rng(2);
  for (int inst = 0; inst < 20; ++inst) {
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const int c = 1 + static_cast<int>(rng.uniform_int(0, 4));
    Eigen::MatrixXd recon = random_points(n, c, rng);
    const Eigen::MatrixXd labels = random_points(n, c, rng);
    const Eigen::MatrixXd g = mfm_loss_grad(recon, labels);
    auto eval = [&]() { return mfm_loss(recon, labels).value; };
    CHECK(oracles::fd_max_rel_error(eval, recon.data(), static_cast<std::size_t>(recon.size()),
                                    g.data()) < 1e-4);
  }
}

TEST_CASE("mfm_pair_loss is an exact sum") {
  CHECK(mfm_pair_loss(0.0, 0.0) == 0.0);
  CHECK(mfm_pair_loss(4.0, 1.0) == 5.0);
  CHECK(mfm_pair_loss(0.25, 0.75) == 1.0);
  CHECK_THROWS(mfm_pair_loss(-1.0, 0.0));
}

TEST_CASE("supcon_loss worked example: two identical positives, one orthogonal negative") {
  // The independent term-by-term oracle confirms the expected value first.
  Eigen::MatrixXd pos(2, 3), neg(1, 3);
  pos << 1, 0, 0, 1, 0, 0;
  neg << 0, 1, 0;
  const double oracle = oracles::supcon_bruteforce(pos, neg, 1.0);
  const double expected = std::log1p(std::exp(-1.0));  // -log(e/(e+1)), frozen by hand
  CHECK(oracle == doctest::Approx(expected).epsilon(1e-12));
  const auto lv = supcon_loss({pos, neg, 1.0});
  CHECK_FALSE(lv.skipped);
  CHECK(std::abs(lv.value - oracle) < 1e-12);
  CHECK(std::abs(lv.value - 0.31326168751822286) < 1e-6);
}

TEST_CASE("supcon_loss worked example: mutually orthogonal points give log 3") {
  Eigen::MatrixXd pos(2, 4), neg(2, 4);
  pos << 1, 0, 0, 0, 0, 1, 0, 0;
  neg << 0, 0, 1, 0, 0, 0, 0, 1;
  const double oracle = oracles::supcon_bruteforce(pos, neg, 1.0);
  CHECK(oracle == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  const auto lv = supcon_loss({pos, neg, 1.0});
  CHECK(std::abs(lv.value - oracle) < 1e-12);
  CHECK(std::abs(lv.value - 1.0986122886681098) < 1e-6);
}

TEST_CASE("supcon_loss worked example: tau -> infinity drives every term to log(N+1)") {
  Rng rng(3);
  const Eigen::MatrixXd pos = random_unit_points(2, 5, rng);
  const Eigen::MatrixXd neg = random_unit_points(2, 5, rng);
  const double tau = 1e6;
  const double oracle = oracles::supcon_bruteforce(pos, neg, tau);
  const auto lv = supcon_loss({pos, neg, tau});
  CHECK(std::abs(lv.value - oracle) < 1e-9);
  // each anchor contributes (1/2) * log(1 + N) with N = 2 negatives
  CHECK(std::abs(lv.value - std::log(3.0)) < 1e-5);
}

TEST_CASE("supcon_loss agrees with the brute-force oracle on random sets") {
  Rng rng(4);
  for (int inst = 0; inst < 30; ++inst) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 4));
    const int m = 1 + static_cast<int>(rng.uniform_int(0, 5));
    const int c = 2 + static_cast<int>(rng.uniform_int(0, 3));
    const double tau = std::vector<double>{0.07, 0.5, 1.0}[static_cast<std::size_t>(rng.uniform_int(0, 2))];
    const Eigen::MatrixXd pos = random_unit_points(n, c, rng);
    const Eigen::MatrixXd neg = random_unit_points(m, c, rng);
    const double oracle = oracles::supcon_bruteforce(pos, neg, tau);
    const auto lv = supcon_loss({pos, neg, tau});
    CHECK(lv.value == doctest::Approx(oracle).epsilon(1e-10));
    CHECK(lv.value > 0.0);
  }
}

TEST_CASE("supcon_loss degenerate inputs") {
  Rng rng(5);
  const Eigen::MatrixXd one = random_unit_points(1, 3, rng);
  const Eigen::MatrixXd neg = random_unit_points(2, 3, rng);
  const auto lv = supcon_loss({one, neg, 0.07});
  CHECK(lv.skipped);
  CHECK(lv.value == 0.0);
  const Eigen::MatrixXd two = random_unit_points(2, 3, rng);
  CHECK_THROWS(supcon_loss({two, neg, 0.0}));
  CHECK_THROWS(supcon_loss({two, neg, -1.0}));
}

TEST_CASE("supcon_loss is invariant under row permutations") {
  Rng rng(6);
  const Eigen::MatrixXd pos = random_unit_points(5, 4, rng);
  const Eigen::MatrixXd neg = random_unit_points(5, 4, rng);
  const double base = supcon_loss({pos, neg, 0.1}).value;

  Eigen::MatrixXd pos_perm(5, 4), neg_perm(5, 4);
  const int perm[5] = {3, 0, 4, 2, 1};
  for (int i = 0; i < 5; ++i) {
    pos_perm.row(i) = pos.row(perm[i]);
    neg_perm.row(i) = neg.row(perm[i]);
  }
  CHECK(std::abs(supcon_loss({pos_perm, neg_perm, 0.1}).value - base) < 1e-10);
}

TEST_CASE("supcon_loss never decreases when an anchor-negative product grows") {
  // Positives are orthonormal basis rows, negatives live in their span, so
  // one coefficient is exactly one inner product and nothing else moves.
  Rng rng(7);
  const int n = 3, m = 3;
  Eigen::MatrixXd pos = Eigen::MatrixXd::Identity(n, n);
  for (int probe = 0; probe < 20; ++probe) {
    Eigen::MatrixXd coeffs = random_points(m, n, rng, 0.4);
    Eigen::MatrixXd neg = coeffs;  // row k has inner products coeffs(k, i) with pos_i
    const double base = supcon_loss({pos, neg, 0.3}).value;
    const int k = static_cast<int>(rng.uniform_int(0, m - 1));
    const int i = static_cast<int>(rng.uniform_int(0, n - 1));
    neg(k, i) += 0.2;  // increase x_i . neg_k only
    const double bumped = supcon_loss({pos, neg, 0.3}).value;
    CHECK(bumped >= base - 1e-12);
  }
}

TEST_CASE("supcon_loss gradients match finite differences") {
  Rng rng(8);
  for (int inst = 0; inst < 20; ++inst) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 2));
    const int m = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const int c = 2 + static_cast<int>(rng.uniform_int(0, 3));
    const double tau = inst % 2 == 0 ? 0.5 : 0.07;
    Eigen::MatrixXd pos = random_points(n, c, rng, 0.5);
    Eigen::MatrixXd neg = random_points(m, c, rng, 0.5);
    SupconGrads grads;
    supcon_loss({pos, neg, tau}, &grads);
    auto eval = [&]() { return supcon_loss({pos, neg, tau}).value; };
    CHECK(oracles::fd_max_rel_error(eval, pos.data(), static_cast<std::size_t>(pos.size()),
                                    grads.d_positives.data()) < 1e-4);
    CHECK(oracles::fd_max_rel_error(eval, neg.data(), static_cast<std::size_t>(neg.size()),
                                    grads.d_negatives.data()) < 1e-4);
  }
}

TEST_CASE("normalize_rows gradient matches finite differences") {
  Rng rng(9);
  for (int inst = 0; inst < 10; ++inst) {
    Eigen::MatrixXd raw = random_points(3, 4, rng);
    const Eigen::MatrixXd probe = random_points(3, 4, rng);
    const Eigen::MatrixXd g = normalize_rows_grad(raw, probe);
    auto eval = [&]() {
      const Eigen::MatrixXd y = normalize_rows(raw);
      return (y.array() * probe.array()).sum();
    };
    CHECK(oracles::fd_max_rel_error(eval, raw.data(), static_cast<std::size_t>(raw.size()), g.data()) <
          1e-4);
  }
}

TEST_CASE("sfce_loss skips empty plans and doubles identical sets") {
  Rng rng(10);
  GatheredPoints empty{Eigen::MatrixXd(0, 4), Eigen::MatrixXd(0, 4)};
  const auto zero = sfce_loss(empty, empty, empty, empty, 0.07);
  CHECK(zero.skipped);
  CHECK(zero.value == 0.0);

  GatheredPoints s{random_unit_points(2, 4, rng), random_unit_points(2, 4, rng)};
  GatheredPoints t{random_unit_points(2, 4, rng), random_unit_points(2, 4, rng)};
  // student_1 == student_2 and teacher_1 == teacher_2 makes set A == set B
  const auto res = sfce_loss(s, t, s, t, 0.07);
  ContrastSet a;
  a.positives = Eigen::MatrixXd(4, 4);
  a.positives << s.edge, t.edge;
  a.negatives = Eigen::MatrixXd(4, 4);
  a.negatives << s.back, t.back;
  a.tau = 0.07;
  CHECK(res.value == doctest::Approx(2.0 * supcon_loss(a).value).epsilon(1e-12));

  // one empty plan silences both cross sets
  const auto half = sfce_loss(s, empty, empty, t, 0.07);
  CHECK(half.skipped);
  CHECK(half.value == 0.0);
}

TEST_CASE("sfce_loss equals the term-by-term oracle on hand-built sets") {
  Rng rng(11);
  GatheredPoints s1{random_unit_points(2, 5, rng), random_unit_points(2, 5, rng)};
  GatheredPoints t2{random_unit_points(2, 5, rng), random_unit_points(2, 5, rng)};
  GatheredPoints s2{random_unit_points(2, 5, rng), random_unit_points(2, 5, rng)};
  GatheredPoints t1{random_unit_points(2, 5, rng), random_unit_points(2, 5, rng)};
  const double tau = 0.2;

  Eigen::MatrixXd pos_a(4, 5), neg_a(4, 5), pos_b(4, 5), neg_b(4, 5);
  pos_a << s1.edge, t2.edge;
  neg_a << s1.back, t2.back;
  pos_b << s2.edge, t1.edge;
  neg_b << s2.back, t1.back;
  const double oracle =
      oracles::supcon_bruteforce(pos_a, neg_a, tau) + oracles::supcon_bruteforce(pos_b, neg_b, tau);
  const auto res = sfce_loss(s1, t2, s2, t1, tau);
  CHECK(res.value == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("sfce_loss student gradients match finite differences through normalization") {
  Rng rng(12);
  for (int inst = 0; inst < 5; ++inst) {
    Eigen::MatrixXd raw_e1 = random_points(2, 4, rng);
    Eigen::MatrixXd raw_b1 = random_points(2, 4, rng);
    const GatheredPoints t2{random_unit_points(2, 4, rng), random_unit_points(2, 4, rng)};
    const GatheredPoints s2{random_unit_points(2, 4, rng), random_unit_points(2, 4, rng)};
    const GatheredPoints t1{random_unit_points(2, 4, rng), random_unit_points(2, 4, rng)};
    const double tau = 0.3;

    auto eval = [&]() {
      GatheredPoints s1{normalize_rows(raw_e1), normalize_rows(raw_b1)};
      return sfce_loss(s1, t2, s2, t1, tau).value;
    };
    GatheredPoints s1{normalize_rows(raw_e1), normalize_rows(raw_b1)};
    SfceGrads grads;
    sfce_loss(s1, t2, s2, t1, tau, &grads);
    const Eigen::MatrixXd ge = normalize_rows_grad(raw_e1, grads.d_student1_edge);
    const Eigen::MatrixXd gb = normalize_rows_grad(raw_b1, grads.d_student1_back);
    CHECK(oracles::fd_max_rel_error(eval, raw_e1.data(), static_cast<std::size_t>(raw_e1.size()),
                                    ge.data()) < 1e-4);
    CHECK(oracles::fd_max_rel_error(eval, raw_b1.data(), static_cast<std::size_t>(raw_b1.size()),
                                    gb.data()) < 1e-4);
  }
}

TEST_CASE("ce_loss hand values") {
  BinaryMask ones(1, 1);
  ones.at(0, 0) = 1;
  BinaryMask zeros(1, 1);

  Tensor nearly_one({1, 1});
  nearly_one[0] = 1.0 - 1e-7;
  CHECK(ce_loss(nearly_one, ones) < 1e-6);

  Tensor half({1, 1});
  half[0] = 0.5;
  CHECK(ce_loss(half, ones) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(ce_loss(half, zeros) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor wrong_shape({2, 1});
  CHECK_THROWS(ce_loss(wrong_shape, ones));
}

TEST_CASE("ce_loss gradient matches finite differences") {
  Rng rng(13);
  for (int inst = 0; inst < 20; ++inst) {
    const int h = 2 + static_cast<int>(rng.uniform_int(0, 2));
    const int w = 2 + static_cast<int>(rng.uniform_int(0, 2));
    Tensor pred({h, w});
    BinaryMask target(h, w);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = 0.05 + 0.9 * rng.uniform();
      target.v[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    const Tensor g = ce_loss_grad(pred, target);
    auto eval = [&]() { return ce_loss(pred, target); };
    CHECK(oracles::fd_max_rel_error(eval, pred.data(), pred.size(), g.data()) < 1e-4);
  }
}

TEST_CASE("joint_loss is the exact weighted sum, including ablation presets") {
  const LossBundle b = joint_loss(1.0, 2.0, 3.0, {1.0, 1.0, 1.0});
  CHECK(b.total == 6.0);

  const LossBundle seg_only = joint_loss(1.0, 2.0, 3.0, {0.0, 0.0, 1.0});
  CHECK(seg_only.total == 3.0);  // pure segmentation mode (arm B)

  const LossBundle bm = joint_loss(1.0, 2.0, 3.0, {1.0, 0.0, 1.0});
  CHECK(bm.total == 4.0);  // arm B+M

  // linearity in each component
  Rng rng(14);
  for (int i = 0; i < 20; ++i) {
    const double lr = rng.uniform(), lc = rng.uniform(), lce = rng.uniform();
    const LossWeights w{rng.uniform(), rng.uniform(), rng.uniform()};
    const double scale = 1.0 + rng.uniform();
    const LossBundle base = joint_loss(lr, lc, lce, w);
    const LossBundle scaled = joint_loss(scale * lr, lc, lce, w);
    CHECK(scaled.total - base.total ==
          doctest::Approx(w.alpha * (scale - 1.0) * lr).epsilon(1e-12));
  }
  CHECK_THROWS(joint_loss(-0.1, 0.0, 0.0, {1, 1, 1}));
}
