#include "landseg/losses.hpp"

#include <cmath>

namespace landseg {

LossValue mfm_loss(const Eigen::MatrixXd& reconstructed, const Eigen::MatrixXd& labels) {
  check(reconstructed.rows() == labels.rows() && reconstructed.cols() == labels.cols(),
        "mfm_loss: shape mismatch");
  if (reconstructed.rows() == 0) return {0.0, true};
  const double n = static_cast<double>(reconstructed.size());
  const double sq = (reconstructed - labels).squaredNorm();
  return {sq / n, false};
}

Eigen::MatrixXd mfm_loss_grad(const Eigen::MatrixXd& reconstructed, const Eigen::MatrixXd& labels) {
  check(reconstructed.rows() == labels.rows() && reconstructed.cols() == labels.cols(),
        "mfm_loss_grad: shape mismatch");
  if (reconstructed.rows() == 0) return reconstructed;
  return 2.0 / static_cast<double>(reconstructed.size()) * (reconstructed - labels);
}

double mfm_pair_loss(double loss_1, double loss_2) {
  check(loss_1 >= 0.0 && loss_2 >= 0.0, "mfm_pair_loss: losses must be non-negative");
  return loss_1 + loss_2;
}

LossValue supcon_loss(const ContrastSet& set, SupconGrads* grads) {
  check(set.tau > 0.0, "supcon_loss: tau must be positive");
  const Eigen::Index n = set.positives.rows();
  const Eigen::Index m = set.negatives.rows();
  if (n < 2) return {0.0, true};
  check(m >= 1, "supcon_loss: at least one negative required");
  check(set.positives.cols() == set.negatives.cols(), "supcon_loss: feature dim mismatch");

  const double inv_tau = 1.0 / set.tau;
  const Eigen::MatrixXd s = set.positives * set.positives.transpose() * inv_tau;  // n x n
  const Eigen::MatrixXd t = set.positives * set.negatives.transpose() * inv_tau;  // n x m

  // Log-sum-exp over each anchor's negative row, reused by every (i,j) pair.
  Eigen::VectorXd neg_max(n), neg_lse(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = t.row(i).maxCoeff();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) acc += std::exp(t(i, k) - mx);
    neg_max(i) = mx;
    neg_lse(i) = mx + std::log(acc);
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;

  Eigen::MatrixXd gs, gt;  // d loss / d s(i,j), d loss / d t(i,k)
  Eigen::VectorXd denom_recip_sum;
  if (grads) {
    gs = Eigen::MatrixXd::Zero(n, n);
    denom_recip_sum = Eigen::VectorXd::Zero(n);  // sum_{j != i} exp(-logD_ij), scaled later
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      // logD = log(exp(s_ij) + sum_k exp(t_ik)) via pairwise LSE
      const double a = s(i, j);
      const double b = neg_lse(i);
      const double mx = std::max(a, b);
      const double log_d = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
      loss += -inv_n * (a - log_d);
      if (grads) {
        const double p = std::exp(a - log_d);  // positive share of the denominator
        gs(i, j) = -inv_n * (1.0 - p);
        denom_recip_sum(i) += std::exp(-log_d);
      }
    }
  }

  if (grads) {
    gt = Eigen::MatrixXd(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < m; ++k) gt(i, k) = inv_n * std::exp(t(i, k)) * denom_recip_sum(i);
    // chain rule through the dot products (s is used once per ordered pair)
    grads->d_positives = inv_tau * ((gs + gs.transpose()) * set.positives + gt * set.negatives);
    grads->d_negatives = inv_tau * (gt.transpose() * set.positives);
  }
  return {loss, false};
}

namespace {

Eigen::MatrixXd vstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() == 0) return b;
  if (b.rows() == 0) return a;
  Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

}  // namespace

SfceResult sfce_loss(const GatheredPoints& student_1, const GatheredPoints& teacher_2,
                     const GatheredPoints& student_2, const GatheredPoints& teacher_1, double tau,
                     SfceGrads* grads) {
  SfceResult out;
  if (grads) {
    grads->d_student1_edge = Eigen::MatrixXd::Zero(student_1.edge.rows(), student_1.edge.cols());
    grads->d_student1_back = Eigen::MatrixXd::Zero(student_1.back.rows(), student_1.back.cols());
    grads->d_student2_edge = Eigen::MatrixXd::Zero(student_2.edge.rows(), student_2.edge.cols());
    grads->d_student2_back = Eigen::MatrixXd::Zero(student_2.back.rows(), student_2.back.cols());
  }

  bool any = false;
  auto one_side = [&](const GatheredPoints& student, const GatheredPoints& teacher,
                      Eigen::MatrixXd* d_edge, Eigen::MatrixXd* d_back) -> double {
    // The cross-contrast needs reconstructed points from one sample and
    // original points from its partner; if either plan is empty the set is
    // degenerate and contributes nothing.
    if (student.edge.rows() == 0 || teacher.edge.rows() == 0) return 0.0;
    ContrastSet set;
    set.positives = vstack(student.edge, teacher.edge);
    set.negatives = vstack(student.back, teacher.back);
    set.tau = tau;
    SupconGrads sg;
    const LossValue lv = supcon_loss(set, grads ? &sg : nullptr);
    if (lv.skipped) return 0.0;
    any = true;
    if (grads) {
      *d_edge += sg.d_positives.topRows(student.edge.rows());
      *d_back += sg.d_negatives.topRows(student.back.rows());
    }
    return lv.value;
  };

  double total = 0.0;
  total += one_side(student_1, teacher_2, grads ? &grads->d_student1_edge : nullptr,
                    grads ? &grads->d_student1_back : nullptr);
  total += one_side(student_2, teacher_1, grads ? &grads->d_student2_edge : nullptr,
                    grads ? &grads->d_student2_back : nullptr);
  out.value = total;
  out.skipped = !any;
  return out;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& points) {
  Eigen::MatrixXd out = points;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

Eigen::MatrixXd normalize_rows_grad(const Eigen::MatrixXd& raw, const Eigen::MatrixXd& grad_out) {
  check(raw.rows() == grad_out.rows() && raw.cols() == grad_out.cols(),
        "normalize_rows_grad: shape mismatch");
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double norm = raw.row(i).norm();
    if (norm <= 0.0) {
      out.row(i) = grad_out.row(i);
      continue;
    }
    const Eigen::RowVectorXd y = raw.row(i) / norm;
    out.row(i) = (grad_out.row(i) - y * grad_out.row(i).dot(y)) / norm;
  }
  return out;
}

namespace {
constexpr double kCeEps = 1e-7;
}

double ce_loss(const Tensor& pred, const BinaryMask& target) {
  check(pred.rank() == 2, "ce_loss: prediction must be (H,W)");
  check(pred.dim(0) == target.height && pred.dim(1) == target.width, "ce_loss: shape mismatch");
  const std::size_t n = pred.size();
  double acc = 0.0;
  const double* p = pred.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(p[i], kCeEps, 1.0 - kCeEps);
    acc += target.v[i] ? -std::log(q) : -std::log(1.0 - q);
  }
  return acc / static_cast<double>(n);
}

Tensor ce_loss_grad(const Tensor& pred, const BinaryMask& target) {
  check(pred.rank() == 2, "ce_loss_grad: prediction must be (H,W)");
  check(pred.dim(0) == target.height && pred.dim(1) == target.width, "ce_loss_grad: shape mismatch");
  Tensor g(pred.shape());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  const double* p = pred.data();
  double* d = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double q = std::clamp(p[i], kCeEps, 1.0 - kCeEps);
    d[i] = inv_n * (target.v[i] ? -1.0 / q : 1.0 / (1.0 - q));
  }
  return g;
}

LossBundle joint_loss(double l_reconst, double l_cons, double l_ce, const LossWeights& weights) {
  check(l_reconst >= 0.0 && l_cons >= 0.0 && l_ce >= 0.0,
        "joint_loss: component losses must be non-negative");
  LossBundle b;
  b.l_reconst = l_reconst;
  b.l_cons = l_cons;
  b.l_ce = l_ce;
  b.alpha = weights.alpha;
  b.beta = weights.beta;
  b.gamma = weights.gamma;
  b.total = weights.alpha * l_reconst + weights.beta * l_cons + weights.gamma * l_ce;
  return b;
}

}  // namespace landseg
