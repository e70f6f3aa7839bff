#pragma once

#include <Eigen/Core>

#include "landseg/sample.hpp"
#include "landseg/tensor.hpp"

namespace landseg {

/// A loss value plus a flag for the degenerate inputs (empty mask plan,
/// fewer than two positives) where the loss is defined to be zero and the
/// term is skipped rather than computed.
struct LossValue {
  double value = 0.0;
  bool skipped = false;
};

/// Masked feature modeling: mean over all N*C compared elements of the
/// squared difference between reconstructed and label feature points.
/// N = 0 yields {0, skipped}.
LossValue mfm_loss(const Eigen::MatrixXd& reconstructed, const Eigen::MatrixXd& labels);

/// d(mfm)/d(reconstructed) = 2 (reconstructed - labels) / (N*C).
Eigen::MatrixXd mfm_loss_grad(const Eigen::MatrixXd& reconstructed, const Eigen::MatrixXd& labels);

/// Sum of the two per-sample reconstruction losses of an input pair.
double mfm_pair_loss(double loss_1, double loss_2);

/// Positive (edge) and negative (background) feature points for supervised
/// contrast. Rows are expected L2-normalized by the caller.
struct ContrastSet {
  Eigen::MatrixXd positives;  // N x C
  Eigen::MatrixXd negatives;  // M x C
  double tau = 0.07;
};

struct SupconGrads {
  Eigen::MatrixXd d_positives;
  Eigen::MatrixXd d_negatives;
};

/// Supervised contrastive loss over the positive set, every other positive
/// as partner and all negatives in the denominator:
///   L = sum_i -(1/N) sum_{j != i} log( e(i,j) / (e(i,j) + sum_k en(i,k)) )
/// with e(i,j) = exp(x_i . x_j / tau) computed with log-sum-exp
/// stabilization. Fewer than two positives yields {0, skipped}.
LossValue supcon_loss(const ContrastSet& set, SupconGrads* grads = nullptr);

/// Gathered feature points of one sample at its mask plan positions,
/// split by block class.
struct GatheredPoints {
  Eigen::MatrixXd edge;  // rows from mask_list_1 positions
  Eigen::MatrixXd back;  // rows from mask_list_0 positions
};

struct SfceGrads {
  Eigen::MatrixXd d_student1_edge, d_student1_back;
  Eigen::MatrixXd d_student2_edge, d_student2_back;
};

struct SfceResult {
  double value = 0.0;
  bool skipped = false;  // both sets degenerate
};

/// Cross-sample semantic feature contrast: set A pools edge points from
/// (student masked sample 1, teacher original sample 2) as positives and
/// the corresponding background points as negatives; set B symmetrically
/// from (student 2, teacher 1). Returns supcon(A) + supcon(B). A set whose
/// student or teacher side is empty (empty mask plan) contributes zero.
/// Teacher points never receive gradients.
SfceResult sfce_loss(const GatheredPoints& student_1, const GatheredPoints& teacher_2,
                     const GatheredPoints& student_2, const GatheredPoints& teacher_1, double tau,
                     SfceGrads* grads = nullptr);

/// Row-wise L2 normalization (zero rows are left untouched).
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& points);

/// Backward of normalize_rows given the raw input and upstream row grads.
Eigen::MatrixXd normalize_rows_grad(const Eigen::MatrixXd& raw, const Eigen::MatrixXd& grad_out);

/// Pixel-mean binary cross-entropy; predictions are clamped to
/// [1e-7, 1 - 1e-7] before the logs.
double ce_loss(const Tensor& pred, const BinaryMask& target);

/// d(ce)/d(pred), clamp treated as pass-through.
Tensor ce_loss_grad(const Tensor& pred, const BinaryMask& target);

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
};

/// The three loss scalars, their weights, and the weighted total.
struct LossBundle {
  double l_reconst = 0.0;
  double l_cons = 0.0;
  double l_ce = 0.0;
  double alpha = 1.0, beta = 1.0, gamma = 1.0;
  double total = 0.0;
  bool reconst_skipped = false;
  bool cons_skipped = false;
};

LossBundle joint_loss(double l_reconst, double l_cons, double l_ce, const LossWeights& weights);

}  // namespace landseg
