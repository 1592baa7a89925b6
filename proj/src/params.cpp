#include <cmath>
#include <utility>

#include "prodopt/cost.hpp"
#include "prodopt/errors.hpp"

namespace prodopt {

namespace {

Eigen::VectorXd layer_targets(const HamiltonianModel& model, double t) {
  if (!std::isfinite(t)) throw NumericalError("non-finite time step");
  Eigen::VectorXd targets(model.term_count());
  for (int j = 0; j < model.term_count(); ++j) targets(j) = t * model.term(j).coeff;
  return targets;
}

void check_finite(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) throw NumericalError("non-finite sheet entries");
}

}  // namespace

ParamSheet::ParamSheet(double t, Eigen::VectorXd targets, Eigen::MatrixXd theta,
                       bool constrained)
    : t_(t), targets_(std::move(targets)), theta_(std::move(theta)),
      constrained_(constrained) {
  if (theta_.rows() < 1) throw DimensionError("sheet needs at least one layer");
  if (theta_.cols() != targets_.size())
    throw DimensionError("sheet column count must match the model");
  check_finite(theta_);
  if (constrained_) reslave();
}

void ParamSheet::reslave() {
  const int R = layers();
  theta_.row(R - 1) = targets_.transpose();
  for (int r = 0; r < R - 1; ++r) theta_.row(R - 1) -= theta_.row(r);
}

ParamSheet ParamSheet::trotter(const HamiltonianModel& model, double t, int layers) {
  if (layers < 1) throw DimensionError("layer count must be positive");
  Eigen::VectorXd targets = layer_targets(model, t);
  Eigen::MatrixXd theta = (targets / layers).transpose().replicate(layers, 1);
  return ParamSheet(t, std::move(targets), std::move(theta), true);
}

ParamSheet ParamSheet::constrained(const HamiltonianModel& model, double t, int layers,
                                   const Eigen::MatrixXd& free_rows) {
  if (layers < 1) throw DimensionError("layer count must be positive");
  if (free_rows.rows() != layers - 1 || free_rows.cols() != model.term_count())
    throw DimensionError("free rows must be (layers-1) x term_count");
  Eigen::MatrixXd theta(layers, model.term_count());
  theta.topRows(layers - 1) = free_rows;
  theta.row(layers - 1).setZero();
  return ParamSheet(t, layer_targets(model, t), std::move(theta), true);
}

ParamSheet ParamSheet::unconstrained(const HamiltonianModel& model, double t,
                                     Eigen::MatrixXd theta) {
  if (theta.cols() != model.term_count())
    throw DimensionError("sheet column count must match the model");
  return ParamSheet(t, layer_targets(model, t), std::move(theta), false);
}

Eigen::VectorXd ParamSheet::xi() const {
  return theta_.colwise().sum().transpose() - targets_;
}

Eigen::VectorXd ParamSheet::free_parameters() const {
  const int R = layers(), M = terms();
  Eigen::VectorXd free(free_count());
  for (int r = 0; r < R - 1; ++r)
    for (int j = 0; j < M; ++j) free(r * M + j) = theta_(r, j);
  return free;
}

void ParamSheet::set_free_parameters(const Eigen::VectorXd& free) {
  if (!constrained_) throw ConfigError("free parameters require a constrained sheet");
  if (free.size() != free_count()) throw DimensionError("free parameter count mismatch");
  const int M = terms();
  for (int r = 0; r < layers() - 1; ++r)
    for (int j = 0; j < M; ++j) theta_(r, j) = free(r * M + j);
  check_finite(theta_);
  reslave();
}

ParamSheet ParamSheet::scaled(double s) const {
  return ParamSheet(t_, targets_, s * theta_, false);
}

ParamSheet repeat_sheet(const ParamSheet& sheet, int K) {
  if (K < 1) throw DimensionError("repetition count must be positive");
  const int R = sheet.layers();
  Eigen::MatrixXd theta(K * R, sheet.terms());
  for (int m = 0; m < K; ++m) theta.middleRows(m * R, R) = sheet.matrix();
  return ParamSheet(K * sheet.t(), K * sheet.targets(), std::move(theta), false);
}

Eigen::MatrixXd expand_class_columns(const HamiltonianModel& model,
                                     const Eigen::MatrixXd& shared) {
  if (!model.has_classes())
    throw ConfigError("shared parameters need translation classes");
  if (shared.cols() != model.class_count())
    throw DimensionError("shared column count must match class count");
  Eigen::MatrixXd theta(shared.rows(), model.term_count());
  for (int j = 0; j < model.term_count(); ++j)
    theta.col(j) = shared.col(model.translation_classes()[static_cast<std::size_t>(j)]);
  return theta;
}

ParamSheet expand_shared(const HamiltonianModel& model, double t,
                         const Eigen::MatrixXd& shared) {
  if (shared.rows() < 1) throw DimensionError("layer count must be positive");
  return ParamSheet::unconstrained(model, t, expand_class_columns(model, shared));
}

Eigen::MatrixXd reduce_shared_grad(const HamiltonianModel& model,
                                   const Eigen::MatrixXd& grad) {
  if (!model.has_classes())
    throw ConfigError("shared parameters need translation classes");
  if (grad.cols() != model.term_count())
    throw DimensionError("gradient column count must match the model");
  Eigen::MatrixXd reduced = Eigen::MatrixXd::Zero(grad.rows(), model.class_count());
  for (int j = 0; j < model.term_count(); ++j)
    reduced.col(model.translation_classes()[static_cast<std::size_t>(j)]) += grad.col(j);
  return reduced;
}

}  // namespace prodopt
