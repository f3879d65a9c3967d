#include "ossd/linclf.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ossd/rng.hpp"

namespace ossd {

ClassifierParams ClassifierParams::zeros(Eigen::Index d, Eigen::Index h, Eigen::Index c) {
  return {Eigen::MatrixXd::Zero(h, d), Eigen::VectorXd::Zero(h), Eigen::MatrixXd::Zero(c, h),
          Eigen::VectorXd::Zero(c)};
}

ClassifierParams ClassifierParams::zeros_like() const {
  return zeros(input_dim(), hidden_dim(), num_outputs());
}

bool ClassifierParams::same_shape(const ClassifierParams& o) const {
  return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
         w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() && b2.size() == o.b2.size();
}

bool ClassifierParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

std::size_t ClassifierParams::num_coefficients() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

double& ClassifierParams::coeff(std::size_t i) {
  auto idx = static_cast<Eigen::Index>(i);
  if (idx < w1.size()) return w1.data()[idx];
  idx -= w1.size();
  if (idx < b1.size()) return b1.data()[idx];
  idx -= b1.size();
  if (idx < w2.size()) return w2.data()[idx];
  idx -= w2.size();
  if (idx < b2.size()) return b2.data()[idx];
  throw std::out_of_range("ClassifierParams::coeff index " + std::to_string(i));
}

double ClassifierParams::coeff(std::size_t i) const {
  return const_cast<ClassifierParams*>(this)->coeff(i);
}

bool operator==(const ClassifierParams& a, const ClassifierParams& b) {
  return a.same_shape(b) && a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2;
}

ClassifierParams init_params(Eigen::Index d, Eigen::Index h, Eigen::Index c, std::uint64_t seed,
                             double scale, std::uint64_t stream_id) {
  if (d < 1 || h < 1 || c < 1) throw std::invalid_argument("init_params: dimensions must be >= 1");
  if (!(scale > 0.0)) throw std::invalid_argument("init_params: scale must be > 0");
  Rng rng = make_rng(seed, stream_id);
  ClassifierParams p = ClassifierParams::zeros(d, h, c);
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = uniform_real(rng, -scale, scale);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = uniform_real(rng, -scale, scale);
  return p;
}

ForwardResult forward(const ClassifierParams& params, const Eigen::VectorXd& x) {
  if (x.size() != params.input_dim()) {
    throw std::invalid_argument("forward: input has dimension " + std::to_string(x.size()) +
                                ", network expects " + std::to_string(params.input_dim()));
  }
  ForwardResult r;
  r.hidden = (params.w1 * x + params.b1).cwiseMax(0.0);
  r.logits = params.w2 * r.hidden + params.b2;
  return r;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be > 0");
  if (logits.size() == 0) throw std::invalid_argument("softmax: empty logits");
  Eigen::VectorXd e = ((logits.array() - logits.maxCoeff()) / temperature).exp();
  return e / e.sum();
}

double log_sum_exp(const Eigen::VectorXd& values, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("log_sum_exp: temperature must be > 0");
  if (values.size() == 0) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = values.maxCoeff();
  return m + temperature * std::log(((values.array() - m) / temperature).exp().sum());
}

LossAndGrad ce_loss_and_grad(const ClassifierParams& params, std::span<const Sample> batch) {
  if (batch.empty()) throw std::invalid_argument("ce_loss_and_grad: empty batch");
  const auto C = params.num_outputs();
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  LossAndGrad out{0.0, params.zeros_like()};
  for (const auto& s : batch) {
    if (s.target < 0 || s.target >= C) {
      throw std::invalid_argument("ce_loss_and_grad: target " + std::to_string(s.target) +
                                  " outside [0, " + std::to_string(C) + ")");
    }
    if (!(s.weight >= 0.0)) throw std::invalid_argument("ce_loss_and_grad: negative weight");
    const Eigen::VectorXd pre = params.w1 * s.x + params.b1;
    const Eigen::VectorXd hidden = pre.cwiseMax(0.0);
    const Eigen::VectorXd logits = params.w2 * hidden + params.b2;

    const double m = logits.maxCoeff();
    const Eigen::ArrayXd shifted = (logits.array() - m).exp();
    const double sum = shifted.sum();
    const double nll = (m - logits[s.target]) + std::log(sum);
    const double w = s.weight * inv_n;
    out.loss += w * nll;

    Eigen::VectorXd dlogits = shifted.matrix() / sum;
    dlogits[s.target] -= 1.0;
    dlogits *= w;

    out.grad.w2.noalias() += dlogits * hidden.transpose();
    out.grad.b2 += dlogits;
    Eigen::VectorXd dpre = params.w2.transpose() * dlogits;
    for (Eigen::Index j = 0; j < dpre.size(); ++j) {
      if (pre[j] <= 0.0) dpre[j] = 0.0;
    }
    out.grad.w1.noalias() += dpre * s.x.transpose();
    out.grad.b1 += dpre;
  }
  return out;
}

ClassifierParams sgd_step(const ClassifierParams& params, const ClassifierParams& grads, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("sgd_step: eta must be > 0");
  if (!params.same_shape(grads)) throw std::invalid_argument("sgd_step: shape mismatch");
  return {params.w1 - eta * grads.w1, params.b1 - eta * grads.b1, params.w2 - eta * grads.w2,
          params.b2 - eta * grads.b2};
}

ClassifierParams MomentumSgd::step(const ClassifierParams& params, const ClassifierParams& grads,
                                   double eta) {
  if (momentum == 0.0) return sgd_step(params, grads, eta);
  if (!velocity.same_shape(grads)) velocity = grads.zeros_like();
  velocity.w1 = momentum * velocity.w1 + grads.w1;
  velocity.b1 = momentum * velocity.b1 + grads.b1;
  velocity.w2 = momentum * velocity.w2 + grads.w2;
  velocity.b2 = momentum * velocity.b2 + grads.b2;
  return sgd_step(params, velocity, eta);
}

void ema_update_in_place(TeacherStudent& ts) {
  if (!(ts.alpha >= 0.0 && ts.alpha <= 1.0)) throw std::invalid_argument("ema_update: alpha outside [0, 1]");
  if (!ts.teacher.same_shape(ts.student)) throw std::invalid_argument("ema_update: shape mismatch");
  const double a = ts.alpha;
  const double b = 1.0 - ts.alpha;
  ts.teacher.w1 = a * ts.teacher.w1 + b * ts.student.w1;
  ts.teacher.b1 = a * ts.teacher.b1 + b * ts.student.b1;
  ts.teacher.w2 = a * ts.teacher.w2 + b * ts.student.w2;
  ts.teacher.b2 = a * ts.teacher.b2 + b * ts.student.b2;
}

TeacherStudent ema_update(TeacherStudent ts) {
  ema_update_in_place(ts);
  return ts;
}

Prediction predict_from_logits(const Eigen::VectorXd& logits, int K) {
  if (K < 1 || K > logits.size()) {
    throw std::invalid_argument("predict: K=" + std::to_string(K) + " exceeds output count " +
                                std::to_string(logits.size()));
  }
  int best = 0;
  for (int k = 1; k < K; ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  const Eigen::VectorXd p = softmax(logits.head(K));
  return {best, p[best]};
}

Prediction predict(const ClassifierParams& params, const Eigen::VectorXd& x, int K) {
  return predict_from_logits(forward(params, x).logits, K);
}

}  // namespace ossd
