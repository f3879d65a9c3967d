#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ossd {

// One-hidden-layer ReLU network with a softmax output:
//   logits = w2 * relu(w1 * x + b1) + b2
// C = K for the detector head, C = K + 1 for networks with an abstention class.
struct ClassifierParams {
  Eigen::MatrixXd w1;  // H x d
  Eigen::VectorXd b1;  // H
  Eigen::MatrixXd w2;  // C x H
  Eigen::VectorXd b2;  // C

  Eigen::Index input_dim() const { return w1.cols(); }
  Eigen::Index hidden_dim() const { return w1.rows(); }
  Eigen::Index num_outputs() const { return w2.rows(); }

  static ClassifierParams zeros(Eigen::Index d, Eigen::Index h, Eigen::Index c);
  ClassifierParams zeros_like() const;
  bool same_shape(const ClassifierParams& other) const;
  bool all_finite() const;
  std::size_t num_coefficients() const;

  // Coefficient view in the fixed order w1, b1, w2, b2 (column-major within
  // each block). Used by finite-difference checks and EMA algebra tests.
  double& coeff(std::size_t i);
  double coeff(std::size_t i) const;

  // Exact elementwise equality.
  friend bool operator==(const ClassifierParams& a, const ClassifierParams& b);
};

struct ForwardResult {
  Eigen::VectorXd hidden;  // relu(w1 * x + b1)
  Eigen::VectorXd logits;
};

ClassifierParams init_params(Eigen::Index d, Eigen::Index h, Eigen::Index c, std::uint64_t seed,
                             double scale, std::uint64_t stream_id = 0);

ForwardResult forward(const ClassifierParams& params, const Eigen::VectorXd& x);

// Temperature softmax, max-subtracted. Throws on temperature <= 0.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits, double temperature = 1.0);

// Numerically stable T * log(sum(exp(v / T))).
double log_sum_exp(const Eigen::VectorXd& values, double temperature = 1.0);

struct Sample {
  Eigen::VectorXd x;
  int target = 0;
  double weight = 1.0;
};

struct LossAndGrad {
  double loss = 0.0;
  ClassifierParams grad;
};

// loss = (1/n) * sum_i weight_i * -log softmax(f(x_i))[target_i]
// n is the batch size, so per-sample weights scale each term (a weight of
// lambda on every sample yields lambda times the plain mean).
LossAndGrad ce_loss_and_grad(const ClassifierParams& params, std::span<const Sample> batch);

ClassifierParams sgd_step(const ClassifierParams& params, const ClassifierParams& grads, double eta);

// Heavy-ball momentum: v <- mu * v + g; params <- params - eta * v.
// With mu = 0 this reduces to sgd_step exactly.
struct MomentumSgd {
  double momentum = 0.0;
  ClassifierParams velocity;

  ClassifierParams step(const ClassifierParams& params, const ClassifierParams& grads, double eta);
};

struct TeacherStudent {
  ClassifierParams teacher;
  ClassifierParams student;
  double alpha = 0.999;
};

// teacher <- alpha * teacher + (1 - alpha) * student.
TeacherStudent ema_update(TeacherStudent ts);
void ema_update_in_place(TeacherStudent& ts);

struct Prediction {
  int klass = 0;
  double confidence = 0.0;
};

// Argmax over the first K logits (ties to the lowest index). Confidence is the
// softmax of those K logits, so the abstention output of a K+1 network does
// not enter the detector confidence.
Prediction predict(const ClassifierParams& params, const Eigen::VectorXd& x, int K);
Prediction predict_from_logits(const Eigen::VectorXd& logits, int K);

}  // namespace ossd
