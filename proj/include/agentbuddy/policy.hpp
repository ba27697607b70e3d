#pragma once

// Contextual-bandit policies over per-arm ridge regression state.
//
// Every policy keeps, per arm a, the Gram matrix A_a = lambda*I + sum x x^T
// and the reward vector b_a = sum r x. The ridge mean is theta_a = A_a^-1 b_a.
// A_a^-1 is never formed; a lower Cholesky factor is updated in place.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "agentbuddy/core_model.hpp"
#include "agentbuddy/rng.hpp"

namespace agentbuddy {

enum class PolicyKind { uniform, epsilon_greedy, linucb, lin_thompson };

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(std::string_view name);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::linucb;
  double epsilon = 0.05;
  double alpha = 0.5;
  double lambda = 1.0;
  double thompson_v = 0.25;
  double p_min = 0.01;
  int thompson_resamples = 100;
};

void validate(const PolicyConfig& config);

inline constexpr std::size_t kMaxPolicyDimension = 1024;

using ActionDistribution = std::map<ArmId, double>;

struct Choice {
  ArmId arm_id = 0;
  double propensity = 1.0;
};

class PolicyState {
 public:
  PolicyState(const PolicyConfig& config, std::size_t dimension, std::size_t arms,
              std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  std::size_t dimension() const { return dimension_; }
  std::size_t arm_count() const { return arms_.size(); }
  std::uint64_t pulls(ArmId arm) const;
  std::vector<std::uint64_t> pull_counts() const;
  std::string policy_name() const { return to_string(config_.kind); }

  const Eigen::MatrixXd& gram(ArmId arm) const;
  const Eigen::VectorXd& reward_vector(ArmId arm) const;
  const Eigen::VectorXd& ridge_mean(ArmId arm) const;

  double mean_score(ArmId arm, const FeatureVector& context) const;
  double ucb_score(ArmId arm, const FeatureVector& context) const;

  // Probabilities over `available` summing to 1. Does not advance the rng;
  // lin_thompson estimates its distribution from a fork of the rng.
  ActionDistribution action_distribution(const FeatureVector& context,
                                         std::span<const ArmId> available) const;

  // Throws NoArmError when `available` is empty. The returned propensity is
  // floored at p_min (linucb always reports 1).
  Choice choose(const FeatureVector& context, std::span<const ArmId> available);
  Choice choose(const FeatureVector& context);

  // Deterministic action used when this policy is the target of off-policy
  // evaluation: the UCB argmax for linucb, the ridge-mean argmax otherwise.
  ArmId greedy_action(const FeatureVector& context, std::span<const ArmId> available) const;
  ArmId greedy_action(const FeatureVector& context) const;

  // No-op when reward is absent.
  void update(const FeatureVector& context, ArmId arm, double propensity,
              std::optional<double> reward);

  std::string snapshot() const;
  static PolicyState restore(std::string_view bytes);
  // FNV-1a digest of snapshot().
  std::string digest() const;

  const Rng& rng() const { return rng_; }

 private:
  struct ArmState {
    Eigen::MatrixXd gram;
    Eigen::MatrixXd chol;  // lower triangular, gram = chol * chol^T
    Eigen::VectorXd reward;
    Eigen::VectorXd theta;
    std::uint64_t pulls = 0;
  };

  Eigen::VectorXd dense(const FeatureVector& context) const;
  void check_context(const FeatureVector& context) const;
  void check_available(std::span<const ArmId> available) const;
  void refresh_theta(ArmState& arm) const;
  double width(const ArmState& arm, const Eigen::VectorXd& x) const;
  ArmId argmax_mean(const Eigen::VectorXd& x, std::span<const ArmId> available) const;
  ArmId argmax_ucb(const Eigen::VectorXd& x, std::span<const ArmId> available) const;
  ArmId thompson_draw(const Eigen::VectorXd& x, std::span<const ArmId> available,
                      const std::vector<double>& means, const std::vector<double>& widths,
                      Rng& rng) const;
  std::vector<double> thompson_frequencies(const Eigen::VectorXd& x,
                                           std::span<const ArmId> available, Rng& rng) const;
  std::vector<ArmId> all_arms() const;

  PolicyConfig config_;
  std::size_t dimension_;
  std::vector<ArmState> arms_;
  Rng rng_;
};

}  // namespace agentbuddy
