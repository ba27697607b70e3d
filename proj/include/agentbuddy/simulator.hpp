#pragma once

// Synthetic stand-in for the human rater: contexts drawn around cluster
// centers, a latent expected reward per (arm, context), and a noisy 1..5 star
// rating derived from it.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "agentbuddy/config.hpp"
#include "agentbuddy/core_model.hpp"
#include "agentbuddy/policy.hpp"
#include "agentbuddy/rng.hpp"

namespace agentbuddy {

enum class RewardModel {
  linear,     // clamp(w_a . x, 0, 1)
  constant,   // fixed mean per arm, independent of x
  clustered,  // per-(arm, nearest cluster) mean; misspecified for linear policies
};

struct EnvConfig {
  std::size_t arms = 10;
  std::size_t dimension = 32;
  std::size_t clusters = 8;
  double sigma = 0.1;
  // Fall back to sigma when unset.
  std::optional<double> context_noise;
  std::optional<double> rating_noise;
  RewardModel reward_model = RewardModel::linear;
  std::vector<double> means;  // constant model only, one per arm
  std::uint64_t seed = 20240607;
};

// Keys under env.*: arms, dim, clusters, sigma, context_noise, rating_noise,
// reward_model (linear|constant|clustered), means (comma list), seed.
EnvConfig env_config_from(const KeyValueConfig& config);

class SyntheticEnv {
 public:
  explicit SyntheticEnv(EnvConfig config);

  const EnvConfig& config() const { return config_; }
  std::size_t arms() const { return config_.arms; }
  std::size_t dimension() const { return config_.dimension; }
  double context_noise() const;
  double rating_noise() const;
  const std::vector<std::vector<double>>& centers() const { return centers_; }
  const std::vector<std::vector<double>>& weights() const { return weights_; }

  FeatureVector gen_context(Rng& rng) const;
  double expected_reward(ArmId arm, const FeatureVector& x) const;
  ArmId best_arm(const FeatureVector& x) const;
  double best_expected_reward(const FeatureVector& x) const;
  int simulate_rating(const FeatureVector& x, ArmId arm, Rng& rng) const;

 private:
  std::size_t nearest_cluster(const FeatureVector& x) const;

  EnvConfig config_;
  std::vector<std::vector<double>> centers_;
  std::vector<std::vector<double>> weights_;         // linear model
  std::vector<std::vector<double>> cluster_means_;   // clustered model, [arm][cluster]
};

struct RoundRow {
  std::uint64_t round = 0;
  double reward = 0.0;
  double regret = 0.0;
  ArmId arm = 0;
};

struct SimulationMetrics {
  double cumulative_reward = 0.0;
  double cumulative_regret = 0.0;
  std::vector<std::uint64_t> pulls;
  std::vector<RoundRow> rows;

  // Header `round,reward,regret,arm`; per-round values.
  std::string csv() const;
};

struct SimulationResult {
  SimulationMetrics metrics;
  PolicyState state;
  std::vector<InteractionRecord> log;
};

struct SimulationOptions {
  bool keep_log = false;
  std::optional<std::filesystem::path> log_path;
};

// The policy draws from its own stream seeded with `seed`; contexts and
// ratings draw from an independent stream, so replaying the emitted log with
// the same seed reproduces every choice.
SimulationResult run_simulation(const SyntheticEnv& env, const PolicyConfig& policy,
                                std::uint64_t rounds, std::uint64_t seed,
                                const SimulationOptions& options = {});

std::uint64_t environment_stream_seed(std::uint64_t seed);

double cumulative_regret(const SimulationMetrics& metrics);

}  // namespace agentbuddy
