#include "agentbuddy/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "agentbuddy/evaluation.hpp"

namespace agentbuddy {

namespace {

std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

double dot(const std::vector<double>& w, const FeatureVector& x) {
  double s = 0.0;
  for (const auto& [i, v] : x.entries()) s += w[i] * v;
  return s;
}

}  // namespace

EnvConfig env_config_from(const KeyValueConfig& config) {
  EnvConfig env;
  env.arms = static_cast<std::size_t>(config.get_int("env.arms", static_cast<long long>(env.arms)));
  env.dimension = static_cast<std::size_t>(config.get_int("env.dim", static_cast<long long>(env.dimension)));
  env.clusters = static_cast<std::size_t>(config.get_int("env.clusters", static_cast<long long>(env.clusters)));
  env.sigma = config.get_double("env.sigma", env.sigma);
  if (config.contains("env.context_noise")) env.context_noise = config.get_double("env.context_noise", 0.0);
  if (config.contains("env.rating_noise")) env.rating_noise = config.get_double("env.rating_noise", 0.0);
  const auto model = config.get_string("env.reward_model", "linear");
  if (model == "linear") {
    env.reward_model = RewardModel::linear;
  } else if (model == "constant") {
    env.reward_model = RewardModel::constant;
  } else if (model == "clustered") {
    env.reward_model = RewardModel::clustered;
  } else {
    throw ValidationError("env.reward_model must be linear, constant or clustered");
  }
  env.means = config.get_doubles("env.means");
  env.seed = static_cast<std::uint64_t>(config.get_int("env.seed", static_cast<long long>(env.seed)));
  return env;
}

SyntheticEnv::SyntheticEnv(EnvConfig config) : config_(std::move(config)) {
  if (config_.arms == 0) throw ValidationError("env.arms must be >= 1");
  if (config_.dimension == 0) throw ValidationError("env.dim must be >= 1");
  if (config_.clusters == 0) throw ValidationError("env.clusters must be >= 1");
  if (!(config_.sigma >= 0.0) || !(context_noise() >= 0.0) || !(rating_noise() >= 0.0)) {
    throw ValidationError("env noise must be >= 0");
  }
  if (config_.reward_model == RewardModel::constant) {
    if (config_.means.size() != config_.arms) throw ValidationError("env.means needs one value per arm");
    for (double m : config_.means) {
      if (!(m >= 0.0 && m <= 1.0)) throw ValidationError("env.means must lie in [0,1]");
    }
  }

  Rng rng(config_.seed);
  for (std::size_t c = 0; c < config_.clusters; ++c) centers_.push_back(random_unit(config_.dimension, rng));

  // Each arm leans towards one cluster (a model that is good on one kind of
  // question) plus a random component; norms in [0.5, 1].
  for (std::size_t a = 0; a < config_.arms; ++a) {
    const auto& home = centers_[a % config_.clusters];
    const auto jitter = random_unit(config_.dimension, rng);
    std::vector<double> w(config_.dimension);
    double norm = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = home[i] + 0.5 * jitter[i];
      norm += w[i] * w[i];
    }
    const double scale = (0.5 + 0.5 * rng.uniform()) / std::sqrt(norm);
    for (auto& x : w) x *= scale;
    weights_.push_back(std::move(w));
  }

  cluster_means_.assign(config_.arms, std::vector<double>(config_.clusters, 0.0));
  for (auto& row : cluster_means_) {
    for (auto& m : row) m = rng.uniform();
  }
}

double SyntheticEnv::context_noise() const { return config_.context_noise.value_or(config_.sigma); }
double SyntheticEnv::rating_noise() const { return config_.rating_noise.value_or(config_.sigma); }

FeatureVector SyntheticEnv::gen_context(Rng& rng) const {
  const auto& center = centers_[rng.below(centers_.size())];
  const double noise = context_noise();
  if (noise == 0.0) return FeatureVector::from_dense(center);
  std::vector<double> x(center.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = center[i] + noise * rng.normal();
  auto v = FeatureVector::from_dense(x);
  v.normalize();
  return v;
}

std::size_t SyntheticEnv::nearest_cluster(const FeatureVector& x) const {
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers_.size(); ++c) {
    const double s = dot(centers_[c], x);
    if (s > best_sim) {
      best_sim = s;
      best = c;
    }
  }
  return best;
}

double SyntheticEnv::expected_reward(ArmId arm, const FeatureVector& x) const {
  if (arm >= config_.arms) throw ValidationError("unknown arm " + std::to_string(arm));
  if (x.dimension() != config_.dimension) throw ValidationError("context dimension mismatch");
  switch (config_.reward_model) {
    case RewardModel::linear: return std::clamp(dot(weights_[arm], x), 0.0, 1.0);
    case RewardModel::constant: return config_.means[arm];
    case RewardModel::clustered: return cluster_means_[arm][nearest_cluster(x)];
  }
  return 0.0;
}

ArmId SyntheticEnv::best_arm(const FeatureVector& x) const {
  ArmId best = 0;
  double best_mu = expected_reward(0, x);
  for (ArmId a = 1; a < config_.arms; ++a) {
    const double mu = expected_reward(a, x);
    if (mu > best_mu) {
      best_mu = mu;
      best = a;
    }
  }
  return best;
}

double SyntheticEnv::best_expected_reward(const FeatureVector& x) const {
  return expected_reward(best_arm(x), x);
}

int SyntheticEnv::simulate_rating(const FeatureVector& x, ArmId arm, Rng& rng) const {
  const double mu = expected_reward(arm, x);
  const double noisy = mu + rating_noise() * rng.normal();
  return static_cast<int>(std::clamp(std::round(1.0 + 4.0 * noisy), 1.0, 5.0));
}

std::string SimulationMetrics::csv() const {
  std::ostringstream out;
  out << "round,reward,regret,arm\n";
  for (const auto& row : rows) {
    out << row.round << ',' << format_real(row.reward) << ',' << format_real(row.regret) << ','
        << row.arm << '\n';
  }
  return out.str();
}

std::uint64_t environment_stream_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

SimulationResult run_simulation(const SyntheticEnv& env, const PolicyConfig& policy,
                                std::uint64_t rounds, std::uint64_t seed,
                                const SimulationOptions& options) {
  SimulationResult result{{}, PolicyState(policy, env.dimension(), env.arms(), seed), {}};
  Rng world(environment_stream_seed(seed));
  std::optional<InteractionLog> file_log;
  if (options.log_path) {
    std::filesystem::remove(*options.log_path);
    file_log.emplace(*options.log_path);
  }
  const bool logging = options.keep_log || file_log.has_value();

  auto& m = result.metrics;
  m.rows.reserve(rounds);
  for (std::uint64_t round = 1; round <= rounds; ++round) {
    const auto x = env.gen_context(world);
    std::string rng_digest;
    if (logging) rng_digest = hex_digest(fnv1a64(result.state.rng().state()));
    const auto choice = result.state.choose(x);
    const int stars = env.simulate_rating(x, choice.arm_id, world);
    const double reward = normalize_stars(stars);
    result.state.update(x, choice.arm_id, choice.propensity, reward);

    const double regret = env.best_expected_reward(x) - env.expected_reward(choice.arm_id, x);
    m.cumulative_reward += reward;
    m.cumulative_regret += regret;
    m.rows.push_back({round, reward, regret, choice.arm_id});

    if (logging) {
      InteractionRecord record;
      record.ordinal = round - 1;
      record.ts = static_cast<TimestampMs>(round);
      record.session_id = "sim";
      record.context = x;
      record.arm_id = choice.arm_id;
      record.propensity = choice.propensity;
      record.reward = reward;
      record.policy_name = to_string(policy.kind);
      record.stars = stars;
      record.seed_state_digest = std::move(rng_digest);
      if (file_log) file_log->append(record);
      if (options.keep_log) result.log.push_back(std::move(record));
    }
  }
  m.pulls = result.state.pull_counts();
  return result;
}

double cumulative_regret(const SimulationMetrics& metrics) {
  double total = 0.0;
  for (const auto& row : metrics.rows) total += row.regret;
  return total;
}

}  // namespace agentbuddy
