#include "agentbuddy/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

namespace agentbuddy {

namespace {

constexpr std::string_view kSnapshotMagic = "agentbuddy-policy-snapshot";
constexpr int kSnapshotVersion = 1;
constexpr double kSpdTolerance = 1e-9;

void put_double(std::ostringstream& out, double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::hex);
  out.write(buf, end - buf);
}

double parse_double(std::string_view token) {
  double value = 0.0;
  auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value,
                                   std::chars_format::hex);
  if (ec != std::errc{} || end != token.data() + token.size()) {
    throw SnapshotError("bad number in snapshot: " + std::string(token));
  }
  return value;
}

// Line-oriented reader for the snapshot container.
class SnapshotReader {
 public:
  explicit SnapshotReader(std::string_view bytes) : bytes_(bytes) {}

  std::vector<std::string_view> line(std::string_view expected_key) {
    if (pos_ >= bytes_.size()) throw SnapshotError("snapshot truncated before " + std::string(expected_key));
    const auto nl = bytes_.find('\n', pos_);
    if (nl == std::string_view::npos) throw SnapshotError("snapshot truncated in " + std::string(expected_key));
    std::string_view text = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (start <= text.size()) {
      auto space = text.find(' ', start);
      if (space == std::string_view::npos) space = text.size();
      if (space > start) fields.push_back(text.substr(start, space - start));
      start = space + 1;
    }
    if (fields.empty() || fields[0] != expected_key) {
      throw SnapshotError("expected '" + std::string(expected_key) + "' in snapshot");
    }
    return fields;
  }

  std::string_view rest_of_line(std::string_view expected_key) {
    const auto nl = bytes_.find('\n', pos_);
    if (nl == std::string_view::npos) throw SnapshotError("snapshot truncated in " + std::string(expected_key));
    std::string_view text = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    if (!text.starts_with(expected_key) || text.size() <= expected_key.size()) {
      throw SnapshotError("expected '" + std::string(expected_key) + "' in snapshot");
    }
    return text.substr(expected_key.size() + 1);
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t parse_uint(std::string_view token) {
  std::uint64_t value = 0;
  auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || end != token.data() + token.size()) {
    throw SnapshotError("bad integer in snapshot: " + std::string(token));
  }
  return value;
}

std::vector<double> parse_doubles(const std::vector<std::string_view>& fields, std::size_t count) {
  if (fields.size() != count + 1) throw SnapshotError("wrong value count for " + std::string(fields[0]));
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = parse_double(fields[i + 1]);
  return out;
}

// In-place update of lower factor L so that L L^T becomes L L^T + x x^T.
void cholesky_rank_one_update(Eigen::MatrixXd& chol, Eigen::VectorXd x) {
  const auto n = chol.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    if (x(k) == 0.0) continue;
    const double lkk = chol(k, k);
    const double r = std::hypot(lkk, x(k));
    const double c = r / lkk;
    const double s = x(k) / lkk;
    chol(k, k) = r;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      chol(i, k) = (chol(i, k) + s * x(i)) / c;
      x(i) = c * x(i) - s * chol(i, k);
    }
  }
}

}  // namespace

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::uniform: return "uniform";
    case PolicyKind::epsilon_greedy: return "epsilon_greedy";
    case PolicyKind::linucb: return "linucb";
    case PolicyKind::lin_thompson: return "lin_thompson";
  }
  return "uniform";
}

PolicyKind policy_kind_from_string(std::string_view name) {
  if (name == "uniform") return PolicyKind::uniform;
  if (name == "epsilon_greedy") return PolicyKind::epsilon_greedy;
  if (name == "linucb") return PolicyKind::linucb;
  if (name == "lin_thompson") return PolicyKind::lin_thompson;
  throw ValidationError("unknown policy: " + std::string(name));
}

void validate(const PolicyConfig& config) {
  if (!(config.epsilon >= 0.0 && config.epsilon <= 1.0)) throw ValidationError("policy.epsilon must lie in [0,1]");
  if (!(config.alpha >= 0.0)) throw ValidationError("policy.alpha must be >= 0");
  if (!(config.lambda > 0.0)) throw ValidationError("policy.lambda must be > 0");
  if (!(config.thompson_v >= 0.0)) throw ValidationError("policy.thompson_v must be >= 0");
  if (!(config.p_min > 0.0 && config.p_min <= 1.0)) throw ValidationError("policy.p_min must lie in (0,1]");
  if (config.thompson_resamples < 1) throw ValidationError("policy.thompson_resamples must be >= 1");
}

PolicyState::PolicyState(const PolicyConfig& config, std::size_t dimension, std::size_t arms,
                         std::uint64_t seed)
    : config_(config), dimension_(dimension), rng_(seed) {
  validate(config_);
  if (dimension == 0 || dimension > kMaxPolicyDimension) {
    throw ValidationError("policy dimension must lie in 1.." + std::to_string(kMaxPolicyDimension));
  }
  if (arms == 0) throw ValidationError("policy needs at least one arm");
  const auto d = static_cast<Eigen::Index>(dimension);
  arms_.resize(arms);
  for (auto& arm : arms_) {
    arm.gram = Eigen::MatrixXd::Identity(d, d) * config_.lambda;
    arm.chol = Eigen::MatrixXd::Identity(d, d) * std::sqrt(config_.lambda);
    arm.reward = Eigen::VectorXd::Zero(d);
    arm.theta = Eigen::VectorXd::Zero(d);
  }
}

std::uint64_t PolicyState::pulls(ArmId arm) const {
  if (arm >= arms_.size()) throw ValidationError("unknown arm " + std::to_string(arm));
  return arms_[arm].pulls;
}

std::vector<std::uint64_t> PolicyState::pull_counts() const {
  std::vector<std::uint64_t> out;
  out.reserve(arms_.size());
  for (const auto& arm : arms_) out.push_back(arm.pulls);
  return out;
}

const Eigen::MatrixXd& PolicyState::gram(ArmId arm) const {
  if (arm >= arms_.size()) throw ValidationError("unknown arm " + std::to_string(arm));
  return arms_[arm].gram;
}

const Eigen::VectorXd& PolicyState::reward_vector(ArmId arm) const {
  if (arm >= arms_.size()) throw ValidationError("unknown arm " + std::to_string(arm));
  return arms_[arm].reward;
}

const Eigen::VectorXd& PolicyState::ridge_mean(ArmId arm) const {
  if (arm >= arms_.size()) throw ValidationError("unknown arm " + std::to_string(arm));
  return arms_[arm].theta;
}

void PolicyState::check_context(const FeatureVector& context) const {
  if (context.dimension() != dimension_) {
    throw ValidationError("context dimension " + std::to_string(context.dimension()) +
                          " does not match policy dimension " + std::to_string(dimension_));
  }
}

void PolicyState::check_available(std::span<const ArmId> available) const {
  if (available.empty()) throw NoArmError("no available arms");
  for (ArmId a : available) {
    if (a >= arms_.size()) throw ValidationError("unknown arm " + std::to_string(a));
  }
}

Eigen::VectorXd PolicyState::dense(const FeatureVector& context) const {
  check_context(context);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dimension_));
  for (const auto& [index, value] : context.entries()) x(index) = value;
  return x;
}

std::vector<ArmId> PolicyState::all_arms() const {
  std::vector<ArmId> out(arms_.size());
  std::iota(out.begin(), out.end(), ArmId{0});
  return out;
}

void PolicyState::refresh_theta(ArmState& arm) const {
  const Eigen::VectorXd y = arm.chol.triangularView<Eigen::Lower>().solve(arm.reward);
  arm.theta = arm.chol.transpose().triangularView<Eigen::Upper>().solve(y);
}

// sqrt(x^T A^-1 x) = ||L^-1 x||.
double PolicyState::width(const ArmState& arm, const Eigen::VectorXd& x) const {
  return arm.chol.triangularView<Eigen::Lower>().solve(x).norm();
}

double PolicyState::mean_score(ArmId arm, const FeatureVector& context) const {
  return ridge_mean(arm).dot(dense(context));
}

double PolicyState::ucb_score(ArmId arm, const FeatureVector& context) const {
  const auto x = dense(context);
  const auto& state = arms_.at(arm);
  return state.theta.dot(x) + config_.alpha * width(state, x);
}

ArmId PolicyState::argmax_mean(const Eigen::VectorXd& x, std::span<const ArmId> available) const {
  ArmId best = available.front();
  double best_score = arms_[best].theta.dot(x);
  for (ArmId a : available) {
    const double s = arms_[a].theta.dot(x);
    if (s > best_score || (s == best_score && a < best)) {
      best = a;
      best_score = s;
    }
  }
  return best;
}

ArmId PolicyState::argmax_ucb(const Eigen::VectorXd& x, std::span<const ArmId> available) const {
  ArmId best = available.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (ArmId a : available) {
    const double s = arms_[a].theta.dot(x) + config_.alpha * width(arms_[a], x);
    if (s > best_score || (s == best_score && a < best)) {
      best = a;
      best_score = s;
    }
  }
  return best;
}

// theta~ ~ N(mu, v^2 A^-1) implies theta~^T x ~ N(mu^T x, v^2 x^T A^-1 x), so
// one scalar normal per arm is an exact draw of the sampled score.
ArmId PolicyState::thompson_draw(const Eigen::VectorXd&, std::span<const ArmId> available,
                                 const std::vector<double>& means,
                                 const std::vector<double>& widths, Rng& rng) const {
  ArmId best = available.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < available.size(); ++i) {
    const double s = means[i] + config_.thompson_v * widths[i] * rng.normal();
    if (s > best_score || (s == best_score && available[i] < best)) {
      best = available[i];
      best_score = s;
    }
  }
  return best;
}

std::vector<double> PolicyState::thompson_frequencies(const Eigen::VectorXd& x,
                                                      std::span<const ArmId> available,
                                                      Rng& rng) const {
  std::vector<double> means, widths;
  for (ArmId a : available) {
    means.push_back(arms_[a].theta.dot(x));
    widths.push_back(width(arms_[a], x));
  }
  std::vector<double> counts(available.size(), 0.0);
  for (int i = 0; i < config_.thompson_resamples; ++i) {
    const ArmId pick = thompson_draw(x, available, means, widths, rng);
    const auto pos = std::find(available.begin(), available.end(), pick) - available.begin();
    counts[static_cast<std::size_t>(pos)] += 1.0;
  }
  for (auto& c : counts) c /= static_cast<double>(config_.thompson_resamples);
  return counts;
}

ActionDistribution PolicyState::action_distribution(const FeatureVector& context,
                                                    std::span<const ArmId> available) const {
  check_available(available);
  const auto x = dense(context);
  const double k = static_cast<double>(available.size());
  ActionDistribution dist;
  switch (config_.kind) {
    case PolicyKind::uniform:
      for (ArmId a : available) dist[a] = 1.0 / k;
      break;
    case PolicyKind::epsilon_greedy: {
      const ArmId greedy = argmax_mean(x, available);
      for (ArmId a : available) dist[a] = config_.epsilon / k;
      dist[greedy] = 1.0 - config_.epsilon + config_.epsilon / k;
      break;
    }
    case PolicyKind::linucb: {
      for (ArmId a : available) dist[a] = 0.0;
      dist[argmax_ucb(x, available)] = 1.0;
      break;
    }
    case PolicyKind::lin_thompson: {
      Rng fork = rng_;
      const auto freq = thompson_frequencies(x, available, fork);
      double total = 0.0;
      for (std::size_t i = 0; i < available.size(); ++i) {
        const double p = std::max(config_.p_min, freq[i]);
        dist[available[i]] = p;
        total += p;
      }
      for (auto& [arm, p] : dist) p /= total;
      break;
    }
  }
  return dist;
}

Choice PolicyState::choose(const FeatureVector& context, std::span<const ArmId> available) {
  check_available(available);
  const auto x = dense(context);
  if (available.size() == 1) return {available.front(), 1.0};

  switch (config_.kind) {
    case PolicyKind::uniform:
    case PolicyKind::epsilon_greedy: {
      const auto dist = action_distribution(context, available);
      const double u = rng_.uniform();
      double acc = 0.0;
      ArmId pick = available.back();
      for (ArmId a : available) {
        acc += dist.at(a);
        if (u < acc) {
          pick = a;
          break;
        }
      }
      return {pick, std::max(config_.p_min, dist.at(pick))};
    }
    case PolicyKind::linucb:
      return {argmax_ucb(x, available), 1.0};
    case PolicyKind::lin_thompson: {
      std::vector<double> means, widths;
      for (ArmId a : available) {
        means.push_back(arms_[a].theta.dot(x));
        widths.push_back(width(arms_[a], x));
      }
      const ArmId pick = thompson_draw(x, available, means, widths, rng_);
      const auto freq = thompson_frequencies(x, available, rng_);
      const auto pos = static_cast<std::size_t>(
          std::find(available.begin(), available.end(), pick) - available.begin());
      return {pick, std::max(config_.p_min, freq[pos])};
    }
  }
  return {available.front(), 1.0};
}

Choice PolicyState::choose(const FeatureVector& context) {
  const auto arms = all_arms();
  return choose(context, arms);
}

ArmId PolicyState::greedy_action(const FeatureVector& context,
                                 std::span<const ArmId> available) const {
  check_available(available);
  const auto x = dense(context);
  return config_.kind == PolicyKind::linucb ? argmax_ucb(x, available) : argmax_mean(x, available);
}

ArmId PolicyState::greedy_action(const FeatureVector& context) const {
  const auto arms = all_arms();
  return greedy_action(context, arms);
}

void PolicyState::update(const FeatureVector& context, ArmId arm, double propensity,
                         std::optional<double> reward) {
  if (arm >= arms_.size()) throw ValidationError("unknown arm " + std::to_string(arm));
  if (!(propensity > 0.0 && propensity <= 1.0)) throw ValidationError("propensity outside (0,1]");
  if (!reward) return;
  if (!(*reward >= 0.0 && *reward <= 1.0)) throw ValidationError("reward outside [0,1]");
  const auto x = dense(context);
  auto& state = arms_[arm];
  for (const auto& [i, vi] : context.entries()) {
    for (const auto& [j, vj] : context.entries()) state.gram(i, j) += vi * vj;
  }
  cholesky_rank_one_update(state.chol, x);
  state.reward += *reward * x;
  refresh_theta(state);
  ++state.pulls;
}

std::string PolicyState::snapshot() const {
  std::ostringstream out;
  out << kSnapshotMagic << '\n';
  out << "format_version " << kSnapshotVersion << '\n';
  out << "policy_name " << to_string(config_.kind) << '\n';
  out << "d " << dimension_ << '\n';
  out << "K " << arms_.size() << '\n';
  out << "hyper ";
  for (double v : {config_.epsilon, config_.alpha, config_.lambda, config_.thompson_v, config_.p_min}) {
    put_double(out, v);
    out << ' ';
  }
  out << config_.thompson_resamples << '\n';
  out << "rng " << rng_.state() << '\n';
  const auto d = static_cast<Eigen::Index>(dimension_);
  for (std::size_t a = 0; a < arms_.size(); ++a) {
    const auto& arm = arms_[a];
    out << "arm " << a << ' ' << arm.pulls << '\n';
    out << "gram";
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        out << ' ';
        put_double(out, arm.gram(i, j));
      }
    }
    out << "\nchol";
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        out << ' ';
        put_double(out, arm.chol(i, j));
      }
    }
    out << "\nreward";
    for (Eigen::Index i = 0; i < d; ++i) {
      out << ' ';
      put_double(out, arm.reward(i));
    }
    out << '\n';
  }
  out << "end\n";
  return out.str();
}

PolicyState PolicyState::restore(std::string_view bytes) {
  SnapshotReader in(bytes);
  if (!bytes.starts_with(kSnapshotMagic)) throw SnapshotError("not a policy snapshot");
  in.line(kSnapshotMagic);
  const auto version = in.line("format_version");
  if (version.size() != 2 || parse_uint(version[1]) != kSnapshotVersion) {
    throw SnapshotError("unsupported snapshot version");
  }
  const auto name = in.line("policy_name");
  if (name.size() != 2) throw SnapshotError("bad policy_name line");
  PolicyConfig config;
  try {
    config.kind = policy_kind_from_string(name[1]);
  } catch (const ValidationError& e) {
    throw SnapshotError(e.what());
  }
  const auto d_line = in.line("d");
  const auto k_line = in.line("K");
  if (d_line.size() != 2 || k_line.size() != 2) throw SnapshotError("bad header");
  const auto dimension = parse_uint(d_line[1]);
  const auto arm_count = parse_uint(k_line[1]);
  const auto hyper = in.line("hyper");
  if (hyper.size() != 7) throw SnapshotError("bad hyper line");
  config.epsilon = parse_double(hyper[1]);
  config.alpha = parse_double(hyper[2]);
  config.lambda = parse_double(hyper[3]);
  config.thompson_v = parse_double(hyper[4]);
  config.p_min = parse_double(hyper[5]);
  config.thompson_resamples = static_cast<int>(parse_uint(hyper[6]));

  std::optional<PolicyState> state;
  try {
    state.emplace(config, dimension, arm_count, 0);
  } catch (const ValidationError& e) {
    throw SnapshotError(e.what());
  }
  if (!state->rng_.set_state(std::string(in.rest_of_line("rng")))) {
    throw SnapshotError("bad rng state");
  }
  const auto d = static_cast<Eigen::Index>(dimension);
  const std::size_t tri = dimension * (dimension + 1) / 2;
  for (std::size_t a = 0; a < arm_count; ++a) {
    const auto header = in.line("arm");
    if (header.size() != 3 || parse_uint(header[1]) != a) throw SnapshotError("bad arm header");
    auto& arm = state->arms_[a];
    arm.pulls = parse_uint(header[2]);
    const auto gram = parse_doubles(in.line("gram"), tri);
    const auto chol = parse_doubles(in.line("chol"), tri);
    const auto reward = parse_doubles(in.line("reward"), dimension);
    std::size_t n = 0;
    arm.chol.setZero();
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j, ++n) {
        arm.gram(i, j) = gram[n];
        arm.gram(j, i) = gram[n];
        arm.chol(i, j) = chol[n];
      }
      if (!(arm.chol(i, i) > kSpdTolerance)) throw SnapshotError("snapshot factor is not positive definite");
    }
    for (Eigen::Index i = 0; i < d; ++i) arm.reward(i) = reward[static_cast<std::size_t>(i)];
    state->refresh_theta(arm);
  }
  in.line("end");
  if (!in.at_end()) throw SnapshotError("trailing bytes after snapshot");
  return std::move(*state);
}

std::string PolicyState::digest() const { return hex_digest(fnv1a64(snapshot())); }

}  // namespace agentbuddy
