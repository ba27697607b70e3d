// agentbuddy: serve / simulate / replay / eval / ask.

#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "agentbuddy/config.hpp"
#include "agentbuddy/evaluation.hpp"
#include "agentbuddy/policy.hpp"
#include "agentbuddy/service.hpp"
#include "agentbuddy/simulator.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro that
// collides with Eigen's parameter names.
#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

using namespace agentbuddy;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
  if (!out.flush()) throw std::runtime_error("cannot write " + path);
}

json pulls_json(const std::vector<std::uint64_t>& pulls) {
  json out = json::array();
  for (auto p : pulls) out.push_back(p);
  return out;
}

ServiceConfig load_service_config(const std::string& path) {
  auto kv = KeyValueConfig::load(path);
  kv.apply_env_overrides(service_config_keys());
  return service_config_from(kv);
}

int serve(const std::string& config_path) {
  // Signals are handled on a dedicated thread so shutdown can stop the
  // server and write the snapshot outside signal context.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  AgentBuddyService service(load_service_config(config_path));
  httplib::Server server;
  bind_routes(server, service);

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });

  const auto& cfg = service.config();
  std::cerr << "agentbuddy listening on " << cfg.host << ":" << cfg.port << " with "
            << service.registry().size() << " arms\n";
  const bool ok = server.listen(cfg.host, cfg.port);
  if (!ok) {
    std::cerr << "failed to listen on " << cfg.host << ":" << cfg.port << "\n";
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  service.expire_pending();
  service.save_snapshot();
  std::cerr << "snapshot written to " << cfg.snapshot_path << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual-bandit answer router for support agents"};
  app.require_subcommand(1);

  std::string config_path;
  auto* serve_cmd = app.add_subcommand("serve", "Run the REST service");
  serve_cmd->add_option("--config", config_path, "Service config file")->required()->check(CLI::ExistingFile);

  std::string env_path, policy_name = "linucb", out_path, log_path, snapshot_path;
  std::uint64_t rounds = 1000, seed = 1;
  PolicyConfig policy;
  auto add_hyper = [&policy](CLI::App* cmd) {
    cmd->add_option("--epsilon", policy.epsilon, "epsilon_greedy exploration rate");
    cmd->add_option("--alpha", policy.alpha, "linucb confidence multiplier");
    cmd->add_option("--lambda", policy.lambda, "ridge prior");
    cmd->add_option("--thompson-v", policy.thompson_v, "lin_thompson posterior scale");
    cmd->add_option("--p-min", policy.p_min, "propensity floor");
  };

  auto* sim_cmd = app.add_subcommand("simulate", "Run the synthetic environment");
  sim_cmd->add_option("--env", env_path, "Environment config file (env.* keys)")->check(CLI::ExistingFile);
  sim_cmd->add_option("--policy", policy_name, "uniform|epsilon_greedy|linucb|lin_thompson");
  sim_cmd->add_option("--rounds", rounds, "Number of rounds")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", seed, "Run seed");
  sim_cmd->add_option("--out", out_path, "Reward curve CSV");
  sim_cmd->add_option("--log", log_path, "Interaction log (JSONL)");
  sim_cmd->add_option("--snapshot", snapshot_path, "Write the final policy snapshot here");
  add_hyper(sim_cmd);

  std::size_t arms = 0;
  auto* replay_cmd = app.add_subcommand("replay", "Replay a logged interaction stream");
  replay_cmd->add_option("--log", log_path, "Interaction log (JSONL)")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--policy", policy_name, "Policy to replay");
  replay_cmd->add_option("--seed", seed, "Policy seed");
  replay_cmd->add_option("--arms", arms, "Number of arms (default: inferred)");
  replay_cmd->add_option("--out", out_path, "Replay metrics CSV");
  replay_cmd->add_option("--snapshot", snapshot_path, "Write the final policy snapshot here");
  add_hyper(replay_cmd);

  std::string target_path;
  auto* eval_cmd = app.add_subcommand("eval", "Off-policy value of a snapshot on a log");
  eval_cmd->add_option("--log", log_path, "Interaction log (JSONL)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--target", target_path, "Policy snapshot")->required()->check(CLI::ExistingFile);

  std::string utterance, session_id = "cli";
  auto* ask_cmd = app.add_subcommand("ask", "One-shot local suggestion");
  ask_cmd->add_option("--config", config_path, "Service config file")->required()->check(CLI::ExistingFile);
  ask_cmd->add_option("--utterance", utterance, "Customer question")->required();
  ask_cmd->add_option("--session", session_id, "Session id");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(config_path);

    if (*sim_cmd) {
      policy.kind = policy_kind_from_string(policy_name);
      KeyValueConfig kv = env_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(env_path);
      SyntheticEnv env(env_config_from(kv));
      SimulationOptions options;
      if (!log_path.empty()) options.log_path = log_path;
      const auto result = run_simulation(env, policy, rounds, seed, options);
      if (!out_path.empty()) write_file(out_path, result.metrics.csv());
      if (!snapshot_path.empty()) write_file(snapshot_path, result.state.snapshot());
      json summary{{"policy", policy_name},
                   {"rounds", rounds},
                   {"seed", seed},
                   {"cumulative_reward", result.metrics.cumulative_reward},
                   {"cumulative_regret", cumulative_regret(result.metrics)},
                   {"pulls", pulls_json(result.metrics.pulls)},
                   {"snapshot_digest", result.state.digest()}};
      std::cout << summary.dump(2) << "\n";
      return 0;
    }

    if (*replay_cmd) {
      policy.kind = policy_kind_from_string(policy_name);
      const auto log = read_log(log_path);
      const auto result = replay(log, policy, seed, arms);
      if (!out_path.empty()) write_file(out_path, result.metrics.csv);
      if (!snapshot_path.empty()) write_file(snapshot_path, result.state.snapshot());
      json summary{{"policy", policy_name},
                   {"records", result.metrics.rounds},
                   {"matched", result.metrics.matched},
                   {"cumulative_reward", result.metrics.cumulative_reward},
                   {"pulls", pulls_json(result.metrics.pulls)},
                   {"snapshot_digest", result.state.digest()}};
      std::cout << summary.dump(2) << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const auto log = read_log(log_path);
      const auto target = PolicyState::restore(read_file(target_path));
      const auto pick = target_from(target);
      json summary{{"records", log.size()},
                   {"target_policy", target.policy_name()},
                   {"ips", ips_estimate(log, pick)}};
      try {
        summary["snips"] = snips_estimate(log, pick);
      } catch (const EstimationError& e) {
        summary["snips"] = nullptr;
        summary["snips_error"] = e.what();
      }
      std::cout << summary.dump(2) << "\n";
      return 0;
    }

    if (*ask_cmd) {
      auto cfg = load_service_config(config_path);
      cfg.log_path.clear();
      AgentBuddyService service(std::move(cfg));
      const auto response = service.handle_suggest({{"session_id", session_id}, {"utterance", utterance}});
      std::cout << response.body.dump(2) << "\n";
      return response.status == 200 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
