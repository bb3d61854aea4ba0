// crowdmap command-line front end: map service, client, simulation and
// experiment drivers.

#include "crowdmap/crowdmap.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

using namespace crowdmap;

namespace {

int serve(const std::string& addr, const std::string& log_path, const std::string& seeds_path, double gate,
          const std::string& snapshot_path, std::uint64_t snapshot_every, const std::string& objective) {
  // Block termination signals before any thread starts so sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ServiceConfig config;
  config.log_path = log_path;
  if (!seeds_path.empty()) config.seeds = read_sign_list(seeds_path);
  config.ingest.gate_radius = gate;
  config.ingest.objective = objective_from_string(objective);
  if (!snapshot_path.empty()) config.snapshot_path = snapshot_path;
  config.snapshot_every = snapshot_every;

  MapService service(std::move(config));
  MapServer server(service, addr);
  server.start();
  const auto host = addr.substr(0, addr.rfind(':'));
  std::cout << "listening on " << host << ':' << server.port() << " revision "
            << service.current()->revision << std::endl;

  int sig = 0;
  sigwait(&signals, &sig);
  log().info("signal {} received, shutting down", sig);
  server.stop();
  return 0;
}

int ingest(const std::string& addr, const std::string& file, std::size_t batch_size) {
  const auto obs = read_observations(file);
  if (obs.empty()) throw InputDomainError("no observations in '" + file + "'");
  MapClient client(addr);
  const std::size_t step = batch_size == 0 ? obs.size() : batch_size;
  int status = 0;
  for (std::size_t i = 0; i < obs.size(); i += step) {
    const auto n = std::min(step, obs.size() - i);
    const json r = client.ingest(std::span(obs).subspan(i, n));
    std::cout << r.dump() << '\n';
    if (r.value("status", "") != "ok") status = 1;
  }
  return status;
}

int snapshot_cmd(const std::string& addr, const std::string& out_path) {
  MapClient client(addr);
  const json r = client.request({{"type", "snapshot"}});
  if (r.value("status", "") != "ok") {
    std::cerr << r.dump() << '\n';
    return 1;
  }
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot open '" + out_path + "' for writing");
  out << r.at("snapshot").dump() << '\n';
  std::cout << "revision " << r.at("snapshot").at("revision") << " landmarks "
            << r.at("snapshot").at("landmarks").size() << '\n';
  return 0;
}

int simulate(const std::string& scenario_path, std::optional<std::uint64_t> seed, const std::string& out,
             const std::string& obs_out, const std::string& gt_out, std::size_t sign_index) {
  auto config = scenario_path.empty() ? default_scenario() : load_scenario(scenario_path);
  if (seed) config.noise.seed = *seed;
  const auto result = run_convergence(config.scenario, config.noise, sign_index);
  emit_curves(result.points, out);
  if (!obs_out.empty()) {
    std::vector<LandmarkObservation> all;
    for (const auto& p : generate_all_passings(config.scenario, config.noise)) all.insert(all.end(), p.begin(), p.end());
    write_observations(obs_out, all);
  }
  if (!gt_out.empty()) {
    std::ofstream gt(gt_out);
    write_sign_list(gt, config.scenario.signs);
  }
  const auto& last = result.points.back();
  std::cout << "passings " << result.points.size() << " excluded_single " << result.excluded_single;
  if (last.collab_dist) std::cout << " final_collab_error " << *last.collab_dist;
  if (last.sigma_e) std::cout << " final_sigma " << *last.sigma_e << ' ' << *last.sigma_n;
  std::cout << '\n';
  return 0;
}

int experiment_loop(const std::string& scenario_path, std::uint64_t seed, int signs, const std::string& obs_out,
                    const std::string& gt_out) {
  auto config = scenario_path.empty() ? default_scenario() : load_scenario(scenario_path);
  config.noise.seed = seed;
  const auto data = make_loop_dataset(config.scenario, config.noise, signs);
  write_observations(obs_out, data.observations);
  std::ofstream gt(gt_out);
  if (!gt) throw IoError("cannot open '" + gt_out + "' for writing");
  write_sign_list(gt, data.groundtruth);
  std::cout << "signs " << signs << " observations " << data.observations.size() << '\n';
  return 0;
}

int experiment_superpose(const std::string& obs_path, const std::string& gt_path, const std::string& out) {
  const auto obs = read_observations(obs_path);
  const auto gt = read_sign_list(gt_path);
  const auto merged = superpose(obs, gt);
  write_observations(out, merged);
  std::cout << "observations " << merged.size() << " passings "
            << (merged.empty() ? 0 : merged.back().passing_id) << '\n';
  return 0;
}

int experiment_permute(const std::string& obs_path, const std::string& gt_path, int n_perm, std::uint64_t seed,
                       const std::string& out) {
  const auto obs = read_observations(obs_path);
  const auto gt = read_sign_list(gt_path);
  if (gt.empty()) throw ConfigError("ground truth file is empty");
  Rng rng(seed);
  const auto result = permutation_average(group_by_passing(obs), gt.front().position, n_perm, rng);
  emit_curves(result.points, out);
  const auto& last = result.points.back();
  std::cout << "passings " << result.points.size() << " permutations " << n_perm << " excluded_single "
            << result.excluded_single_passings;
  if (last.collab_dist) std::cout << " final_collab_error " << *last.collab_dist;
  if (last.single_dist) std::cout << " mean_single_error " << *last.single_dist;
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crowdsourced landmark map: service, client and experiments"};
  app.require_subcommand(1);

  std::string addr = "127.0.0.1:7400", log_path, seeds, snapshot_path, objective = "heading";
  double gate = kDefaultGateRadius;
  std::uint64_t snapshot_every = 100;
  auto* serve_cmd = app.add_subcommand("serve", "Run the map aggregation service");
  serve_cmd->add_option("--addr", addr, "host:port to listen on (port 0 picks a free port)");
  serve_cmd->add_option("--log", log_path, "Append-only observation log")->required();
  serve_cmd->add_option("--landmarks", seeds, "Landmark seed file (class[:payload] east north per line)");
  serve_cmd->add_option("--gate", gate, "Matching gate radius, meters")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--snapshot", snapshot_path, "Periodic snapshot file used to speed up recovery");
  serve_cmd->add_option("--snapshot-every", snapshot_every, "Revisions between snapshot files (0 disables)");
  serve_cmd->add_option("--objective", objective, "Triangulation objective")
      ->check(CLI::IsMember({"heading", "orthogonal"}));

  std::string file;
  std::size_t batch_size = 0;
  auto* ingest_cmd = app.add_subcommand("ingest", "Send an observation file to a running service");
  ingest_cmd->add_option("--addr", addr, "Service address");
  ingest_cmd->add_option("--file", file, "Newline-delimited observation records")->required();
  ingest_cmd->add_option("--batch-size", batch_size, "Observations per ingest request (0 = whole file)");

  std::string out;
  auto* snap_cmd = app.add_subcommand("snapshot", "Fetch a map snapshot from a running service");
  snap_cmd->add_option("--addr", addr, "Service address");
  snap_cmd->add_option("--out", out, "Output JSON file")->required();

  std::string scenario, obs_out, gt_out;
  std::optional<std::uint64_t> seed;
  std::size_t sign_index = 0;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the per-passing convergence study on a scenario");
  sim_cmd->add_option("--scenario", scenario, "Scenario file (defaults built in when omitted)");
  sim_cmd->add_option("--seed", seed, "Overrides noise.seed");
  sim_cmd->add_option("--out", out, "Error-curve CSV")->required();
  sim_cmd->add_option("--obs-out", obs_out, "Also write the simulated observations (jsonl)");
  sim_cmd->add_option("--groundtruth-out", gt_out, "Also write the scenario's sign positions");
  sim_cmd->add_option("--sign-index", sign_index, "Which scenario sign to track");

  auto* exp_cmd = app.add_subcommand("experiment", "Superposition and permutation experiments");
  exp_cmd->require_subcommand(1);

  std::uint64_t exp_seed = 0;
  int signs = 10;
  auto* loop_cmd = exp_cmd->add_subcommand("loop", "Synthesize a multi-sign loop dataset");
  loop_cmd->add_option("--scenario", scenario, "Scenario whose first sign and road are replicated");
  loop_cmd->add_option("--signs", signs, "Number of signs")->check(CLI::PositiveNumber);
  loop_cmd->add_option("--seed", exp_seed, "Noise seed");
  loop_cmd->add_option("--obs-out", obs_out, "Observations (jsonl)")->required();
  loop_cmd->add_option("--groundtruth-out", gt_out, "Sign positions, reference first")->required();

  std::string obs_path, gt_path;
  auto* sup_cmd = exp_cmd->add_subcommand("superpose", "Translate all signs' observations onto the reference");
  sup_cmd->add_option("--obs", obs_path, "Observations (jsonl)")->required();
  sup_cmd->add_option("--groundtruth", gt_path, "Sign positions; first entry is the reference")->required();
  sup_cmd->add_option("--out", out, "Superposed observations (jsonl)")->required();

  int n_perm = 1000;
  auto* perm_cmd = exp_cmd->add_subcommand("permute", "Average cumulative errors over shuffled passing orders");
  perm_cmd->add_option("--obs", obs_path, "Single-landmark observations (jsonl)")->required();
  perm_cmd->add_option("--groundtruth", gt_path, "Sign list whose first entry is the landmark truth")->required();
  perm_cmd->add_option("--n-perm", n_perm, "Number of permutations")->check(CLI::PositiveNumber);
  perm_cmd->add_option("--seed", exp_seed, "Shuffle seed");
  perm_cmd->add_option("--out", out, "Mean error-curve CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(addr, log_path, seeds, gate, snapshot_path, snapshot_every, objective);
    if (*ingest_cmd) return ingest(addr, file, batch_size);
    if (*snap_cmd) return snapshot_cmd(addr, out);
    if (*sim_cmd) return simulate(scenario, seed, out, obs_out, gt_out, sign_index);
    if (*loop_cmd) return experiment_loop(scenario, exp_seed, signs, obs_out, gt_out);
    if (*sup_cmd) return experiment_superpose(obs_path, gt_path, out);
    if (*perm_cmd) return experiment_permute(obs_path, gt_path, n_perm, exp_seed, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
