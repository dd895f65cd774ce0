// uwbrel: simulate, fit-bias, estimate, evaluate, dop.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uwbrel/uwbrel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uwbrel;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

int verbosity = 0;

void note(const std::string& msg) {
  if (verbosity > 0) std::cerr << "uwbrel: " << msg << '\n';
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json versions() {
  return {{"uwbrel", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION},
          {"compiler", __VERSION__}};
}

/// run_meta.json inside a directory target, or <file>.run_meta.json beside a file target.
void write_run_meta(const fs::path& target, bool target_is_dir, const std::string& command, const json& config,
                    std::optional<std::uint64_t> seed) {
  json meta{{"command", command},
            {"config", config},
            {"config_hash", hex(fnv1a(config.dump()))},
            {"versions", versions()}};
  meta["seed"] = seed ? json(*seed) : json(nullptr);
  const fs::path path = target_is_dir ? target / "run_meta.json" : fs::path(target.string() + ".run_meta.json");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResourceError("cannot write " + path.string());
  out << meta.dump(2) << '\n';
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResourceError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ValidationError(what + " not found: " + p.string());
}

void prepare_output_dir(const fs::path& dir) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ValidationError("output is not a directory: " + dir.string());
  fs::create_directories(dir);
}

void prepare_output_file(const fs::path& file) {
  if (fs::is_directory(file)) throw ValidationError("output is a directory: " + file.string());
  const fs::path parent = file.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

struct FlagOverrides {
  std::optional<bool> el_bias, z_fixed, huber;

  void add_to(CLI::App* app) {
    app->add_flag("--el-bias,!--no-el-bias", el_bias, "Subtract the learned elevation bias (default on)");
    app->add_flag("--z-fixed,!--no-z-fixed", z_fixed, "Constrain relative z to the commanded envelope (default on)");
    app->add_flag("--huber,!--no-huber", huber, "Huber loss instead of squared loss (default on)");
  }

  void apply(SolverConfig& c) const {
    if (el_bias) c.ablation.el_bias = *el_bias;
    if (z_fixed) c.ablation.z_fixed = *z_fixed;
    if (huber) {
      c.ablation.huber = *huber;
      c.loss.kind = *huber ? LossConfig::Kind::huber : LossConfig::Kind::squared;
    }
  }
};

SolverConfig load_solver_config(const std::string& path) {
  if (path.empty()) return {};
  require_exists(path, "solver config");
  return solver_config_from_json(read_json_file(path));
}

/// Attaches a bias model when el_bias is on and none is configured: learned
/// from the log's own ground truth.
void ensure_bias(SolverConfig& cfg, const SimulationLog& log, int degree, json& provenance) {
  if (!cfg.ablation.el_bias || cfg.bias) return;
  const BiasFit fit = learn_bias_from_log(log, degree);
  cfg.bias = fit.model;
  provenance = {{"bias", "learned from input log"},
                {"degree", degree},
                {"samples", fit.sample_count},
                {"rms_residual_m", fit.rms_residual}};
  note("learned degree-" + std::to_string(degree) + " bias from " + std::to_string(fit.sample_count) + " samples");
}

// ---- subcommands

int cmd_simulate(const std::string& scenario_path, const std::string& out, std::optional<std::uint64_t> seed,
                 std::optional<double> duration) {
  require_exists(scenario_path, "scenario");
  json sj = read_json_file(scenario_path);
  if (seed) sj["seed"] = *seed;
  if (duration) sj["duration_s"] = *duration;
  Scenario sc = scenario_from_json(sj);
  prepare_output_dir(out);
  note("simulating '" + sc.name + "' for " + std::to_string(sc.duration) + " s");
  const SimulationLog log = run(sc);
  write_bundle(out, log);
  write_run_meta(out, true, "simulate", scenario_to_json(sc), sc.seed);
  note("wrote " + std::to_string(log.ranges.size()) + " ranges to " + out);
  return kExitOk;
}

int cmd_fit_bias(const std::string& input, int degree, const std::string& out) {
  require_exists(input, "input");
  if (degree < 0) throw ValidationError("degree must be >= 0");
  prepare_output_file(out);
  const auto table = csv::read_table(input);
  std::vector<ElevationSample> samples;
  std::string source;
  if (table.column("elevation_deg") >= 0 && table.column("error_m") >= 0) {
    const int ce = table.require("elevation_deg"), cr = table.require("error_m");
    for (const auto& row : table.rows) {
      samples.push_back({csv::parse_double(row[ce], "elevation_deg"), csv::parse_double(row[cr], "error_m")});
    }
    source = "elevation samples";
  } else {
    // A bundle's ranges.csv: ground truth comes from the sibling files.
    const fs::path dir = fs::path(input).parent_path();
    if (!fs::exists(dir / "manifest.json") || !fs::exists(dir / "poses.csv")) {
      throw SchemaError("fit-bias: input has neither elevation_deg,error_m columns nor a bundle manifest beside it");
    }
    samples = elevation_samples(read_bundle(dir.empty() ? fs::path(".") : dir));
    source = "bundle ranges with ground truth";
  }
  const BiasFit fit = fit_bias_polynomial(samples, degree);
  json j = bias_to_json(fit.model);
  j["fit"] = {{"sample_count", fit.sample_count},
              {"rms_residual_m", fit.rms_residual},
              {"max_abs_residual_m", fit.max_abs_residual},
              {"source", source}};
  write_json(out, j);
  write_run_meta(out, false, "fit-bias", {{"input", input}, {"degree", degree}}, std::nullopt);
  note("fit " + std::to_string(fit.sample_count) + " samples, rms " + std::to_string(fit.rms_residual) + " m");
  return kExitOk;
}

int cmd_estimate(const std::string& bundle, const std::string& config_path, const std::string& bias_path,
                 const FlagOverrides& flags, int bias_degree, double period, const std::string& out) {
  require_exists(bundle, "bundle");
  SolverConfig cfg = load_solver_config(config_path);
  if (!bias_path.empty()) {
    require_exists(bias_path, "bias model");
    cfg.bias = bias_from_json(read_json_file(bias_path));
  }
  flags.apply(cfg);
  if (!(period >= 0.0)) throw ValidationError("--estimate-period must be >= 0");
  prepare_output_dir(out);

  const SimulationLog log = read_bundle(bundle);
  json provenance = json::object();
  ensure_bias(cfg, log, bias_degree, provenance);
  ReplayOptions opt;
  opt.solver = cfg;
  opt.estimate_period_s = period;
  note("replaying " + std::to_string(log.ranges.size()) + " ranges");
  const ReplayResult res = replay(log, opt);

  write_estimates_csv(fs::path(out) / "estimates.csv", res.estimates);
  write_json(fs::path(out) / "solver.json", solver_config_to_json(cfg));
  json diag = json::object();
  for (const auto& [id, d] : res.diagnostics) {
    diag[id] = {{"unknown_agent_ranges", d.unknown_agent_ranges},
                {"foreign_ranges", d.foreign_ranges},
                {"skipped_invalid", d.skipped_invalid},
                {"skipped_unobservable", d.skipped_unobservable},
                {"stale_messages", d.stale_messages}};
  }
  json msgs = json::array();
  for (const auto& m : res.messages) {
    msgs.push_back({{"time_s", m.time}, {"sender", m.sender}, {"kind", to_string(m.kind)}, {"seq", m.seq}});
  }
  write_json(fs::path(out) / "diagnostics.json", {{"agents", diag}, {"messages", msgs}, {"provenance", provenance}});
  write_run_meta(out, true, "estimate",
                 {{"bundle", bundle}, {"solver", solver_config_to_json(cfg)}, {"estimate_period_s", period}},
                 log.scenario.seed);
  note("wrote " + std::to_string(res.estimates.size()) + " estimates to " + out);
  return kExitOk;
}

int cmd_evaluate(const std::string& est_dir, const std::string& truth_dir, bool ablation, unsigned jobs,
                 const FlagOverrides& flags, double period, const std::string& out) {
  require_exists(est_dir, "estimate directory");
  require_exists(truth_dir, "truth bundle");
  prepare_output_file(out);
  const SimulationLog log = read_bundle(truth_dir);

  if (!ablation) {
    const auto rows = read_estimates_csv(fs::path(est_dir) / "estimates.csv");
    const auto records = align_with_truth(rows, TruthTrack(log.poses));
    const MetricSummary s = summarize(records);
    csv::write_table(out, summary_csv(s));
    std::cout << "count " << s.count << "  APE mean " << s.mean_ape << " m  max " << s.max_ape << " m  std "
              << s.std_ape << " m  AHE mean " << s.mean_ahe << " deg  max " << s.max_ahe << " deg  std " << s.std_ahe
              << " deg\n";
    write_run_meta(out, false, "evaluate", {{"estimates", est_dir}, {"truth", truth_dir}, {"ablation", false}},
                   log.scenario.seed);
    return kExitOk;
  }

  SolverConfig cfg;
  if (fs::exists(fs::path(est_dir) / "solver.json")) cfg = solver_config_from_json(read_json_file(fs::path(est_dir) / "solver.json"));
  flags.apply(cfg);
  json provenance = json::object();
  if (!cfg.bias) {
    SolverConfig probe = cfg;
    probe.ablation.el_bias = true;
    ensure_bias(probe, log, 6, provenance);
    cfg.bias = probe.bias;
  }
  ReplayOptions opt;
  opt.solver = cfg;
  opt.estimate_period_s = period;
  note("running 8 ablation rows with " + std::to_string(jobs) + " job(s)");
  const auto rows = ablation_table(log, opt, jobs);
  csv::write_table(out, ablation_csv(rows));
  std::cout << ablation_text(rows);
  write_run_meta(out, false, "evaluate",
                 {{"estimates", est_dir},
                  {"truth", truth_dir},
                  {"ablation", true},
                  {"solver", solver_config_to_json(cfg)},
                  {"estimate_period_s", period},
                  {"bias_provenance", provenance},
                  {"std", "population"},
                  {"ape", "3d"}},
                 log.scenario.seed);
  for (const auto& r : rows) {
    if (!r.error.empty()) std::cerr << "uwbrel: ablation row failed: " << r.error << '\n';
  }
  return kExitOk;
}

int cmd_dop(const std::string& array_path, const std::string& target, const std::string& out) {
  require_exists(array_path, "array");
  std::vector<double> xyz;
  for (const auto& cell : csv::split(target)) xyz.push_back(csv::parse_double(cell, "target coordinate"));
  if (xyz.size() != 3) throw ValidationError("--target expects x,y,z");
  if (!out.empty()) prepare_output_file(out);
  const AntennaArray arr = array_from_json(read_json_file(array_path));
  std::vector<Vec3> bases;
  for (std::size_t k = 0; k < arr.count(); ++k) bases.push_back(arr.point(k));
  const DopReport r = position_dop(bases, Vec3(xyz[0], xyz[1], xyz[2]));
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  const json j{{"position_dop", num(r.position_dop)},
               {"horizontal_dop", num(r.horizontal_dop)},
               {"vertical_dop", num(r.vertical_dop)},
               {"geometry_matrix_condition", num(r.geometry_matrix_condition)},
               {"degenerate", r.degenerate}};
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) {
    write_json(out, j);
    write_run_meta(out, false, "dop", {{"array", array_path}, {"target", target}}, std::nullopt);
  }
  return kExitOk;
}

/// Bad input or configuration exits 1; anything else that fails exits 2.
int exit_code_for(const std::exception& e) {
  const bool validation = dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
                          dynamic_cast<const DomainError*>(&e) || dynamic_cast<const InputError*>(&e) ||
                          dynamic_cast<const ArityError*>(&e) || dynamic_cast<const DecodeError*>(&e);
  return validation ? kExitValidation : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UWB range-only relative localization: simulation, bias fitting, estimation, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("-v,--verbose", verbosity, "Diagnostics on standard error (repeatable)");
  app.set_version_flag("--version", kVersion);

  std::string input, out, config, bias, target, truth;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  int degree = 6;
  double period = 0.0;
  unsigned jobs = 1;
  bool ablation = false;
  FlagOverrides flags;

  auto* sim = app.add_subcommand("simulate", "Run a scenario and write a log bundle");
  sim->add_option("scenario", input, "Scenario JSON (full scenario or {\"preset\": name})")->required();
  sim->add_option("-o,--output", out, "Output bundle directory")->required();
  sim->add_option("--seed", seed, "Seed override (wins over the scenario seed)");
  sim->add_option("--duration", duration, "Duration override [s]");

  auto* fit = app.add_subcommand("fit-bias", "Fit the elevation bias polynomial");
  fit->add_option("input", input,
                  "CSV with elevation_deg,error_m [deg, m], or a bundle ranges.csv [m] with its manifest and poses")
      ->required();
  fit->add_option("--degree", degree, "Polynomial degree")->capture_default_str();
  fit->add_option("-o,--output", out, "Output bias model JSON")->required();

  auto* est = app.add_subcommand("estimate", "Replay protocol and estimator over a bundle");
  est->add_option("bundle", input, "Input bundle directory")->required();
  est->add_option("--config", config, "Solver config JSON");
  est->add_option("--bias", bias, "Bias model JSON (else learned from the bundle when el_bias is on)");
  est->add_option("--bias-degree", degree, "Degree when learning the bias")->capture_default_str();
  est->add_option("--estimate-period", period, "Minimum spacing of estimates per pair [s], 0 = every tick")
      ->capture_default_str();
  flags.add_to(est);
  est->add_option("-o,--output", out, "Output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Score estimates against ground truth, or run the flag ablation");
  ev->add_option("estimates", input, "Estimate directory from 'estimate'")->required();
  ev->add_option("--truth", truth, "Ground-truth bundle directory")->required();
  ev->add_flag("--ablation", ablation, "Run all 8 el-bias/z-fixed/huber rows over the truth bundle");
  ev->add_option("--jobs", jobs, "Parallel ablation rows")->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--estimate-period", period, "Estimate spacing for ablation rows [s]")->capture_default_str();
  flags.add_to(ev);
  ev->add_option("-o,--output", out, "Output CSV (summary, or the ablation table)")->required();

  auto* dop = app.add_subcommand("dop", "Dilution of precision of an antenna array for a target point");
  dop->add_option("array", input, "Array JSON {\"mounts\": [{x,y,z,roll,pitch,yaw}]} [m, deg]")->required();
  dop->add_option("--target", target, "Target point x,y,z [m]")->required();
  dop->add_option("-o,--output", out, "Also write the report JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*sim) return cmd_simulate(input, out, seed, duration);
    if (*fit) return cmd_fit_bias(input, degree, out);
    if (*est) return cmd_estimate(input, config, bias, flags, degree, period, out);
    if (*ev) return cmd_evaluate(input, truth, ablation, jobs, flags, period, out);
    if (*dop) return cmd_dop(input, target, out);
  } catch (const std::exception& e) {
    std::cerr << "uwbrel: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitValidation;
}
