// beaconloc command-line tool: simulate, locate, evaluate, ablate, compare, serve.

#include "beaconloc/beaconloc.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace beaconloc;

namespace {

struct Common {
  double window_seconds = kDefaultWindowSeconds;
  std::optional<double> window_origin;
  std::optional<double> speed_of_sound;
};

void add_windowing(CLI::App* cmd, Common& c, const char* origin_default = "each target's first timestamp") {
  cmd->add_option("--window-seconds", c.window_seconds, "Window length in seconds")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--window-origin", c.window_origin,
                  std::string("Target-clock time where window 0 starts (default: ") + origin_default + ")");
}

void add_speed(CLI::App* cmd, Common& c) {
  cmd->add_option("--speed-of-sound", c.speed_of_sound, "Override the configured speed of sound, m/s")
      ->check(CLI::PositiveNumber);
}

TestbedConfig load_config(const std::string& path, const Common& c) {
  auto tb = load_testbed(path);
  if (c.speed_of_sound) tb.speed_of_sound = *c.speed_of_sound;
  tb.validate();
  return tb;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::vector<BeaconObservation> load_observations(const std::string& path) {
  auto in = open_in(path);
  return parse_observations(in);
}

std::vector<TargetPoint> load_truth(const std::string& path) {
  auto in = open_in(path);
  return parse_truth(in);
}

SolverParams params_for(const std::string& variant, const TestbedConfig& tb) {
  const auto v = parse_variant(variant);
  if (!v) throw std::invalid_argument("unknown variant '" + variant + "'");
  return SolverParams::variant(v->mode, v->robust, tb.dimension);
}

// Subset file: one subset per line, "<label> <id>,<id>,...". Blank lines and '#' comments are skipped.
std::vector<AnchorSubset> load_subsets(const std::string& path) {
  auto in = open_in(path);
  std::vector<AnchorSubset> out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (detail::is_blank_or_comment(text)) continue;
    const auto tok = detail::split_ws(text);
    if (tok.size() != 2) throw ParseError(line, "", "expected '<label> <id,id,...>'");
    AnchorSubset s;
    s.label = std::string(tok[0]);
    for (int id : detail::parse_id_list(tok[1], line)) s.anchors.insert(id);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::invalid_argument("subset file " + path + " lists no subsets");
  return out;
}

WindowingOptions windowing_of(const Common& c) { return {c.window_seconds, c.window_origin}; }

void write_row(std::ostream& out, const std::string& label, std::size_t windows, const ErrorSummary& s) {
  out << label << ' ' << windows << ' ' << s.per_fix_errors.size() << ' ' << format_decimal(s.mean) << ' '
      << format_decimal(s.q95) << '\n';
}

int run_serve(const std::string& config_path, std::optional<int> port_flag, const std::string& variant,
              const std::string& bind, double retention, const Common& c) {
  const auto tb = load_config(config_path, c);
  int port = 7878;
  if (const char* env = std::getenv("BEACONLOC_PORT")) port = detail::parse_number<int>(env, 0, "BEACONLOC_PORT");
  if (port_flag) port = *port_flag;
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range");

  ServerOptions opts;
  opts.window_length = c.window_seconds;
  opts.window_origin = c.window_origin.value_or(0.0);
  opts.retention = retention;
  opts.bind_address = bind;

  // Block the shutdown signals before any thread starts so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  LocationServer server(tb, params_for(variant, tb), opts);
  const auto bound = server.start(static_cast<std::uint16_t>(port));
  std::cerr << "beaconloc: serving on " << bind << ':' << bound << '\n';
  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "beaconloc: shutting down\n";
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asynchronous acoustic-beacon TDoA localization toolkit"};
  app.require_subcommand(1);
  Common common;

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run a scenario and write observations.txt and truth.txt");
  std::string scenario_path, out_dir;
  std::optional<std::uint64_t> seed;
  sim->add_option("scenario", scenario_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  sim->add_option("-o,--output", out_dir, "Output directory")->required();
  sim->add_option("--seed", seed, "Override the scenario seed");
  add_speed(sim, common);

  // locate
  auto* loc = app.add_subcommand("locate", "Compute one fix per target and window");
  std::string obs_path, config_path, variant = "all-robust", fixes_out;
  std::optional<double> ranging_thr, ddoa_thr;
  loc->add_option("observations", obs_path, "Observation file")->required()->check(CLI::ExistingFile);
  loc->add_option("config", config_path, "Testbed JSON file")->required()->check(CLI::ExistingFile);
  loc->add_option("--variant", variant, "all-raw | consec-raw | all-robust | consec-robust")->capture_default_str();
  loc->add_option("-o,--output", fixes_out, "Fix file (default: stdout)");
  loc->add_option("--ranging-err-thr", ranging_thr, "Anchor ranging error threshold, m")->check(CLI::PositiveNumber);
  loc->add_option("--ddoa-err-thr", ddoa_thr, "Distance-difference error threshold, m")->check(CLI::PositiveNumber);
  add_windowing(loc, common);
  add_speed(loc, common);

  // eval
  auto* ev = app.add_subcommand("eval", "Summarize fix errors against ground truth");
  std::string fixes_path, truth_path, summary_out;
  ev->add_option("fixes", fixes_path, "Fix file")->required()->check(CLI::ExistingFile);
  ev->add_option("truth", truth_path, "Ground-truth file")->required()->check(CLI::ExistingFile);
  ev->add_option("-o,--output", summary_out, "Summary file (default: stdout)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Re-run localization on anchor subsets");
  std::string subsets_path, ablate_truth, ablate_out, ablate_variant = "all-robust";
  ab->add_option("observations", obs_path, "Observation file")->required()->check(CLI::ExistingFile);
  ab->add_option("config", config_path, "Testbed JSON file")->required()->check(CLI::ExistingFile);
  ab->add_option("--subsets", subsets_path, "Subset file (default: the 4..8-anchor ladder)")->check(CLI::ExistingFile);
  ab->add_option("--truth", ablate_truth, "Ground-truth file")->required()->check(CLI::ExistingFile);
  ab->add_option("--variant", ablate_variant, "Variant to run")->capture_default_str();
  ab->add_option("-o,--output", ablate_out, "Table file (default: stdout)");
  add_windowing(ab, common);
  add_speed(ab, common);

  // compare
  auto* cmp = app.add_subcommand("compare", "Run all four variants on the same windows");
  std::string cmp_truth, cmp_out;
  cmp->add_option("observations", obs_path, "Observation file")->required()->check(CLI::ExistingFile);
  cmp->add_option("config", config_path, "Testbed JSON file")->required()->check(CLI::ExistingFile);
  cmp->add_option("--truth", cmp_truth, "Ground-truth file")->required()->check(CLI::ExistingFile);
  cmp->add_option("-o,--output", cmp_out, "Table file (default: stdout)");
  add_windowing(cmp, common);
  add_speed(cmp, common);

  // serve
  auto* srv = app.add_subcommand("serve", "Run the location server");
  std::optional<int> port;
  std::string bind = "127.0.0.1", serve_variant = "all-robust";
  double retention = 0.0;
  srv->add_option("config", config_path, "Testbed JSON file")->required()->check(CLI::ExistingFile);
  srv->add_option("--port", port, "TCP port (default: $BEACONLOC_PORT or 7878; 0 picks a free port)");
  srv->add_option("--bind", bind, "Bind address")->capture_default_str();
  srv->add_option("--variant", serve_variant, "Variant to run")->capture_default_str();
  srv->add_option("--retention", retention, "Seconds of target time to keep (0 keeps everything)")
      ->check(CLI::NonNegativeNumber);
  add_windowing(srv, common, "0");
  add_speed(srv, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "beaconloc: " << e.what() << '\n';
    return 2;
  }

  try {
    if (sim->parsed()) {
      auto sc = load_scenario(scenario_path);
      if (seed) sc.seed = *seed;
      if (common.speed_of_sound) sc.testbed.speed_of_sound = *common.speed_of_sound;
      const auto result = simulate(sc);
      fs::create_directories(out_dir);
      auto obs = open_out((fs::path(out_dir) / "observations.txt").string());
      write_observations(obs, result.observations);
      auto truth = open_out((fs::path(out_dir) / "truth.txt").string());
      for (const auto& t : result.truth.targets) truth << format_truth(t) << '\n';
      std::cerr << "beaconloc: " << result.observations.size() << " observations, " << result.truth.emissions.size()
                << " beacons\n";
    } else if (loc->parsed()) {
      const auto tb = load_config(config_path, common);
      auto params = params_for(variant, tb);
      if (ranging_thr) params.ranging_err_thr = *ranging_thr;
      if (ddoa_thr) params.ddoa_err_thr = *ddoa_thr;
      const auto records = locate_stream(load_observations(obs_path), tb, params, windowing_of(common));
      std::ofstream file;
      if (!fixes_out.empty()) file = open_out(fixes_out);
      std::ostream& out = fixes_out.empty() ? std::cout : file;
      for (const auto& r : records) out << format_record(r) << '\n';
    } else if (ev->parsed()) {
      auto in = open_in(fixes_path);
      const auto fixes = fixes_only(parse_fixes(in));
      const auto truth = load_truth(truth_path);
      const auto summary = compute_error_summary(fixes, truth);
      const auto bias = compute_bias(fixes, truth);
      std::ofstream file;
      if (!summary_out.empty()) file = open_out(summary_out);
      write_summary(summary_out.empty() ? std::cout : file, summary, &bias);
    } else if (ab->parsed()) {
      const auto tb = load_config(config_path, common);
      const auto subsets = subsets_path.empty() ? default_ablation_subsets() : load_subsets(subsets_path);
      const auto rows = run_ablation(load_observations(obs_path), tb, params_for(ablate_variant, tb),
                                     load_truth(ablate_truth), subsets, windowing_of(common));
      std::ofstream file;
      if (!ablate_out.empty()) file = open_out(ablate_out);
      std::ostream& out = ablate_out.empty() ? std::cout : file;
      out << "# subset windows fixes mean_m q95_m (nearest-rank)\n";
      for (const auto& r : rows) write_row(out, r.subset.label, r.windows, r.summary);
    } else if (cmp->parsed()) {
      const auto tb = load_config(config_path, common);
      const auto results = compare_variants(load_observations(obs_path), tb, load_truth(cmp_truth),
                                            windowing_of(common), SolverParams::variant(PairingMode::all_pairs, true, tb.dimension));
      std::ofstream file;
      if (!cmp_out.empty()) file = open_out(cmp_out);
      std::ostream& out = cmp_out.empty() ? std::cout : file;
      out << "# variant windows fixes mean_m q95_m (nearest-rank)\n";
      for (const auto& r : results) write_row(out, r.variant.name, r.windows, r.summary);
    } else if (srv->parsed()) {
      return run_serve(config_path, port, serve_variant, bind, retention, common);
    }
  } catch (const std::exception& e) {
    std::cerr << "beaconloc: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
