#include <iostream>

#include "CLI11.hpp"

#include "gazekb/cli.hpp"

namespace {

void add_engine_flags(CLI::App& app, gazekb::cli::EngineOverrides& e) {
  app.add_option("--mode", e.mode, "selection mode")->check(CLI::IsMember({"async", "sync"}));
  app.add_option("--dwell-frames", e.dwell_frames, "async dwell length in frames (default 30)");
  app.add_option("--trial-frames", e.trial_frames, "sync trial length in frames (default 60)");
  app.add_option("--alpha", e.alpha, "sync acceptance threshold on max/mean (default 6)");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace gazekb;
  CLI::App app{"gazekb: two-level nine-command gaze keyboard"};
  app.require_subcommand(1);

  cli::ServeOptions serve;
  std::optional<std::string> serve_target;
  auto* s = app.add_subcommand("serve", "run live sessions over the wire protocol");
  add_engine_flags(*s, serve.engine);
  s->add_option("--listen", serve.listen, "host:port")->capture_default_str();
  s->add_option("--log-dir", serve.log_dir, "directory for session logs")->capture_default_str();
  s->add_option("--layout", serve.layout, "layout JSON file")->check(CLI::ExistingFile);
  s->add_option("--target", serve_target, "default target sentence");
  s->add_option("--seed", serve.seed, "seed recorded in session log headers");

  cli::SimulateOptions sim;
  auto* m = app.add_subcommand("simulate", "run a simulated experiment");
  m->add_option("config", sim.config, "experiment config JSON")->required();
  add_engine_flags(*m, sim.engine);
  m->add_option("--out", sim.out_dir, "output directory")->capture_default_str();
  m->add_option("--seed", sim.seed, "experiment seed");
  m->add_option("--layout", sim.layout, "layout JSON file");
  m->add_option("--users", sim.users, "number of virtual users");
  m->add_option("--threads", sim.threads, "worker threads (0 = all cores)");

  std::string replay_path;
  auto* r = app.add_subcommand("replay", "verify a session log by deterministic replay");
  r->add_option("log", replay_path, "session log")->required();

  std::vector<std::string> report_paths;
  bool report_csv = false;
  auto* p = app.add_subcommand("report", "metrics table for session logs");
  p->add_option("logs", report_paths, "log files or directories");
  p->add_flag("--csv", report_csv, "CSV instead of a table");

  std::string layout_path;
  std::optional<std::string> sentence;
  auto* v = app.add_subcommand("validate-layout", "check a layout file");
  v->add_option("layout", layout_path, "layout JSON file")->required();
  v->add_option("--sentence", sentence, "sentence that must be typeable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kUsage;
  }

  try {
    if (*s) {
      if (serve_target) serve.target = utf8::decode(*serve_target);
      return cli::cmd_serve(serve, std::cout, std::cerr);
    }
    if (*m) return cli::cmd_simulate(sim, std::cout, std::cerr);
    if (*r) return cli::cmd_replay(replay_path, std::cout, std::cerr);
    if (*p) {
      std::vector<std::filesystem::path> paths(report_paths.begin(), report_paths.end());
      return cli::cmd_report(paths, std::cout, std::cerr, report_csv);
    }
    if (*v) {
      std::optional<std::u32string> s32;
      if (sentence) s32 = utf8::decode(*sentence);
      return cli::cmd_validate_layout(layout_path, s32, std::cout, std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsage;
  }
  return cli::kUsage;
}
