// crisis-topics: run pipeline stages, sweep clustering settings, and serve
// the review API.

#include "crisis/pipeline.hpp"
#include "crisis/review_service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kStale = 3, kRuntime = 4 };

crisis::review::ReviewServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace crisis;
  CLI::App app{"Topic modeling and narrative analytics for crisis discussion corpora"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::optional<std::string> tz;
  bool verbose = false;
  app.add_option("--seed", seed, "Override the configured random seed");
  app.add_option("--tz", tz, "IANA time zone for temporal analytics");
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  std::string config_path, out_dir;
  std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
  auto add_stage = [&](const std::string& name, const std::string& help) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--config", config_path, "Pipeline configuration JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out_dir, "Artifact directory")->required();
    stage_cmds.emplace_back(name, cmd);
    return cmd;
  };
  add_stage("ingest", "Load, clean and tokenize the corpus");
  add_stage("lda", "Train the post topic model");
  add_stage("embed", "Embed comments");
  add_stage("cluster", "Reduce and cluster comment embeddings");
  add_stage("represent", "Describe comment clusters");
  add_stage("coherence", "Score topic coherence");
  add_stage("map", "Map topics to narrative categories and label instances");
  add_stage("analyze", "Write analytics tables");
  add_stage("all", "Run every stage in order");

  std::string grid_path;
  std::size_t parallel = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid search over reduction and clustering settings");
  sweep_cmd->add_option("--grid", grid_path, "Grid JSON")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--config", config_path, "Pipeline configuration JSON")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out", out_dir, "Artifact directory")->required();
  sweep_cmd->add_option("--parallel", parallel, "Concurrent configurations")->check(CLI::PositiveNumber);

  int port = 8787;
  std::string host = "127.0.0.1";
  review::ServiceOptions serve_opts;
  std::string artifacts, static_dir, overrides, schema_file;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the review API");
  serve_cmd->add_option("--port", port, "Listening port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", host, "Listening address");
  serve_cmd->add_option("--artifacts", artifacts, "Artifact directory")->required()->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--static", static_dir, "Console assets directory")->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--overrides", overrides, "Override file (default <artifacts>/overrides.json)");
  serve_cmd->add_option("--schema", schema_file, "Schema JSON")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*serve_cmd) {
      serve_opts.artifacts = artifacts;
      serve_opts.static_dir = static_dir;
      serve_opts.overrides_file = overrides;
      serve_opts.schema_file = schema_file;
      review::ReviewServer server(serve_opts);
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      spdlog::info("review service listening on http://{}:{}", host, bound);
      server.listen();
      g_server = nullptr;
      return kOk;
    }

    auto cfg = pipeline::PipelineConfig::load(config_path);
    cfg.seed_override = seed;
    cfg.time_zone_override = tz;
    pipeline::Pipeline p(std::move(cfg), out_dir);

    if (*sweep_cmd) {
      const auto result = p.run_sweep(pipeline::load_grid(grid_path), parallel);
      std::cout << sweep::score_table_csv(result);
      return kOk;
    }
    for (const auto& [name, cmd] : stage_cmds) {
      if (!*cmd) continue;
      if (name == "all")
        p.run_all();
      else
        p.run(pipeline::parse_stage(name));
    }
    return kOk;
  } catch (const StaleInputError& e) {
    spdlog::error("{}", e.what());
    return kStale;
  } catch (const ConfigError& e) {
    spdlog::error("configuration: {}", e.what());
    return kConfig;
  } catch (const SchemaError& e) {
    spdlog::error("schema: {}", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
}
