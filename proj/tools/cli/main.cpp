#include "config.hpp"
#include "dispatch.hpp"

#include "pcgf/errors.hpp"
#include "pcgf/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace pcgf::cli;

  CLI::App app{"Experiments for the perturbed compositional gradient flow"};
  app.set_version_flag("--version", pcgf::kVersion);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> replicas;
  std::size_t threads = 0;
  bool quiet = false;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON run description")->required();
  app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--out", out, "output directory (overrides the config)");
  app.add_option("--replicas", replicas, "replica count (overrides the config)");
  app.add_option("--threads", threads, "worker threads, 0 = all cores");
  app.add_flag("--quiet", quiet, "no progress messages");
  app.add_flag("--print-config", print_config, "print the resolved config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto report = [&](const std::string& kind, const std::string& message) {
    nlohmann::ordered_json record = {{"status", "failed"}, {"error", {{"kind", kind}, {"message", message}}}};
    std::cerr << record.dump() << "\n";
    if (out) write_failure_manifest(*out, kind, message);
  };

  RunConfig config;
  try {
    config = parse_config_file(config_path);
    if (seed) config.seed = *seed;
    if (out) config.output_dir = *out;
    if (replicas) config.replicas = *replicas;
    validate(config);
  } catch (const pcgf::ConfigurationError& e) {
    report("configuration", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    report("runtime", e.what());
    return kExitFailed;
  }

  if (print_config) {
    std::cout << serialize(config);
    return kExitOk;
  }
  return dispatch(config, {threads, quiet});
}
