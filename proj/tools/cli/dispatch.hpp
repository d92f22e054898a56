#pragma once

#include "config.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace pcgf::cli {

struct DispatchOptions {
  /// Worker threads for replica loops; 0 means hardware concurrency. Not
  /// part of any output.
  std::size_t threads = 0;
  bool quiet = false;
};

/// Exit codes of the tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitUsage = 2;

/// Runs the experiment and writes its artifacts plus manifest.json into
/// config.output_dir. On failure the artifacts written so far are removed
/// and the manifest records status "failed" with the error.
int dispatch(const RunConfig& config, const DispatchOptions& options = {});

/// Writes a failure manifest for a run that never got a valid config.
void write_failure_manifest(const std::filesystem::path& dir, const std::string& kind, const std::string& message);

/// Names of the artifacts, in the order dispatch writes them.
std::vector<std::string> artifact_names(const RunConfig& config);

}  // namespace pcgf::cli
