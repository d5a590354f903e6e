#pragma once

#include <filesystem>
#include <string>

#include "cem/synthetic.hpp"
#include "run_config.hpp"

namespace cem::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Exclusive ownership of an output directory for the life of a command.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

// run.output_dir, or $CEM_OUTPUT_ROOT/<command> (default root ./cem_runs).
std::filesystem::path resolve_output_dir(const RunConfig& config, const std::string& command);

Dataset2D build_dataset(const RunConfig& config);

int cmd_train(const RunConfig& config);
int cmd_sample(const RunConfig& config);
int cmd_verify(const RunConfig& config);
int cmd_eval(const RunConfig& config);

}  // namespace cem::cli
