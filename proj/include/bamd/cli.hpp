#pragma once

#include <string>
#include <utility>
#include <vector>

namespace bamd::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kData = 3,
  kNumerical = 4,
};

// Ordered key=value record at the head of every output file.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value);
  void note(const std::string& key, const std::string& value);

  // "# key=value" lines for output files.
  std::string header() const;
  // Active key=value lines (usable with --config), notes as comments.
  std::string ini() const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::vector<std::pair<std::string, std::string>> notes_;
};

// Expands "--config FILE" into explicit flags placed before the
// command-line ones; keys already given on the command line are skipped.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

// Full command-line entry point; returns the process exit code.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace bamd::cli
