#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include "sthoi/annotation.hpp"

namespace sthoi {

inline constexpr const char* kToolVersion = "0.1.0";

/// Provenance record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json seeds = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  json to_json() const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return json{{"command", command}, {"argv", argv},       {"config", config},
                {"seeds", seeds},     {"inputs", inputs},   {"outputs", outputs},
                {"tool_version", kToolVersion},
                {"finished_at", stamp}, {"wall_clock_seconds", wall}};
  }

  /// Writes `<dir>/run_manifest.json`.
  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_text_file((dir / "run_manifest.json").string(), to_json().dump(2) + "\n");
  }
};

}  // namespace sthoi
