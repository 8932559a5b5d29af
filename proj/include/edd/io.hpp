#pragma once

#include <edd/oracle.hpp>
#include <edd/search.hpp>

#include <json.hpp>

#include <array>
#include <string>
#include <string_view>

namespace edd {

/// Everything a run reads from its config file.
struct RunConfig {
  SearchConfig search;
  SpaceConfig space;
  DeviceModel device;
  /// Where the GPU table came from; empty when given inline or unused.
  std::string gpu_table_path;
  DatasetSpec data;
  std::array<double, 3> split{0.4, 0.4, 0.2};
  std::uint64_t split_seed = 3;
  /// Shared accuracy protocol of the oracle.
  TrainSettings oracle;
  long long enumeration_cap = 4096;
  int threads = 1;
  /// Budget for training a derived design from scratch.
  TrainSettings retrain{15, 32, 0.01, 0.9, 1};
  std::string output_dir = "edd-out";
  /// Dataset cache directory; empty disables the cache.
  std::string cache_dir;

  /// Cross-section checks (dataset geometry follows the space, GPU table
  /// present for the GPU model, ...). Throws ConfigError.
  void validate() const;
};

/// Parses commented JSON. Unknown keys and type mismatches raise ConfigError
/// naming the dotted path of the offending key. Relative table paths resolve
/// against `base_dir`.
RunConfig parse_config(std::string_view text, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);

/// Fully commented default config.
std::string config_template();

/// Resolved config as JSON (no output section).
nlohmann::json config_echo(const RunConfig& config);

/// Git-style content hash of the echo with search.seed removed, so runs that
/// differ only in seed share a hash.
std::string config_hash(const RunConfig& config);

nlohmann::json to_json(const DerivedDesign& design, const SpaceConfig& space);
DerivedDesign design_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SearchReport& report, const RunConfig& config);
SearchReport report_from_json(const nlohmann::json& j);

/// Loss-curve table, comma separated, 17 significant digits.
std::string curves_csv(const SearchReport& report, const std::string& hash);

std::string ranking_csv(const OracleRanking& ranking, const std::string& hash);
/// Returns the ranking and the config hash stored in the file.
std::pair<OracleRanking, std::string> parse_ranking_csv(std::string_view text);

std::string format_double(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace edd
