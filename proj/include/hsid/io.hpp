#pragma once

#include "hsid/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace hsid {

using Json = nlohmann::ordered_json;

/// Decimal text with 17 significant digits (round-trips every double).
/// Throws std::invalid_argument for NaN or infinity.
std::string format_double(double v);

/// JSON text with every floating-point number written by format_double.
/// indent < 0 gives compact single-line output.
std::string dump_json(const Json& j, int indent = 2);

Json to_json(const Mat& m);   // row-major nested arrays
Json to_json(const Vec& v);
/// Expected dimensions of -1 are inferred; an empty list needs them given.
Mat mat_from_json(const Json& j, const std::string& what, Eigen::Index rows = -1, Eigen::Index cols = -1);
Vec vec_from_json(const Json& j, const std::string& what, Eigen::Index size = -1);

/// Run provenance written into every output file.
struct Provenance {
  std::string version = HSID_VERSION;
  std::uint64_t seed = 0;
  std::string config_hash;  // 16 hex digits

  Json to_json() const;
  /// "# hsid-version=...", "# seed=...", "# config-hash=..." lines.
  void write_csv_header(std::ostream& os) const;
};

/// 64-bit FNV-1a hash as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& text);
/// Hash of sorted key=value lines.
std::string config_hash(const std::map<std::string, std::string>& entries);

Json model_to_json(const HybridModel& model);
/// Parses and validates a model document; throws std::runtime_error with the
/// offending field on malformed input.
HybridModel model_from_json(const Json& j);

void save_model(const std::filesystem::path& path, const HybridModel& model,
                const Provenance* provenance = nullptr);
HybridModel load_model(const std::filesystem::path& path);

/// One compact JSON record per line: {"id", "dt", "xs", "us"} with xs/us as
/// lists of per-step vectors.
void write_dataset(std::ostream& os, const Dataset& data);
Dataset read_dataset(std::istream& is, const std::string& source = "dataset");
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

struct Manifest {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::vector<std::vector<std::string>> splits;
};

void save_manifest(const std::filesystem::path& path, const Manifest& manifest,
                   const Provenance* provenance = nullptr);
Manifest load_manifest(const std::filesystem::path& path);

/// Trajectories of `data` whose ids are listed, in list order.
Dataset select_by_id(const Dataset& data, const std::vector<std::string>& ids);

/// Reads a whole file; throws std::runtime_error if it cannot be opened.
std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file in the same directory and renames it.
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace hsid
