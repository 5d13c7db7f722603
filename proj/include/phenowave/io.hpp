#pragma once

// CSV and JSON output, and the per-run manifest.

#include <openssl/evp.h>

#include <Eigen/Core>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "phenowave/error.hpp"

#define PHENOWAVE_VERSION "0.1.0"

namespace phenowave {

/// 17 significant digits, enough to round-trip any double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using CsvCell = std::variant<double, long long, std::string>;

/// Comma-separated file with a header row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path), width_(header.size()) {
    if (!out_) throw Error("cannot write '" + path.string() + "'");
    write_fields(header);
  }

  void row(const std::vector<CsvCell>& cells) {
    if (cells.size() != width_) throw Error("CSV row width does not match the header");
    std::vector<std::string> fields;
    fields.reserve(cells.size());
    for (const auto& c : cells) {
      if (const auto* d = std::get_if<double>(&c)) fields.push_back(format_double(*d));
      else if (const auto* i = std::get_if<long long>(&c)) fields.push_back(std::to_string(*i));
      else fields.push_back(std::get<std::string>(c));
    }
    write_fields(fields);
  }

 private:
  void write_fields(const std::vector<std::string>& f) {
    for (std::size_t k = 0; k < f.size(); ++k) out_ << (k ? "," : "") << f[k];
    out_ << '\n';
  }

  std::ofstream out_;
  std::size_t width_;
};

/// Pretty-printed JSON; nlohmann::json keeps keys sorted.
inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

/// JSON number, or null for NaN and infinities.
inline nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json json_vector(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(json_number(v[i]));
  return a;
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  std::ostringstream s;
  for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return s.str();
}

struct RunManifest {
  std::string subcommand;
  std::string config_path;
  /// SHA-256 of the resolved configuration, serialized compactly with sorted keys.
  std::string config_hash;
  std::string output_dir;
  double wall_time = 0.0;
  std::string started_at;
  int exit_code = 0;
  std::string message;

  nlohmann::json to_json() const {
    std::ostringstream compiler;
#if defined(__clang__)
    compiler << "clang " << __clang_major__ << "." << __clang_minor__ << "." << __clang_patchlevel__;
#elif defined(__GNUC__)
    compiler << "gcc " << __GNUC__ << "." << __GNUC_MINOR__ << "." << __GNUC_PATCHLEVEL__;
#else
    compiler << "unknown";
#endif
    return {{"subcommand", subcommand},
            {"config_path", config_path},
            {"config_hash", config_hash},
            {"output_dir", output_dir},
            {"wall_time_s", wall_time},
            {"started_at", started_at},
            {"exit_code", exit_code},
            {"message", message},
            {"versions",
             {{"phenowave", PHENOWAVE_VERSION},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"compiler", compiler.str()}}}};
  }
};

inline std::string config_hash(const nlohmann::json& resolved) { return sha256_hex(resolved.dump()); }

}  // namespace phenowave
