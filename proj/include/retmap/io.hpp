#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "retmap/errors.hpp"

namespace retmap {

// Shortest round-trip decimal rendering of a double. All numeric text
// output goes through this so emitted files are deterministic and
// parse back to the identical value.
std::string format_double(double value);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

// Blanks out `#`-to-end-of-line spans so token streams skip comments.
std::string strip_hash_comments(const std::string& text);

// CSV plumbing shared by the tabular loaders.
std::vector<std::string> split(const std::string& line, char sep);
double parse_double(const std::string& token, const std::string& context);

// FNV-1a 64-bit over raw bytes, rendered as 16 hex digits.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::string checksum_hex(const std::string& bytes);

// Flat `key = value` configuration, `#` comments.
using ConfigMap = std::map<std::string, std::string>;
ConfigMap parse_config(const std::string& text);
ConfigMap load_config(const std::filesystem::path& path);
std::string serialize_config(const ConfigMap& config);

double config_get(const ConfigMap& c, const std::string& key, double fallback);
int config_get(const ConfigMap& c, const std::string& key, int fallback);
std::string config_get(const ConfigMap& c, const std::string& key,
                       const std::string& fallback);

// Case directory layout. A case bundles one subject (or template): mesh,
// disk parameterization, pRF parameters, and optionally stimulus, BOLD
// series, and the generator's ground-truth deformation. `manifest.txt`
// lists every file with its checksum; loaders verify before parsing.
struct CaseDirectory {
  std::filesystem::path root;

  std::filesystem::path mesh() const { return root / "mesh.retmesh"; }
  std::filesystem::path uv() const { return root / "uv.retuv"; }
  std::filesystem::path prf() const { return root / "prf.csv"; }
  std::filesystem::path stimulus() const { return root / "stimulus.retstim"; }
  std::filesystem::path bold() const { return root / "bold.csv"; }
  std::filesystem::path bold_clean() const { return root / "bold_clean.csv"; }
  std::filesystem::path deformation() const { return root / "deformation.retdef"; }
  std::filesystem::path manifest() const { return root / "manifest.txt"; }
};

// Manifest format: `RETCASE 1` header, `meta <key> <value>` lines, then
// `file <name> <fnv1a64-hex>` lines.
struct CaseManifest {
  std::map<std::string, std::string> meta;
  std::map<std::string, std::string> file_checksums;
};

CaseManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const CaseManifest& manifest);

// Recomputes the checksum of `name` under the manifest's directory and
// throws ChecksumMismatch when it differs (IoError when absent).
void verify_checksum(const CaseDirectory& dir, const CaseManifest& manifest,
                     const std::string& name);

// Writes the manifest for every file currently present in the directory.
void write_case_manifest(const CaseDirectory& dir,
                         const std::map<std::string, std::string>& meta);

}  // namespace retmap
