#include "retmap/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace retmap {

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string strip_hash_comments(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_comment = false;
  for (char c : text) {
    if (c == '#') in_comment = true;
    if (c == '\n') in_comment = false;
    out.push_back(in_comment ? ' ' : c);
  }
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& token, const std::string& context) {
  const char* begin = token.data();
  const char* end = begin + token.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r'))
    --end;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw ParseError(context + ": cannot parse number '" + token + "'");
  return value;
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::string checksum_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return std::string(buf);
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigMap parse_config(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ParseError("config line " + std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

ConfigMap load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path));
}

std::string serialize_config(const ConfigMap& config) {
  std::string out;
  for (const auto& [k, v] : config) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

double config_get(const ConfigMap& c, const std::string& key, double fallback) {
  auto it = c.find(key);
  if (it == c.end()) return fallback;
  const std::string& s = it->second;
  double value = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("config key '" + key + "': not a number: " + s);
  return value;
}

int config_get(const ConfigMap& c, const std::string& key, int fallback) {
  auto it = c.find(key);
  if (it == c.end()) return fallback;
  const std::string& s = it->second;
  int value = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("config key '" + key + "': not an integer: " + s);
  return value;
}

std::string config_get(const ConfigMap& c, const std::string& key,
                       const std::string& fallback) {
  auto it = c.find(key);
  return it == c.end() ? fallback : it->second;
}

CaseManifest load_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string header;
  std::getline(in, header);
  if (trim(header) != "RETCASE 1")
    throw ParseError("manifest " + path.string() + ": bad header");
  CaseManifest m;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls, value);
      m.meta[key] = trim(value);
    } else if (kind == "file") {
      std::string name, sum;
      ls >> name >> sum;
      if (name.empty() || sum.empty())
        throw ParseError("manifest " + path.string() + ": bad file line: " + t);
      m.file_checksums[name] = sum;
    } else {
      throw ParseError("manifest " + path.string() + ": unknown entry: " + t);
    }
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const CaseManifest& manifest) {
  std::string out = "RETCASE 1\n";
  for (const auto& [k, v] : manifest.meta) out += "meta " + k + " " + v + "\n";
  for (const auto& [name, sum] : manifest.file_checksums)
    out += "file " + name + " " + sum + "\n";
  write_text_file(path, out);
}

void verify_checksum(const CaseDirectory& dir, const CaseManifest& manifest,
                     const std::string& name) {
  auto it = manifest.file_checksums.find(name);
  if (it == manifest.file_checksums.end())
    throw IoError("file not listed in manifest: " + name);
  std::string bytes = read_text_file(dir.root / name);
  std::string actual = checksum_hex(bytes);
  if (actual != it->second)
    throw ChecksumMismatch("checksum mismatch for " + name + ": manifest " +
                           it->second + ", actual " + actual);
}

void write_case_manifest(const CaseDirectory& dir,
                         const std::map<std::string, std::string>& meta) {
  CaseManifest m;
  m.meta = meta;
  std::vector<std::filesystem::path> names;
  for (const auto& entry : std::filesystem::directory_iterator(dir.root)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (name == "manifest.txt") continue;
    names.push_back(entry.path());
  }
  for (const auto& p : names) {
    std::string bytes = read_text_file(p);
    m.file_checksums[p.filename().string()] = checksum_hex(bytes);
  }
  save_manifest(dir.manifest(), m);
}

}  // namespace retmap
