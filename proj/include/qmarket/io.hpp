#pragma once
// Run plumbing: flat key-value configuration, bit-stable number formatting,
// CSV staging with all-or-nothing commits, and run manifests with content
// fingerprints.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qmarket/types.hpp"

namespace qmkt {

/// Shortest representation that round-trips a double exactly (17 significant
/// digits).
std::string format_real(real v);

/// 64-bit FNV-1a content fingerprint.
uint64_t fnv1a64(const std::string& bytes);
std::string hex64(uint64_t v);

/// Flat configuration: `[section]` headers plus `key = value` lines become
/// "section.key" entries. `#` and `;` start comments. Every lookup failure
/// names the offending key.
class RunConfig {
  public:
    static RunConfig from_file(const std::string& path);
    static RunConfig from_text(const std::string& text, std::string origin = "<inline>");

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    real get_real(const std::string& key) const;
    real get_real(const std::string& key, real fallback) const;
    vecN get_vec(const std::string& key) const;  // comma-separated reals
    vecN get_vec(const std::string& key, const vecN& fallback) const;
    std::vector<int> get_int_vec(const std::string& key, const std::vector<int>& fallback) const;

    /// Command-line override; recorded separately so the manifest hash covers
    /// the file and the overrides together.
    void override_value(const std::string& key, const std::string& value);

    const std::map<std::string, std::string>& entries() const { return kv_; }
    const std::string& origin() const { return origin_; }

    /// Fingerprint of the raw config text plus any overrides.
    uint64_t fingerprint() const;

  private:
    std::map<std::string, std::string> kv_;
    std::map<std::string, std::string> overrides_;
    std::string raw_;
    std::string origin_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    std::string to_string() const;
};

struct ManifestEntry {
    std::string name;
    std::string content_hash;  // hex64 fingerprint
};

struct RunManifest {
    std::string command;
    std::string artifact_version;
    std::string config_hash;
    uint64_t seed = 0;
    double wall_seconds = 0.0;
    std::vector<ManifestEntry> outputs;

    std::string to_json() const;
};

/// Stages named outputs in memory and writes them in one shot; any failure
/// removes every file it created, so a run directory never holds partial
/// results. The manifest (manifest.json) is written last and lists a content
/// fingerprint per output.
class OutputSink {
  public:
    explicit OutputSink(std::string dir);

    void add(const std::string& name, std::string content);
    const std::string& dir() const { return dir_; }

    /// Returns the manifest entries actually written (excluding the manifest
    /// itself).
    std::vector<ManifestEntry> commit(RunManifest manifest);

  private:
    std::string dir_;
    std::vector<std::pair<std::string, std::string>> staged_;
};

}  // namespace qmkt
