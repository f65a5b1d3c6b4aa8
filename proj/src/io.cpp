#include "qmarket/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace qmkt {

namespace {

void require(bool cond, Errc code, const std::string& msg) {
    if (!cond) throw Error(code, msg);
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

real parse_real_or_throw(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    require(!t.empty(), Errc::config_error, "config key '" + key + "': empty number");
    errno = 0;
    char* end = nullptr;
    real v = std::strtod(t.c_str(), &end);
    require(end == t.c_str() + t.size() && errno != ERANGE, Errc::config_error,
            "config key '" + key + "': '" + t + "' is not a number");
    return v;
}

long long parse_int_or_throw(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    require(!t.empty(), Errc::config_error, "config key '" + key + "': empty integer");
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(t.c_str(), &end, 10);
    require(end == t.c_str() + t.size() && errno != ERANGE, Errc::config_error,
            "config key '" + key + "': '" + t + "' is not an integer");
    return v;
}

}  // namespace

std::string format_real(real v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::config_error, "config file not readable: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str(), path);
}

RunConfig RunConfig::from_text(const std::string& text, std::string origin) {
    RunConfig cfg;
    cfg.raw_ = text;
    cfg.origin_ = std::move(origin);
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']' && line.size() > 2, Errc::config_error,
                    cfg.origin_ + ":" + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        size_t eq = line.find('=');
        require(eq != std::string::npos, Errc::config_error,
                cfg.origin_ + ":" + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        require(!key.empty(), Errc::config_error,
                cfg.origin_ + ":" + std::to_string(lineno) + ": empty key");
        if (!section.empty()) key = section + "." + key;
        require(cfg.kv_.emplace(key, value).second, Errc::config_error,
                cfg.origin_ + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return cfg;
}

std::string RunConfig::get_string(const std::string& key) const {
    auto it = kv_.find(key);
    require(it != kv_.end(), Errc::config_error, "missing config key '" + key + "'");
    return it->second;
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

long long RunConfig::get_int(const std::string& key) const {
    return parse_int_or_throw(key, get_string(key));
}

long long RunConfig::get_int(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

uint64_t RunConfig::get_u64(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string t = trim(get_string(key));
    errno = 0;
    char* end = nullptr;
    unsigned long long v = std::strtoull(t.c_str(), &end, 10);
    require(!t.empty() && end == t.c_str() + t.size() && errno != ERANGE, Errc::config_error,
            "config key '" + key + "': '" + t + "' is not an unsigned integer");
    return v;
}

real RunConfig::get_real(const std::string& key) const {
    return parse_real_or_throw(key, get_string(key));
}

real RunConfig::get_real(const std::string& key, real fallback) const {
    return has(key) ? get_real(key) : fallback;
}

vecN RunConfig::get_vec(const std::string& key) const {
    const std::string text = get_string(key);
    vecN out;
    size_t pos = 0;
    while (true) {
        size_t comma = text.find(',', pos);
        std::string item = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
        out.push_back(parse_real_or_throw(key, item));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

vecN RunConfig::get_vec(const std::string& key, const vecN& fallback) const {
    return has(key) ? get_vec(key) : fallback;
}

std::vector<int> RunConfig::get_int_vec(const std::string& key,
                                        const std::vector<int>& fallback) const {
    if (!has(key)) return fallback;
    vecN raw = get_vec(key);
    std::vector<int> out;
    out.reserve(raw.size());
    for (real v : raw) {
        long long i = static_cast<long long>(v);
        require(static_cast<real>(i) == v, Errc::config_error,
                "config key '" + key + "': expected integers");
        out.push_back(static_cast<int>(i));
    }
    return out;
}

void RunConfig::override_value(const std::string& key, const std::string& value) {
    kv_[key] = value;
    overrides_[key] = value;
}

uint64_t RunConfig::fingerprint() const {
    std::string blob = raw_;
    for (const auto& [k, v] : overrides_) blob += "\n@override " + k + " = " + v;
    return fnv1a64(blob);
}

void CsvTable::add_row(std::vector<std::string> row) {
    require(row.size() == header.size(), Errc::dimension_mismatch,
            "csv row width does not match the header");
    rows.push_back(std::move(row));
}

std::string CsvTable::to_string() const {
    std::string out;
    auto join = [&out](const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    join(header);
    for (const auto& row : rows) join(row);
    return out;
}

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["artifact_version"] = artifact_version;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["wall_seconds"] = wall_seconds;
    nlohmann::json outs = nlohmann::json::array();
    for (const ManifestEntry& e : outputs)
        outs.push_back({{"name", e.name}, {"hash", e.content_hash}});
    j["outputs"] = outs;
    return j.dump(2) + "\n";
}

OutputSink::OutputSink(std::string dir) : dir_(std::move(dir)) {
    require(!dir_.empty(), Errc::config_error, "output directory must not be empty");
}

void OutputSink::add(const std::string& name, std::string content) {
    require(!name.empty() && name.find('/') == std::string::npos, Errc::config_error,
            "output names must be plain file names: " + name);
    staged_.emplace_back(name, std::move(content));
}

std::vector<ManifestEntry> OutputSink::commit(RunManifest manifest) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir_, ec);
    require(!ec, Errc::evaluation_failure, "cannot create output directory: " + dir_);

    std::vector<std::string> written;
    auto cleanup = [&]() {
        for (const std::string& p : written) fs::remove(p, ec);
    };
    std::vector<ManifestEntry> entries;
    try {
        for (const auto& [name, content] : staged_) {
            const std::string path = dir_ + "/" + name;
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            require(out.good(), Errc::evaluation_failure, "cannot open output file: " + path);
            out.write(content.data(), static_cast<std::streamsize>(content.size()));
            out.flush();
            require(out.good(), Errc::evaluation_failure, "failed writing output file: " + path);
            written.push_back(path);
            entries.push_back({name, hex64(fnv1a64(content))});
        }
        manifest.outputs = entries;
        const std::string mpath = dir_ + "/manifest.json";
        std::ofstream mout(mpath, std::ios::binary | std::ios::trunc);
        require(mout.good(), Errc::evaluation_failure, "cannot open manifest: " + mpath);
        const std::string body = manifest.to_json();
        mout.write(body.data(), static_cast<std::streamsize>(body.size()));
        mout.flush();
        require(mout.good(), Errc::evaluation_failure, "failed writing manifest: " + mpath);
    } catch (...) {
        cleanup();
        throw;
    }
    return entries;
}

}  // namespace qmkt
