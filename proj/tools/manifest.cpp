#include "manifest.hpp"

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <stdexcept>

#include <openssl/evp.h>

#include "photoion/rng.hpp"

namespace photoion::cli {
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 initialisation failed");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    const auto got = in.gcount();
    if (got > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(got));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

Manifest::Manifest(std::string command, fs::path out_dir) : out_(std::move(out_dir)) {
  doc_["tool"] = kToolName;
  doc_["tool_version"] = kToolVersion;
  doc_["command"] = std::move(command);
  doc_["started_at"] = utc_now();
  doc_["seed_scheme"] = kSeedScheme;
  doc_["files"] = nlohmann::json::array();
  doc_["inputs"] = nlohmann::json::array();
  doc_["errors"] = nlohmann::json::array();
  doc_["warnings"] = nlohmann::json::array();
}

void Manifest::set_config(const std::string& yaml_snapshot, std::uint64_t seed, unsigned threads) {
  doc_["config"] = yaml_snapshot;
  doc_["master_seed"] = seed;
  doc_["threads"] = threads;
}

void Manifest::set_argv(const std::vector<std::string>& argv) { doc_["argv"] = argv; }

void Manifest::add_file(const fs::path& relative) {
  const fs::path full = out_ / relative;
  doc_["files"].push_back({{"path", relative.generic_string()},
                           {"sha256", sha256_file(full)},
                           {"bytes", static_cast<std::uint64_t>(fs::file_size(full))}});
}

void Manifest::add_input(const fs::path& path) {
  doc_["inputs"].push_back({{"path", path.string()}, {"sha256", sha256_file(path)}});
}

void Manifest::add_error(const std::string& kind, const std::string& message, const std::string& field) {
  nlohmann::json e{{"kind", kind}, {"message", message}};
  if (!field.empty()) e["field"] = field;
  doc_["errors"].push_back(std::move(e));
}

void Manifest::add_warning(const std::string& message) { doc_["warnings"].push_back(message); }

fs::path Manifest::write(int exit_code) {
  doc_["finished_at"] = utc_now();
  doc_["exit_code"] = exit_code;
  fs::create_directories(out_);
  const fs::path p = out_ / kManifestName;
  std::ofstream os(p);
  os << doc_.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write manifest '" + p.string() + "'");
  return p;
}

std::vector<VerifyIssue> verify_manifest(const fs::path& out_dir) {
  const fs::path mpath = out_dir / kManifestName;
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("no manifest in '" + out_dir.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("unreadable manifest: " + std::string(e.what()));
  }
  std::vector<VerifyIssue> issues;
  std::set<std::string> listed;
  for (const auto& f : doc.at("files")) {
    const std::string rel = f.at("path").get<std::string>();
    listed.insert(rel);
    const fs::path full = out_dir / rel;
    if (!fs::exists(full)) {
      issues.push_back({rel, "missing"});
    } else if (sha256_file(full) != f.at("sha256").get<std::string>()) {
      issues.push_back({rel, "modified"});
    }
  }
  for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), out_dir).generic_string();
    if (rel == kManifestName) continue;
    if (!listed.count(rel)) issues.push_back({rel, "unlisted"});
  }
  return issues;
}

}  // namespace photoion::cli
