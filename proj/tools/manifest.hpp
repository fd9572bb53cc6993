#ifndef PHOTOION_TOOLS_MANIFEST_HPP
#define PHOTOION_TOOLS_MANIFEST_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace photoion::cli {

inline constexpr const char* kToolName = "photoion";
inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kManifestName = "manifest.json";

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Run record written next to a command's outputs. Files are registered as
/// they are written; the manifest itself is written last.
class Manifest {
 public:
  Manifest(std::string command, std::filesystem::path out_dir);

  void set_config(const std::string& yaml_snapshot, std::uint64_t seed, unsigned threads);
  void set_argv(const std::vector<std::string>& argv);
  /// Hashes `relative` (inside the output directory) and lists it.
  void add_file(const std::filesystem::path& relative);
  void add_input(const std::filesystem::path& path);
  void add_error(const std::string& kind, const std::string& message, const std::string& field = {});
  void add_warning(const std::string& message);
  /// Writes manifest.json with the given exit code and returns its path.
  std::filesystem::path write(int exit_code);

  const nlohmann::json& json() const noexcept { return doc_; }

 private:
  std::filesystem::path out_;
  nlohmann::json doc_;
};

struct VerifyIssue {
  std::string path;
  std::string problem;  ///< "missing", "modified", "unlisted"
};

/// Re-hashes every listed file and reports missing or modified ones, plus
/// files present in the directory but absent from the manifest.
std::vector<VerifyIssue> verify_manifest(const std::filesystem::path& out_dir);

}  // namespace photoion::cli

#endif  // PHOTOION_TOOLS_MANIFEST_HPP
