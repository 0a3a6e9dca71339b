#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hcl {

// Flat "dotted.key = value" text documents. Order of insertion is kept for
// output; lookups are by exact key. Lines starting with '#' are comments.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(std::string_view text, const std::string& source = "<text>");
  static KeyValueDoc read_file(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  bool contains(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  // Throws IoError naming the key when absent.
  const std::string& at(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

  std::string str() const;
  void write_file(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Shortest text that round-trips to the same double.
std::string format_real(double v);
// Fixed six significant digits (result files).
std::string format_sig6(double v);

std::vector<std::string> split_list(std::string_view text, char sep = ',');
std::string join_list(const std::vector<std::string>& items, const std::string& sep = ", ");
std::string trim(std::string_view s);

}  // namespace hcl
