#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace v2n {

/// Minimal reader for the plain comma-separated files this project writes:
/// no quoting, optional leading `# key=value` metadata lines, exact header.
/// Errors are std::runtime_error carrying file and line number.
class CsvReader {
 public:
  CsvReader(const std::filesystem::path& path, const std::vector<std::string>& header);

  /// Fills `row` with the next record's fields; false at end of file.
  bool next(std::vector<std::string>& row);

  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  std::size_t line() const { return line_; }

  int to_int(const std::string& field) const;
  long long to_int64(const std::string& field) const;
  double to_double(const std::string& field) const;

  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t columns_;
  std::size_t line_ = 0;
  std::map<std::string, std::string> metadata_;
};

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace v2n
