#include "v2n/csv.hpp"

#include <charconv>
#include <stdexcept>

namespace v2n {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string::size_type start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

namespace {

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

}  // namespace

CsvReader::CsvReader(const std::filesystem::path& path, const std::vector<std::string>& header)
    : path_(path), in_(path), columns_(header.size()) {
  if (!in_) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    strip_cr(line);
    if (!line.empty() && line.front() == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos) {
        auto key = line.substr(1, eq - 1);
        while (!key.empty() && key.front() == ' ') key.erase(key.begin());
        metadata_[key] = line.substr(eq + 1);
      }
      continue;
    }
    if (split_csv_line(line) != header) {
      std::string want;
      for (std::size_t i = 0; i < header.size(); ++i) want += (i ? "," : "") + header[i];
      fail("expected header '" + want + "', got '" + line + "'");
    }
    return;
  }
  fail("missing header");
}

bool CsvReader::next(std::vector<std::string>& row) {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    strip_cr(line);
    if (line.empty()) continue;
    row = split_csv_line(line);
    if (row.size() != columns_)
      fail("expected " + std::to_string(columns_) + " fields, got " + std::to_string(row.size()));
    return true;
  }
  return false;
}

int CsvReader::to_int(const std::string& field) const {
  const auto v = to_int64(field);
  if (v < INT32_MIN || v > INT32_MAX) fail("integer out of range: '" + field + "'");
  return static_cast<int>(v);
}

long long CsvReader::to_int64(const std::string& field) const {
  long long v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) fail("malformed integer '" + field + "'");
  return v;
}

double CsvReader::to_double(const std::string& field) const {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) fail("malformed number '" + field + "'");
  return v;
}

void CsvReader::fail(const std::string& what) const {
  throw std::runtime_error(path_.string() + ":" + std::to_string(line_) + ": " + what);
}

}  // namespace v2n
