#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace gradkf {

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

/// Long-format trace table: `step,time,series,component,value`.
class TraceTable {
 public:
  static constexpr std::string_view kHeader = "step,time,series,component,value";

  void add(long step, double time, std::string_view series, long component, double value);
  const std::string& body() const { return body_; }
  std::string str() const;
  std::size_t rows() const { return rows_; }

 private:
  std::string body_;
  std::size_t rows_ = 0;
};

struct TraceRow {
  long step = 0;
  double time = 0.0;
  std::string series;
  long component = 0;
  double value = 0.0;
};

/// Parses a table written by TraceTable; throws ConfigError on malformed input.
std::vector<TraceRow> parse_trace_csv(std::istream& in);

/// Writes `content` to `path` via a sibling temporary file and a rename.
void write_file_atomic(const std::string& path, std::string_view content);

}  // namespace gradkf
