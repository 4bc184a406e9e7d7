#include "gradkf/csv.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <system_error>

#include "gradkf/errors.hpp"

namespace gradkf {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void TraceTable::add(long step, double time, std::string_view series, long component, double value) {
  body_ += std::to_string(step);
  body_ += ',';
  body_ += format_double(time);
  body_ += ',';
  body_ += series;
  body_ += ',';
  body_ += std::to_string(component);
  body_ += ',';
  body_ += format_double(value);
  body_ += '\n';
  ++rows_;
}

std::string TraceTable::str() const {
  std::string out;
  out.reserve(kHeader.size() + 1 + body_.size());
  out += kHeader;
  out += '\n';
  out += body_;
  return out;
}

namespace {

template <class T>
T parse_field(std::string_view field, int line_no) {
  T v{};
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw ConfigError("trace csv line " + std::to_string(line_no) + ": bad field `" + std::string(field) + "`");
  return v;
}

}  // namespace

std::vector<TraceRow> parse_trace_csv(std::istream& in) {
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line) || line != TraceTable::kHeader)
    throw ConfigError("trace csv: missing header `" + std::string(TraceTable::kHeader) + "`");
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (auto comma = rest.find(','); comma != std::string_view::npos; comma = rest.find(',')) {
      f.push_back(rest.substr(0, comma));
      rest.remove_prefix(comma + 1);
    }
    f.push_back(rest);
    if (f.size() != 5) throw ConfigError("trace csv line " + std::to_string(line_no) + ": expected 5 fields");
    rows.push_back(TraceRow{parse_field<long>(f[0], line_no), parse_field<double>(f[1], line_no),
                            std::string(f[2]), parse_field<long>(f[3], line_no),
                            parse_field<double>(f[4], line_no)});
  }
  return rows;
}

void write_file_atomic(const std::string& path, std::string_view content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw ConfigError("cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
}

}  // namespace gradkf
