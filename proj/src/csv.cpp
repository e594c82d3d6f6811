#include "fracvolt/csv.hpp"

#include "fracvolt/core.hpp"

#include <charconv>
#include <cmath>

namespace fracvolt::csv {

std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_field(const Field& f) {
  if (const auto* s = std::get_if<std::string>(&f)) return quote(*s);
  if (const auto* d = std::get_if<double>(&f)) return format_double(*d);
  return std::to_string(std::get<std::int64_t>(f));
}

Writer::Writer(std::ostream& os, std::vector<std::string> header) : os_(os), width_(header.size()) {
  if (header.empty()) throw DomainError("csv::Writer: empty header");
  std::vector<Field> fields(header.begin(), header.end());
  row(fields);
  rows_ = 0;
}

void Writer::row(const std::vector<Field>& fields) {
  if (fields.size() != width_) throw DomainError("csv::Writer: row width does not match the header");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) os_ << ',';
    os_ << format_field(fields[i]);
  }
  os_ << '\n';
  ++rows_;
}

}  // namespace fracvolt::csv
