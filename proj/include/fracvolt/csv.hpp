#pragma once

// RFC 4180 style CSV output. Doubles are written in shortest round-trip
// form, so identical values always produce identical bytes.

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fracvolt::csv {

using Field = std::variant<std::string, double, std::int64_t>;

std::string quote(std::string_view field);
std::string format_double(double v);
std::string format_field(const Field& f);

// Writes a header row on construction; every row must have the same width.
class Writer {
 public:
  Writer(std::ostream& os, std::vector<std::string> header);
  void row(const std::vector<Field>& fields);
  std::size_t rows() const { return rows_; }

 private:
  std::ostream& os_;
  std::size_t width_;
  std::size_t rows_ = 0;
};

}  // namespace fracvolt::csv
