#pragma once

// RFC 4180 CSV: CRLF record separators, fields quoted only when they contain a
// comma, quote, CR or LF. Doubles use the shortest round-trip decimal form with
// '.' as the separator regardless of locale.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace roste::lab {

using CsvCell = std::variant<std::string, double, std::int64_t, std::uint64_t>;

std::string format_double(double v);

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);

    void row(const std::vector<CsvCell>& cells);
    std::size_t row_count() const noexcept { return rows_; }
    const std::string& str() const noexcept { return out_; }
    void write(const std::string& path) const;

private:
    void append_record(const std::vector<std::string>& fields);

    std::size_t columns_;
    std::size_t rows_ = 0;
    std::string out_;
};

} // namespace roste::lab
