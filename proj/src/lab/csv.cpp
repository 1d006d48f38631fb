#include "roste/lab/csv.hpp"

#include "roste/errors.hpp"

#include <fmt/format.h>

#include <fstream>
#include <stdexcept>

namespace roste::lab {

std::string format_double(double v)
{
    return fmt::format("{}", v);
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size())
{
    append_record(header);
}

void CsvWriter::row(const std::vector<CsvCell>& cells)
{
    if (cells.size() != columns_)
        throw ShapeError("CsvWriter: row has " + std::to_string(cells.size()) + " cells, header has " +
                         std::to_string(columns_));
    std::vector<std::string> fields;
    fields.reserve(cells.size());
    for (const auto& c : cells) {
        fields.push_back(std::visit(
            [](const auto& v) -> std::string {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, std::string>)
                    return v;
                else if constexpr (std::is_same_v<T, double>)
                    return format_double(v);
                else
                    return std::to_string(v);
            },
            c));
    }
    append_record(fields);
    ++rows_;
}

void CsvWriter::append_record(const std::vector<std::string>& fields)
{
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i)
            out_ += ',';
        const std::string& f = fields[i];
        if (f.find_first_of(",\"\r\n") == std::string::npos) {
            out_ += f;
            continue;
        }
        out_ += '"';
        for (char ch : f) {
            if (ch == '"')
                out_ += '"';
            out_ += ch;
        }
        out_ += '"';
    }
    out_ += "\r\n";
}

void CsvWriter::write(const std::string& path) const
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot write '" + path + "'");
    f << out_;
}

} // namespace roste::lab
