#include "qnd/io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "qnd/version.hpp"

namespace qnd {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::string& config_hash,
                     const std::string& stage, const std::vector<std::string>& columns)
    : path_(path), n_columns_(columns.size()) {
    buffer_ += "# schema=" + std::string(schema_version) + " tool=" + tool_version + "\n";
    buffer_ += "# config=" + config_hash + " stage=" + stage + "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) {
        buffer_ += columns[i];
        buffer_ += (i + 1 < columns.size()) ? ',' : '\n';
    }
}

void CsvWriter::row(const std::vector<double>& values) {
    if (values.size() != n_columns_) throw std::invalid_argument("csv: column count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
        buffer_ += format_double(values[i]);
        buffer_ += (i + 1 < values.size()) ? ',' : '\n';
    }
}

void CsvWriter::close() {
    if (closed_) return;
    write_text_file(path_, buffer_);
    closed_ = true;
}

CsvWriter::~CsvWriter() {
    try {
        close();
    } catch (...) {
    }
}

CsvFile read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("csv: cannot open " + path.string());
    CsvFile file;
    std::string line;
    bool columns_read = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.front() == '#') {
            file.header.push_back(line.substr(1));
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!columns_read) {
            file.columns = cells;
            columns_read = true;
            continue;
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(std::stod(c));
        file.rows.push_back(std::move(row));
    }
    return file;
}

std::string csv_config_hash(const CsvFile& file) {
    for (const auto& line : file.header) {
        const auto pos = line.find("config=");
        if (pos == std::string::npos) continue;
        const auto start = pos + 7;
        const auto end = line.find(' ', start);
        return line.substr(start, end == std::string::npos ? std::string::npos : end - start);
    }
    return {};
}

namespace {
constexpr char matrix_magic[8] = {'Q', 'N', 'D', 'M', 'A', 'T', '0', '1'};
}

void write_matrix_binary(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("matrix: cannot open " + path.string());
    const std::uint32_t rows = static_cast<std::uint32_t>(m.rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(m.cols());
    out.write(matrix_magic, sizeof(matrix_magic));
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
}

Eigen::MatrixXd read_matrix_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("matrix: cannot open " + path.string());
    char magic[8];
    std::uint32_t rows = 0, cols = 0;
    in.read(magic, sizeof(magic));
    if (std::memcmp(magic, matrix_magic, sizeof(magic)) != 0)
        throw std::runtime_error("matrix: bad magic in " + path.string());
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) {
            double v;
            in.read(reinterpret_cast<char*>(&v), sizeof(v));
            m(i, j) = v;
        }
    if (!in) throw std::runtime_error("matrix: truncated file " + path.string());
    return m;
}

void write_matrix_csv(const std::filesystem::path& path, const std::string& config_hash,
                      const std::string& stage, const Eigen::MatrixXd& m) {
    std::vector<std::string> columns(static_cast<std::size_t>(m.cols()));
    for (std::size_t j = 0; j < columns.size(); ++j) columns[j] = "c" + std::to_string(j);
    CsvWriter writer(path, config_hash, stage, columns);
    std::vector<double> row(columns.size());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
        writer.row(row);
    }
    writer.close();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("io: cannot open " + path.string());
    out << text;
    if (!out) throw std::runtime_error("io: write failed for " + path.string());
}

}  // namespace qnd
