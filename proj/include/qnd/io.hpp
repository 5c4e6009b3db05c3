#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace qnd {

// Self-describing CSV: '#'-prefixed header lines (schema tag + config hash)
// followed by a column-name row and '%.17g'-formatted data rows, so reruns
// are byte-identical.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::string& config_hash,
              const std::string& stage, const std::vector<std::string>& columns);
    void row(const std::vector<double>& values);
    void close();
    ~CsvWriter();

private:
    std::string buffer_;
    std::filesystem::path path_;
    std::size_t n_columns_;
    bool closed_ = false;
};

struct CsvFile {
    std::vector<std::string> header;  // '#' lines, stripped
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

CsvFile read_csv(const std::filesystem::path& path);

// Config hash recorded in a CSV header, empty string when absent.
std::string csv_config_hash(const CsvFile& file);

// Binary matrix: 16-byte header (8-byte magic "QNDMAT01", uint32 rows,
// uint32 cols, little endian) followed by row-major doubles.
void write_matrix_binary(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_binary(const std::filesystem::path& path);

void write_matrix_csv(const std::filesystem::path& path, const std::string& config_hash,
                      const std::string& stage, const Eigen::MatrixXd& m);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string format_double(double v);

}  // namespace qnd
