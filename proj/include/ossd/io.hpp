#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ossd/linclf.hpp"

namespace ossd {

// Row-major matrix of external feature vectors, optionally with an integer
// label per row.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::optional<std::vector<int>> labels;

  Eigen::VectorXd row(std::size_t i) const;
  std::vector<Eigen::VectorXd> row_vectors() const;
};

// OSSD binary layout (all integers and floats little-endian):
//   "OSSD" | 0x01 | u32 rows | u32 cols | rows*cols float32, row-major
inline constexpr std::string_view kBinaryMagic = "OSSD";
inline constexpr unsigned char kBinaryVersion = 0x01;

// Detects the format from the first four bytes. CSV needs a header
// f0,...,f{d-1}[,label]. Throws FormatError with a line number where one
// applies.
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
EmbeddingMatrix parse_embeddings_csv(std::istream& in);
EmbeddingMatrix parse_embeddings_binary(std::string_view bytes);

// Binary output stores float32 values and drops labels.
std::string encode_embeddings_binary(const EmbeddingMatrix& m);
void write_embeddings_binary(const std::filesystem::path& path, const EmbeddingMatrix& m);
void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingMatrix& m);

// Model files are four consecutive OSSD blocks: w1 (H x d), b1 (1 x H),
// w2 (C x H), b2 (1 x C). Values pass through float32.
void save_model(const std::filesystem::path& path, const ClassifierParams& params);
ClassifierParams load_model(const std::filesystem::path& path);

// Shortest decimal that round-trips the double, with ".0" appended to bare
// integers so every real column reads as a real: 1 -> "1.0", 0.25 -> "0.25".
std::string format_real(double value);

// Strict parse of a whole token as a double ("inf", "-inf" accepted).
std::optional<double> parse_real(std::string_view token);

// One score per line, or a CSV whose last column holds the score. A
// non-numeric first line is treated as a header.
std::vector<double> read_score_file(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);

}  // namespace ossd
