#include "ossd/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <fstream>
#include <sstream>

#include "ossd/errors.hpp"

namespace ossd {
namespace {

constexpr std::size_t kHeaderBytes = 13;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_commas(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

struct Block {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

std::string encode_block(std::size_t rows, std::size_t cols, const double* values) {
  if (rows > UINT32_MAX || cols > UINT32_MAX) throw FormatError("matrix too large for the OSSD format");
  std::string out(kBinaryMagic);
  out.push_back(static_cast<char>(kBinaryVersion));
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  out.reserve(out.size() + rows * cols * 4);
  for (std::size_t i = 0; i < rows * cols; ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
  return out;
}

// Decodes one block starting at `at`, advancing it.
Block decode_block(std::string_view bytes, std::size_t& at) {
  if (bytes.size() - at < kHeaderBytes) throw FormatError("OSSD: truncated header");
  if (bytes.substr(at, 4) != kBinaryMagic) throw FormatError("OSSD: bad magic bytes");
  if (static_cast<unsigned char>(bytes[at + 4]) != kBinaryVersion) {
    throw FormatError("OSSD: unsupported version " + std::to_string(static_cast<unsigned char>(bytes[at + 4])));
  }
  Block b;
  b.rows = get_u32(bytes, at + 5);
  b.cols = get_u32(bytes, at + 9);
  at += kHeaderBytes;
  const std::size_t count = b.rows * b.cols;
  if ((bytes.size() - at) / 4 < count) {
    throw FormatError("OSSD: truncated payload (expected " + std::to_string(count * 4) + " bytes, found " +
                      std::to_string(bytes.size() - at) + ")");
  }
  b.values.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(get_u32(bytes, at));
    if (!std::isfinite(f)) throw FormatError("OSSD: non-finite value at index " + std::to_string(i));
    b.values.push_back(static_cast<double>(f));
    at += 4;
  }
  return b;
}

}  // namespace

Eigen::VectorXd EmbeddingMatrix::row(std::size_t i) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(cols));
  for (std::size_t j = 0; j < cols; ++j) v[static_cast<Eigen::Index>(j)] = values[i * cols + j];
  return v;
}

std::vector<Eigen::VectorXd> EmbeddingMatrix::row_vectors() const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) out.push_back(row(i));
  return out;
}

std::optional<double> parse_real(std::string_view token) {
  if (token.empty()) return std::nullopt;
  if (token == "inf" || token == "+inf") return std::numeric_limits<double>::infinity();
  if (token == "-inf") return -std::numeric_limits<double>::infinity();
  if (token.front() == '+') token.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  return v;
}

std::string format_real(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  std::string s(buf.data(), ptr);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

EmbeddingMatrix parse_embeddings_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  EmbeddingMatrix m;
  bool has_label = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (line_no == 0 || trim(line).empty()) throw FormatError("CSV: missing header line");
  const auto header = split_commas(line);
  std::size_t width = header.size();
  if (!header.empty() && header.back() == "label") {
    has_label = true;
    --width;
  }
  if (width == 0) throw FormatError("CSV line " + std::to_string(line_no) + ": header has no feature columns");
  for (std::size_t j = 0; j < width; ++j) {
    if (header[j] != "f" + std::to_string(j)) {
      throw FormatError("CSV line " + std::to_string(line_no) + ": expected header column f" + std::to_string(j) +
                        ", found '" + header[j] + "'");
    }
  }
  m.cols = width;
  if (has_label) m.labels.emplace();

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw FormatError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " columns, found " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < width; ++j) {
      const auto v = parse_real(cells[j]);
      if (!v || !std::isfinite(*v)) {
        throw FormatError("CSV line " + std::to_string(line_no) + ", column " + std::to_string(j + 1) +
                          ": not a finite number: '" + cells[j] + "'");
      }
      m.values.push_back(*v);
    }
    if (has_label) {
      int label = 0;
      const auto& cell = cells.back();
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw FormatError("CSV line " + std::to_string(line_no) + ": label is not an integer: '" + cell + "'");
      }
      m.labels->push_back(label);
    }
    ++m.rows;
  }
  return m;
}

EmbeddingMatrix parse_embeddings_binary(std::string_view bytes) {
  std::size_t at = 0;
  Block b = decode_block(bytes, at);
  if (at != bytes.size()) throw FormatError("OSSD: " + std::to_string(bytes.size() - at) + " trailing bytes");
  EmbeddingMatrix m;
  m.rows = b.rows;
  m.cols = b.cols;
  m.values = std::move(b.values);
  return m;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && std::string_view(bytes).substr(0, 4) == kBinaryMagic) {
    return parse_embeddings_binary(bytes);
  }
  std::istringstream in(bytes);
  return parse_embeddings_csv(in);
}

std::string encode_embeddings_binary(const EmbeddingMatrix& m) {
  if (m.values.size() != m.rows * m.cols) throw std::invalid_argument("embedding matrix size mismatch");
  return encode_block(m.rows, m.cols, m.values.data());
}

void write_embeddings_binary(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  const std::string bytes = encode_embeddings_binary(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  for (std::size_t j = 0; j < m.cols; ++j) out << (j ? "," : "") << 'f' << j;
  if (m.labels) out << ",label";
  out << '\n';
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) out << (j ? "," : "") << format_real(m.values[i * m.cols + j]);
    if (m.labels) out << ',' << (*m.labels)[i];
    out << '\n';
  }
}

void save_model(const std::filesystem::path& path, const ClassifierParams& params) {
  // Eigen matrices are column-major; blocks are written row-major.
  auto row_major = [](const Eigen::MatrixXd& a) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(a.size()));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) v.push_back(a(i, j));
    return v;
  };
  std::string bytes;
  const auto w1 = row_major(params.w1);
  const auto w2 = row_major(params.w2);
  bytes += encode_block(params.w1.rows(), params.w1.cols(), w1.data());
  bytes += encode_block(1, params.b1.size(), params.b1.data());
  bytes += encode_block(params.w2.rows(), params.w2.cols(), w2.data());
  bytes += encode_block(1, params.b2.size(), params.b2.data());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ClassifierParams load_model(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  std::size_t at = 0;
  std::array<Block, 4> blocks;
  for (auto& b : blocks) b = decode_block(bytes, at);
  if (at != bytes.size()) throw FormatError("model file: trailing bytes");
  const auto& [w1, b1, w2, b2] = blocks;
  if (b1.rows != 1 || b2.rows != 1 || b1.cols != w1.rows || w2.cols != w1.rows || b2.cols != w2.rows ||
      w1.rows == 0 || w1.cols == 0 || w2.rows == 0) {
    throw FormatError("model file: inconsistent block shapes");
  }
  auto to_matrix = [](const Block& b) {
    Eigen::MatrixXd a(static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
    for (std::size_t i = 0; i < b.rows; ++i)
      for (std::size_t j = 0; j < b.cols; ++j) a(i, j) = b.values[i * b.cols + j];
    return a;
  };
  auto to_vector = [](const Block& b) {
    return Eigen::Map<const Eigen::VectorXd>(b.values.data(), static_cast<Eigen::Index>(b.values.size())).eval();
  };
  return {to_matrix(w1), to_vector(b1), to_matrix(w2), to_vector(b2)};
}

std::vector<double> read_score_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<double> scores;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto cells = split_commas(t);
    const auto v = parse_real(cells.back());
    if (!v || std::isnan(*v)) {
      if (first) {  // header
        first = false;
        continue;
      }
      throw FormatError(path.string() + " line " + std::to_string(line_no) + ": not a number: '" + cells.back() + "'");
    }
    first = false;
    scores.push_back(*v);
  }
  if (scores.empty()) throw FormatError(path.string() + ": no scores");
  return scores;
}

}  // namespace ossd
