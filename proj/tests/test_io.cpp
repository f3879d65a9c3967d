#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ossd/config.hpp"
#include "ossd/errors.hpp"
#include "ossd/io.hpp"
#include "ossd/rng.hpp"

using namespace ossd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ossd_test_io";
  fs::create_directories(dir);
  return dir / name;
}

EmbeddingMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, bool labels) {
  Rng rng = make_rng(seed, 0);
  EmbeddingMatrix m;
  m.rows = rows;
  m.cols = cols;
  for (std::size_t i = 0; i < rows * cols; ++i) m.values.push_back(static_cast<float>(uniform_real(rng, -5, 5)));
  if (labels) {
    m.labels.emplace();
    for (std::size_t i = 0; i < rows; ++i) m.labels->push_back(static_cast<int>(uniform_index(rng, 4)));
  }
  return m;
}

EmbeddingMatrix parse_csv(const std::string& text) {
  std::istringstream in(text);
  return parse_embeddings_csv(in);
}

std::string error_of(const std::string& text) {
  try {
    parse_csv(text);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("binary header layout") {
  EmbeddingMatrix m{2, 3, {1, 2, 3, 4, 5, 6}, {}};
  const std::string bytes = encode_embeddings_binary(m);
  const unsigned char expected[] = {0x4F, 0x53, 0x53, 0x44, 0x01, 0x02, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00};
  REQUIRE(bytes.size() == 13 + 24);
  for (std::size_t i = 0; i < sizeof expected; ++i) CHECK(static_cast<unsigned char>(bytes[i]) == expected[i]);
  // 1.0f little-endian
  CHECK(static_cast<unsigned char>(bytes[13]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[15]) == 0x80);
  CHECK(static_cast<unsigned char>(bytes[16]) == 0x3F);
}

TEST_CASE("binary and csv round trips") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const EmbeddingMatrix m = random_matrix(1 + seed * 3, 1 + seed % 5, seed, seed % 2 == 0);
    const fs::path bin = scratch("rt.ossd");
    const fs::path csv = scratch("rt.csv");
    write_embeddings_binary(bin, m);
    write_embeddings_csv(csv, m);
    const EmbeddingMatrix b = read_embeddings(bin);
    const EmbeddingMatrix c = read_embeddings(csv);
    CHECK(b.rows == m.rows);
    CHECK(b.cols == m.cols);
    CHECK(b.values == m.values);
    CHECK(c.values == m.values);
    CHECK(c.labels == m.labels);
    CHECK_FALSE(b.labels.has_value());
  }
  const EmbeddingMatrix empty{0, 4, {}, {}};
  CHECK(parse_embeddings_binary(encode_embeddings_binary(empty)).cols == 4);
}

TEST_CASE("malformed binary") {
  const std::string good = encode_embeddings_binary(EmbeddingMatrix{2, 2, {1, 2, 3, 4}, {}});
  CHECK_THROWS_AS(parse_embeddings_binary(good.substr(0, good.size() - 1)), FormatError);
  CHECK_THROWS_AS(parse_embeddings_binary(good.substr(0, 8)), FormatError);
  CHECK_THROWS_AS(parse_embeddings_binary(good + "x"), FormatError);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_embeddings_binary(bad_magic), FormatError);
  std::string bad_version = good;
  bad_version[4] = 2;
  CHECK_THROWS_AS(parse_embeddings_binary(bad_version), FormatError);
  std::string nan_payload = good;
  const float nan = std::nanf("");
  std::memcpy(nan_payload.data() + 13, &nan, 4);
  CHECK_THROWS_AS(parse_embeddings_binary(nan_payload), FormatError);
}

TEST_CASE("csv parsing and errors") {
  const EmbeddingMatrix m = parse_csv("f0,f1,label\n1,2,0\n\n3.5,-4e2,1\n");
  CHECK(m.rows == 2);
  CHECK(m.values == std::vector<double>{1, 2, 3.5, -400});
  CHECK(*m.labels == std::vector<int>{0, 1});

  CHECK(error_of("f0,f1,f2\n1,2,3\n4,5\n").find("line 3") != std::string::npos);
  CHECK(error_of("f0,f1\n1,x\n").find("line 2") != std::string::npos);
  CHECK(error_of("f0,f1\n1,2\n3,inf\n").find("line 3") != std::string::npos);
  CHECK(error_of("f0,f1,label\n1,2,0.5\n").find("line 2") != std::string::npos);
  CHECK(error_of("a,b\n1,2\n").find("line 1") != std::string::npos);
  CHECK_FALSE(error_of("").empty());

  // Every row of a well-formed file, truncated by one cell, is reported at its own line.
  Rng rng = make_rng(3, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t rows = 1 + uniform_index(rng, 20);
    const std::size_t broken = uniform_index(rng, rows);
    std::string text = "f0,f1,f2\n";
    for (std::size_t i = 0; i < rows; ++i) text += i == broken ? "1,2\n" : "1,2,3\n";
    CHECK(error_of(text).find("line " + std::to_string(broken + 2) + ":") != std::string::npos);
  }
}

TEST_CASE("model files") {
  const ClassifierParams p = init_params(5, 7, 4, 3, 0.5);
  const fs::path path = scratch("model.ossd");
  save_model(path, p);
  const ClassifierParams q = load_model(path);
  REQUIRE(q.same_shape(p));
  for (std::size_t i = 0; i < p.num_coefficients(); ++i) CHECK(q.coeff(i) == static_cast<double>(static_cast<float>(p.coeff(i))));
  save_model(scratch("model2.ossd"), q);
  CHECK(read_file_bytes(path) == read_file_bytes(scratch("model2.ossd")));

  {
    std::ofstream out(scratch("not_model.ossd"), std::ios::binary);
    const std::string one = encode_embeddings_binary(EmbeddingMatrix{1, 1, {1}, {}});
    out << one << one << one;
  }
  CHECK_THROWS_AS(load_model(scratch("not_model.ossd")), FormatError);
  CHECK_THROWS_AS(load_model(scratch("does_not_exist.ossd")), FormatError);
}

TEST_CASE("number formatting") {
  CHECK(format_real(1.0) == "1.0");
  CHECK(format_real(0.0) == "0.0");
  CHECK(format_real(0.25) == "0.25");
  CHECK(format_real(-3.0) == "-3.0");
  CHECK(format_real(1e300) == "1e+300");
  CHECK(format_real(std::nan("")) == "nan");
  CHECK(format_real(-INFINITY) == "-inf");
  Rng rng = make_rng(1, 1);
  for (int i = 0; i < 1000; ++i) {
    const double v = uniform_real(rng, -1, 1) * std::pow(10.0, uniform_int(rng, -20, 20));
    CHECK(*parse_real(format_real(v)) == v);
  }
  CHECK_FALSE(parse_real("1.5x").has_value());
  CHECK_FALSE(parse_real("").has_value());
  CHECK(*parse_real("-inf") == -INFINITY);
}

TEST_CASE("score files") {
  {
    std::ofstream out(scratch("scores.csv"));
    out << "index,score\n0,0.5\n1,-2\n";
  }
  CHECK(read_score_file(scratch("scores.csv")) == std::vector<double>{0.5, -2});
  {
    std::ofstream out(scratch("plain.txt"));
    out << "0.1\n\n0.2\n";
  }
  CHECK(read_score_file(scratch("plain.txt")) == std::vector<double>{0.1, 0.2});
  {
    std::ofstream out(scratch("bad.txt"));
    out << "0.1\nzz\n";
  }
  CHECK_THROWS_AS(read_score_file(scratch("bad.txt")), FormatError);
  {
    std::ofstream out(scratch("empty.txt"));
    out << "score\n";
  }
  CHECK_THROWS_AS(read_score_file(scratch("empty.txt")), FormatError);
}

TEST_CASE("config grammar") {
  RunSpec spec;
  std::istringstream text("# comment\nK = 4\n  tau_conf=0.7  # trailing\n\ndelta_ood = -inf\nscore_kind = energy\n");
  apply_config_text(spec, text);
  CHECK(spec.scenario.K == 4);
  CHECK(spec.train.tau_conf == 0.7);
  CHECK(spec.train.delta_ood == DeltaOod::accept_all());
  CHECK(spec.train.score_kind.id == ScoreKindId::Energy);

  apply_override(spec, "delta_ood=auto-TNR95");
  CHECK(spec.train.delta_ood.rule == DeltaOod::Rule::CalibratedTnr95);
  apply_override(spec, "K=2");
  CHECK(spec.scenario.K == 2);

  try {
    apply_override(spec, "learning_rate=0.1");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_override(spec, "K=three"), ConfigError);
  CHECK_THROWS_AS(apply_override(spec, "K"), ConfigError);
  std::istringstream broken("d = 8\nnot a setting\n");
  try {
    apply_config_text(spec, broken);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  // The dump names every key and parses back to the same spec.
  RunSpec custom;
  custom.scenario.n_probe = 17;
  custom.scenario.mean_radius = 3.25;
  custom.train.eta = 0.003;
  custom.train.delta_ood = DeltaOod::fixed(0.1);
  custom.train.score_kind = ScoreKind::energy(2.5);
  custom.train.feature_source = FeatureSource::Raw;
  custom.train.entropy_foreground_only = true;
  custom.train.seed = 123456789012345ULL;
  const std::string dumped = dump_config(custom);
  for (const auto& key : config_keys()) {
    const bool listed = ("\n" + dumped).find("\n" + key + " = ") != std::string::npos;
    CHECK(listed);
  }
  RunSpec back;
  std::istringstream in(dumped);
  apply_config_text(back, in);
  CHECK(back == custom);
}
