#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "margin_audit/dataset.hpp"
#include "margin_audit/idx.hpp"

using namespace margin_audit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("margin_audit_test_" + name);
  fs::create_directories(p);
  return p;
}

// Standard normal CDF.
double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("two moons") {
  SUBCASE("zero noise points lie on the parametric half-circles") {
    const auto d = gen_two_moons(4, 0.0, 123);
    REQUIRE(d.size() == 4);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto x = d.input(i);
      if (d.labels[i] == 0) {
        CHECK(std::hypot(x[0], x[1]) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(x[1] >= -1e-12);
      } else {
        CHECK(std::hypot(x[0] - 1.0, x[1] - 0.5) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(x[1] <= 0.5 + 1e-12);
      }
    }
  }
  SUBCASE("determinism") {
    const auto a = gen_two_moons(1000, 0.1, 9);
    const auto b = gen_two_moons(1000, 0.1, 9);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK(gen_two_moons(1000, 0.1, 10).inputs != a.inputs);
  }
  SUBCASE("class means are separated in both coordinates") {
    const auto d = gen_two_moons(1000, 0.1, 4);
    double mean[2][2] = {{0, 0}, {0, 0}};
    double count[2] = {0, 0};
    for (std::size_t i = 0; i < d.size(); ++i) {
      count[d.labels[i]] += 1;
      for (int f = 0; f < 2; ++f) mean[d.labels[i]][f] += d.input(i)[f];
    }
    for (int f = 0; f < 2; ++f) {
      CHECK(std::abs(mean[0][f] / count[0] - mean[1][f] / count[1]) > 0.3);
    }
    CHECK_NOTHROW(d.validate());
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(gen_two_moons(0, 0.1, 1), DatasetError);
    CHECK_THROWS_AS(gen_two_moons(3, 0.1, 1), DatasetError);
  }
}

TEST_CASE("gaussian blobs") {
  const std::vector<std::vector<double>> centers = {{-2.0, 0.0}, {2.0, 0.0}};
  SUBCASE("zero variance puts every point on its center") {
    const auto d = gen_gaussian_blobs(10, centers, 0.0, 1);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(d.input(i)[0] == centers[d.labels[i]][0]);
      CHECK(d.input(i)[1] == centers[d.labels[i]][1]);
    }
  }
  SUBCASE("Bayes linear rule accuracy matches the Gaussian CDF") {
    const auto d = gen_gaussian_blobs(10000, centers, 0.5, 77);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t pred = d.input(i)[0] > 0.0 ? 1 : 0;
      correct += pred == d.labels[i];
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(d.size());
    const double expected = phi(2.0 / 0.5);  // ≈ 0.99997
    CHECK(acc > 0.99);
    CHECK(std::abs(acc - expected) < 0.005);
  }
  SUBCASE("determinism and errors") {
    CHECK(gen_gaussian_blobs(100, centers, 0.3, 5).inputs ==
          gen_gaussian_blobs(100, centers, 0.3, 5).inputs);
    CHECK_THROWS_AS(gen_gaussian_blobs(10, {{1.0, 1.0}, {1.0, 1.0}}, 0.0, 1), DatasetError);
    CHECK_NOTHROW(gen_gaussian_blobs(10, {{1.0, 1.0}, {1.0, 1.0}}, 0.1, 1));
  }
}

TEST_CASE("split") {
  const auto d = gen_gaussian_blobs(10, {{0.0}, {3.0}}, 0.2, 2);
  SUBCASE("sizes") {
    const auto s = split(d, {0.5, 0.3, 0.2}, 1);
    CHECK(s.train.size() == 5);
    CHECK(s.val.size() == 3);
    CHECK(s.test.size() == 2);
  }
  SUBCASE("empty part is an error") {
    CHECK_THROWS_AS(split(d, {0.8, 0.2, 0.0}, 1), DatasetError);
    CHECK_THROWS_AS(split(d, {0.5, 0.3, 0.3}, 1), DatasetError);
  }
  SUBCASE("partition of the original multiset, deterministic") {
    const auto big = gen_two_moons(200, 0.1, 3);
    const auto s = split(big, {0.6, 0.2, 0.2}, 8);
    std::multiset<std::vector<double>> orig;
    std::multiset<std::vector<double>> parts;
    for (std::size_t i = 0; i < big.size(); ++i) {
      auto r = big.input(i);
      std::vector<double> row(r.begin(), r.end());
      row.push_back(static_cast<double>(big.labels[i]));
      orig.insert(row);
    }
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (std::size_t i = 0; i < part->size(); ++i) {
        auto r = part->input(i);
        std::vector<double> row(r.begin(), r.end());
        row.push_back(static_cast<double>(part->labels[i]));
        parts.insert(row);
      }
    }
    CHECK(orig == parts);
    CHECK(split(big, {0.6, 0.2, 0.2}, 8).train.inputs == s.train.inputs);
  }
}

TEST_CASE("IDX reader and writer") {
  const auto dir = temp_dir("idx");
  const auto img_path = dir / "images.idx";
  const auto lbl_path = dir / "labels.idx";

  IdxImages images;
  images.count = 3;
  images.rows = 2;
  images.cols = 2;
  images.pixels = {0, 255, 17, 34, 51, 68, 85, 102, 119, 136, 153, 170};
  const std::vector<std::uint8_t> labels = {0, 1, 2};
  write_idx_images(img_path, images);
  write_idx_labels(lbl_path, labels);

  SUBCASE("bit-exact header") {
    std::ifstream in(img_path, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
    REQUIRE(bytes.size() == 16 + 12);
    CHECK(bytes[0] == 0x00);
    CHECK(bytes[1] == 0x00);
    CHECK(bytes[2] == 0x08);
    CHECK(bytes[3] == 0x03);
    CHECK(bytes[7] == 3);
    CHECK(bytes[11] == 2);
    CHECK(bytes[15] == 2);
  }
  SUBCASE("round trip") {
    const auto back = read_idx_images(img_path);
    CHECK(back.pixels == images.pixels);
    CHECK(read_idx_labels(lbl_path) == labels);
    const auto d = load_idx(img_path, lbl_path);
    CHECK(d.size() == 3);
    CHECK(d.n_features == 4);
    CHECK(d.num_classes == 3);
    CHECK(d.input(0)[1] == 1.0);
    CHECK(d.input(1)[0] == 51.0 / 255.0);
  }
  SUBCASE("prefix semantics") {
    const auto d = load_idx(img_path, lbl_path, 2);
    CHECK(d.size() == 2);
    CHECK(d.labels == std::vector<std::size_t>{0, 1});
  }
  SUBCASE("truncated file is an error") {
    std::ifstream in(img_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    const auto cut = dir / "cut.idx";
    std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    CHECK_THROWS_AS(read_idx_images(cut), IdxFormatError);
    CHECK_THROWS_AS(load_idx(cut, lbl_path), IdxFormatError);
  }
  SUBCASE("wrong magic reports the offset") {
    try {
      read_idx_images(lbl_path);
      FAIL("expected a format error");
    } catch (const IdxFormatError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("count mismatch") {
    const auto short_labels = dir / "short.idx";
    write_idx_labels(short_labels, {0, 1});
    CHECK_THROWS_AS(load_idx(img_path, short_labels), DatasetError);
  }
}
