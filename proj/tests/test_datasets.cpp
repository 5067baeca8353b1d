#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "bsb/datasets.hpp"
#include "bsb/train.hpp"

using namespace bsb;
using Bytes = std::vector<std::uint8_t>;

namespace {

void put_u32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

Bytes idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                 const Bytes& pixels) {
  Bytes b;
  put_u32(b, magic);
  put_u32(b, n);
  put_u32(b, rows);
  put_u32(b, cols);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

Bytes idx_labels(const Bytes& labels) {
  Bytes b;
  put_u32(b, 0x801);
  put_u32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

Bytes cifar_record(std::uint8_t label, std::uint8_t fill) {
  Bytes r(3073, fill);
  r[0] = label;
  return r;
}

}  // namespace

TEST_CASE("IDX: hand-built 2-image 2x2 fixture") {
  const Bytes px{0, 255, 51, 102, 255, 0, 204, 153};
  Dataset d = parse_idx(idx_images(0x803, 2, 2, 2, px), idx_labels({3, 9}));
  CHECK(d.size() == 2);
  CHECK(d.images.shape() == Shape{2, 1, 2, 2});
  CHECK(d.images[0] == 0.0);
  CHECK(d.images[1] == 1.0);
  CHECK(d.images[2] == doctest::Approx(0.2));
  CHECK(d.images[7] == doctest::Approx(0.6));
  CHECK(d.labels == std::vector<int>{3, 9});
  CHECK(d.class_count == 10);
  CHECK_NOTHROW(d.validate());
}

TEST_CASE("IDX: malformed inputs") {
  const Bytes px(8, 7);
  CHECK_THROWS_AS(parse_idx(idx_images(0x802, 2, 2, 2, px), idx_labels({1, 2})), FormatError);
  Bytes bad_labels = idx_labels({1, 2});
  bad_labels[3] = 0x03;
  CHECK_THROWS_AS(parse_idx(idx_images(0x803, 2, 2, 2, px), bad_labels), FormatError);
  CHECK_THROWS_AS(parse_idx(idx_images(0x803, 3, 2, 2, Bytes(12, 0)), idx_labels({1, 2})),
                  DataError);
  CHECK_THROWS_AS(parse_idx(idx_images(0x803, 2, 2, 2, Bytes(7, 0)), idx_labels({1, 2})),
                  FormatError);
  CHECK_THROWS_AS(parse_idx(Bytes{0, 0, 8}, idx_labels({1})), FormatError);
  Bytes short_labels = idx_labels({1, 2});
  short_labels.pop_back();
  CHECK_THROWS_AS(parse_idx(idx_images(0x803, 2, 2, 2, px), short_labels), FormatError);
  try {
    parse_idx(idx_images(0x802, 2, 2, 2, px), idx_labels({1, 2}));
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("803") != std::string::npos);
  }
}

TEST_CASE("IDX: save and load round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "bsb_idx_test";
  std::filesystem::create_directories(dir);
  Dataset d = synth_blobs(12, 3, 6, 0.1, 4);
  save_idx(d, dir / "img", dir / "lab");
  Dataset back = load_idx(dir / "img", dir / "lab");
  CHECK(back.labels == d.labels);
  CHECK((back.images.data() - d.images.data()).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);
  CHECK_THROWS_AS(load_idx(dir / "missing", dir / "lab"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("CIFAR: record layout") {
  Bytes rec = cifar_record(7, 0);
  rec[1] = 255;            // R plane, pixel (0, 0)
  rec[1 + 1024 + 33] = 51; // G plane, pixel (1, 1)
  rec[3072] = 102;         // B plane, last pixel
  Dataset d = parse_cifar_binary(rec);
  CHECK(d.size() == 1);
  CHECK(d.labels[0] == 7);
  CHECK(d.images.shape() == Shape{1, 3, 32, 32});
  CHECK(d.images[0] == 1.0);
  CHECK(d.images[1024 + 33] == doctest::Approx(0.2));
  CHECK(d.images[3071] == doctest::Approx(0.4));
  CHECK(d.class_count == 10);
}

TEST_CASE("CIFAR: sizes and malformed input") {
  Bytes two = cifar_record(1, 10);
  Bytes second = cifar_record(2, 20);
  two.insert(two.end(), second.begin(), second.end());
  REQUIRE(two.size() == 6146);
  CHECK(parse_cifar_binary(two).size() == 2);
  CHECK_THROWS_AS(parse_cifar_binary(Bytes(3072, 0)), FormatError);
  CHECK_THROWS_AS(parse_cifar_binary(Bytes{}), FormatError);
  CHECK_THROWS_AS(parse_cifar_binary(cifar_record(10, 0)), DataError);

  const auto dir = std::filesystem::temp_directory_path() / "bsb_cifar_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "batch.bin", std::ios::binary);
    f.write(reinterpret_cast<const char*>(two.data()), static_cast<std::streamsize>(two.size()));
  }
  const std::vector<std::filesystem::path> paths{dir / "batch.bin", dir / "batch.bin"};
  Dataset d = load_cifar_binary(paths);
  CHECK(d.labels == std::vector<int>{1, 2, 1, 2});
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic blobs") {
  Dataset a = synth_blobs(40, 4, 8, 0.0, 1);
  CHECK_NOTHROW(a.validate());
  std::map<int, std::size_t> first;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it, fresh] = first.emplace(a.labels[i], i);
    if (!fresh) CHECK(a.images.sample(i) == a.images.sample(it->second));
  }
  CHECK(first.size() == 4);

  Dataset b = synth_blobs(40, 4, 8, 0.2, 9);
  Dataset c = synth_blobs(40, 4, 8, 0.2, 9);
  CHECK(b.images == c.images);
  CHECK(b.labels == c.labels);
  CHECK_THROWS_AS(synth_blobs(10, 1, 8, 0.1, 1), ValidationError);
  CHECK_THROWS_AS(synth_blobs(3, 4, 8, 0.1, 1), ValidationError);
  CHECK_THROWS_AS(synth_blobs(10, 2, 3, 0.1, 1), ValidationError);
}

TEST_CASE("synthetic blobs are learnable by a small MLP") {
  Dataset tr = synth_blobs(400, 4, 8, 0.05, 1);
  Dataset te = synth_blobs(200, 4, 8, 0.05, 2);
  Network net({flatten(), dense(64, 16), relu(), dense(16, 4)}, {1, 8, 8}, 4);
  init_he_uniform(net, 3);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 16;
  cfg.max_epochs = 20;
  cfg.seed = 4;
  auto r = train(net, tr, te, cfg);
  CHECK(evaluate(r.net, te).accuracy >= 0.99);
}

TEST_CASE("stratified split") {
  Dataset d = synth_blobs(100, 4, 6, 0.1, 3);
  const double half[] = {0.5, 0.5};
  auto parts = split(d, half, 11);
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].size() == 50);
  CHECK(parts[1].size() == 50);

  auto again = split(d, half, 11);
  CHECK(again[0].images == parts[0].images);
  CHECK(again[1].labels == parts[1].labels);

  // Property: random fractions on random data keep every sample exactly once
  // and per-class counts within one of proportional.
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t classes = 2 + seed % 4;
    const std::size_t n = 20 + seed * 7;
    Dataset data = synth_blobs(n, classes, 4, 0.3, seed);
    std::vector<double> fr{std::uniform_real_distribution<double>(0.2, 0.6)(rng)};
    fr.push_back(1.0 - fr[0]);
    auto ps = split(data, fr, seed);
    std::size_t total = 0;
    for (std::size_t p = 0; p < ps.size(); ++p) {
      total += ps[p].size();
      CHECK(std::abs(static_cast<double>(ps[p].size()) - fr[p] * n) < 1.0);
      std::map<int, std::size_t> counts, orig;
      for (int l : ps[p].labels) ++counts[l];
      for (int l : data.labels) ++orig[l];
      for (auto [label, count] : orig) {
        CHECK(std::abs(static_cast<double>(counts[label]) - fr[p] * count) <= 1.0 + 1e-9);
      }
    }
    CHECK(total == n);
    // Disjointness: every image appears as often across parts as in the source.
    std::multiset<std::vector<double>> src, out;
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto s = data.images.sample(i);
      src.insert(std::vector<double>(s.begin(), s.end()));
    }
    for (const auto& p : ps) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto s = p.images.sample(i);
        out.insert(std::vector<double>(s.begin(), s.end()));
      }
    }
    CHECK(src == out);
  }
  const double bad[] = {0.5, 0.6};
  CHECK_THROWS_AS(split(d, bad, 1), ValidationError);
}

TEST_CASE("seeded permutation") {
  auto p = seeded_permutation(50, 3);
  auto q = seeded_permutation(50, 3);
  CHECK(p == q);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(p[i] == i);
  CHECK(seeded_permutation(50, 4) != q);
}
