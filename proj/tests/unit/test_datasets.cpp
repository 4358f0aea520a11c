#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include "vaedist/datasets.hpp"
#include "vaedist/random.hpp"

using namespace vaedist;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto d = fs::temp_directory_path() / ("vaedist_ds_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

// Hand-assembled NPY v1.0 file, independent of the library writer.
std::string npy_bytes(const std::string &dict, const std::string &payload,
                      const std::string &magic = "\x93NUMPY", char major = 1) {
  std::string header = dict;
  while ((10 + header.size() + 1) % 64 != 0)
    header += ' ';
  header += '\n';
  std::string out = magic;
  out += major;
  out += '\0';
  out += static_cast<char>(header.size() & 0xff);
  out += static_cast<char>(header.size() >> 8);
  return out + header + payload;
}

std::span<const std::byte> as_span(const std::string &s) {
  return {reinterpret_cast<const std::byte *>(s.data()), s.size()};
}

const std::string kU8Dict = "{'descr': '|u1', 'fortran_order': False, 'shape': (1, 2, 2), }";

} // namespace

TEST_CASE("xysquares origin observation") {
  XYSquaresParams p;
  auto o = xysquares_generate(p, {{0, 0, 0, 0, 0, 0}});
  CHECK(o.channels == 3);
  CHECK(o.height == 64);
  for (int c = 0; c < 3; ++c) {
    int active = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        double v = o.at(c, y, x);
        CHECK((v == 0.0 || v == 1.0));
        active += v == 1.0;
        if (v == 1.0)
          CHECK((y < 8 && x < 8));
      }
    CHECK(active == 64);
  }
}

TEST_CASE("xysquares placement follows x then y per square") {
  XYSquaresParams p;
  auto o = xysquares_generate(p, {{3, 5, 0, 0, 7, 7}});
  CHECK(o.at(0, 40, 24) == 1.0);
  CHECK(o.at(0, 47, 31) == 1.0);
  CHECK(o.at(0, 48, 24) == 0.0);
  CHECK(o.at(2, 63, 63) == 1.0);
  CHECK(o.at(1, 40, 24) == 0.0);
}

TEST_CASE("xysquares single-factor change differs in exactly 128 values of one channel") {
  XYSquares ds;
  auto rng = make_rng(4, 0);
  for (int trial = 0; trial < 30; ++trial) {
    auto a = ds.space().sample_pos(rng);
    int f = trial % 6;
    auto b = a;
    b[f] = (a[f] + 1 + trial % 7) % 8;
    auto oa = ds.observation(a), ob = ds.observation(b);
    int diff = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (oa.at(c, y, x) != ob.at(c, y, x)) {
            ++diff;
            CHECK(c == f / 2);
          }
    CHECK(diff == 128);
  }
}

TEST_CASE("xysquares determinism and active-pixel invariant") {
  XYSquaresParams p;
  p.spacing = 3;
  XYSquares ds(p);
  auto rng = make_rng(5, 0);
  for (int trial = 0; trial < 50; ++trial) {
    auto pos = ds.space().sample_pos(rng);
    auto a = ds.observation(pos), b = ds.observation(pos);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(double)) == 0);
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (double v : a.channel(c))
        s += v;
      CHECK(s == 64.0);
    }
    Observation reused(1, 1, 1);
    ds.observe_into(pos, reused);
    CHECK(reused.data == a.data);
  }
}

TEST_CASE("xysquares params validation") {
  XYSquaresParams p;
  p.spacing = 9;
  CHECK_THROWS(p.validate());
  p.spacing = 8;
  p.num_squares = 4;
  CHECK_THROWS(p.validate());
  XYSquares ds;
  CHECK_THROWS_AS(ds.observation(FactorPos{{8, 0, 0, 0, 0, 0}}), InvalidPosition);
}

TEST_CASE("xysquares statistics match the published constants") {
  XYSquares ds;
  auto s = ds.known_stats().value();
  for (int c = 0; c < 3; ++c) {
    CHECK(s.mean[c] == doctest::Approx(0.015625).epsilon(1e-12));
    CHECK(std::abs(s.std[c] - 0.124034734589209) < 1e-12);
  }
  // every observation holds the same number of ones, so a sampled pass is exact
  auto rng = make_rng(6, 0);
  auto sampled = channel_stats(ds, 200, rng);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(sampled.mean[c] - 0.015625) < 1e-12);
    CHECK(std::abs(sampled.std[c] - 0.124034734589209) < 1e-12);
  }
}

TEST_CASE("exhaustive stats on a small variant, then standardised stats are 0/1") {
  XYSquaresParams p{16, 4, 4, 3, 2};
  XYSquares ds(p);
  auto rng = make_rng(7, 0);
  auto s = channel_stats(ds, 0, rng);
  auto known = ds.known_stats().value();
  for (int c = 0; c < 2; ++c) {
    CHECK(std::abs(s.mean[c] - known.mean[c]) < 1e-12);
    CHECK(std::abs(s.std[c] - known.std[c]) < 1e-12);
  }
}

TEST_CASE("constant dataset has zero std and is rejected") {
  FunctionDataset ds("const", FactorSpace({3}), 1, 4, 4,
                     [](const FactorPos &) { return Observation(1, 4, 4, 0.5); });
  auto rng = make_rng(8, 0);
  CHECK_THROWS_AS(channel_stats(ds, 0, rng), std::domain_error);
}

TEST_CASE("standardise") {
  ChannelStats s{{0.25, 0.5}, {0.5, 2.0}};
  Observation o(2, 3, 3);
  for (int c = 0; c < 2; ++c)
    for (double &v : o.channel(c))
      v = s.mean[c];
  auto z = standardise(o, s);
  for (double v : z.data)
    CHECK(v == 0.0);

  auto rng = make_rng(9, 0);
  std::uniform_real_distribution<double> u(0, 1);
  for (double &v : o.data)
    v = u(rng);
  auto back = destandardise(standardise(o, s), s);
  for (std::size_t i = 0; i < o.size(); ++i)
    CHECK(std::abs(back.data[i] - o.data[i]) < 1e-12);

  CHECK_THROWS(standardise(Observation(3, 2, 2), s));
}

// Independent oracle: per-observation channel mean and sample std, averaged.
static ChannelStats per_image_stats(const GroundTruthDataset &ds) {
  const int C = ds.channels();
  const double P = double(ds.height()) * ds.width();
  ChannelStats s{std::vector<double>(C, 0), std::vector<double>(C, 0)};
  for (std::int64_t i = 0; i < ds.space().total(); ++i) {
    auto o = ds.observation(i);
    for (int c = 0; c < C; ++c) {
      double sum = 0, sq = 0;
      for (double v : o.channel(c))
        sum += v;
      for (double v : o.channel(c))
        sq += (v - sum / P) * (v - sum / P);
      s.mean[c] += sum / P;
      s.std[c] += std::sqrt(sq / (P - 1));
    }
  }
  for (int c = 0; c < C; ++c) {
    s.mean[c] /= ds.space().total();
    s.std[c] /= ds.space().total();
  }
  return s;
}

TEST_CASE("channel_stats matches a per-image oracle") {
  FunctionDataset ds("noise", FactorSpace({5, 3}), 2, 6, 4, [](const FactorPos &p) {
    Observation o(2, 6, 4);
    auto rng = make_rng(p[0], p[1]);
    std::uniform_real_distribution<double> u(0, 1);
    for (double &v : o.data)
      v = u(rng);
    return o;
  });
  auto rng = make_rng(11, 0);
  auto got = channel_stats(ds, 0, rng), want = per_image_stats(ds);
  for (int c = 0; c < 2; ++c) {
    CHECK(std::abs(got.mean[c] - want.mean[c]) < 1e-12);
    CHECK(std::abs(got.std[c] - want.std[c]) < 1e-12);
  }
}

TEST_CASE("standardised full pass has zero mean and unit std") {
  XYSquaresParams p{32, 8, 4, 8, 3};
  XYSquares ds(p);
  PreprocessedDataset view(ds, 32, 32, ds.known_stats().value());
  auto s = per_image_stats(view);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(s.mean[c]) < 1e-6);
    CHECK(std::abs(s.std[c] - 1.0) < 1e-6);
  }
}

TEST_CASE("resize_bilinear") {
  Observation img(1, 64, 64);
  auto rng = make_rng(10, 0);
  std::uniform_real_distribution<double> u(0, 1);
  for (double &v : img.data)
    v = u(rng);
  CHECK(resize_bilinear(img, 64, 64).data == img.data);

  Observation flat(2, 7, 5, 0.3);
  for (auto [h, w] : std::vector<std::pair<int, int>>{{3, 3}, {11, 2}, {1, 1}, {20, 20}}) {
    auto r = resize_bilinear(flat, h, w);
    CHECK(r.height == h);
    for (double v : r.data)
      CHECK(v == doctest::Approx(0.3).epsilon(1e-14));
  }

  Observation checker(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      checker.at(0, y, x) = (x + y) % 2;
  auto half = resize_bilinear(checker, 2, 2);
  for (double v : half.data)
    CHECK(v == doctest::Approx(0.5).epsilon(1e-14));

  CHECK_THROWS(resize_bilinear(img, 0, 3));
}

TEST_CASE("npy fixture with 0 and 255 scales to 0 and 1") {
  auto dir = temp_dir();
  std::string payload = {'\0', '\xff', '\xff', '\0'};
  {
    std::ofstream(dir / "u8.npy", std::ios::binary) << npy_bytes(kU8Dict, payload);
  }
  for (bool mm : {false, true}) {
    auto arr = NpyArray::load(dir / "u8.npy", mm);
    CHECK(arr.dtype() == NpyDtype::UInt8);
    CHECK(arr.shape() == std::vector<std::size_t>{1, 2, 2});
    NpyDataset ds("fixture", arr, ArrayLayout::NHW, FactorSpace({1}));
    auto o = ds.observation(std::int64_t{0});
    CHECK(o.data == std::vector<double>{0.0, 1.0, 1.0, 0.0});
  }
  fs::remove_all(dir);
}

TEST_CASE("binary uint8 data is not rescaled") {
  std::string file = npy_bytes(kU8Dict, std::string{'\0', '\1', '\1', '\0'});
  NpyDataset ds("bin", NpyArray::parse(as_span(file)), ArrayLayout::NHW, FactorSpace({1}));
  CHECK(ds.scale() == 1.0);
  CHECK(ds.observation(std::int64_t{0}).data == std::vector<double>{0, 1, 1, 0});
}

TEST_CASE("npy errors") {
  std::string good_payload(4, '\0');
  CHECK_THROWS_AS(NpyArray::parse(as_span(npy_bytes(kU8Dict, good_payload, "\x93NUMPZ"))), NpyError);
  CHECK_THROWS_AS(NpyArray::parse(as_span(npy_bytes(kU8Dict, good_payload, "\x93NUMPY", 2))), NpyError);
  CHECK_THROWS_AS(
      NpyArray::parse(as_span(npy_bytes(
          "{'descr': '|u1', 'fortran_order': True, 'shape': (1, 2, 2), }", good_payload))),
      NpyError);
  CHECK_THROWS_AS(
      NpyArray::parse(as_span(npy_bytes(
          "{'descr': '<i8', 'fortran_order': False, 'shape': (1, 2, 2), }", good_payload))),
      NpyError);
  CHECK_THROWS_AS(NpyArray::parse(as_span(npy_bytes(kU8Dict, std::string(3, '\0')))), NpyError);
  CHECK_THROWS_AS(NpyArray::parse(as_span(std::string("\x93NU"))), NpyError);
  CHECK_THROWS_AS(NpyArray::load("/nonexistent/file.npy"), NpyError);
}

TEST_CASE("npy writer round trip for every dtype") {
  auto dir = temp_dir();
  std::vector<double> d{0.25, -1.5, 3.0, 1e-300, 7.0, 8.5};
  save_npy<double>(dir / "d.npy", {2, 3}, d);
  auto a = NpyArray::load(dir / "d.npy");
  CHECK(a.dtype() == NpyDtype::Float64);
  for (std::size_t i = 0; i < d.size(); ++i)
    CHECK(a.value(i) == d[i]);

  std::vector<float> f{0.5f, 0.25f};
  save_npy<float>(dir / "f.npy", {2}, f);
  auto b = NpyArray::load(dir / "f.npy", true);
  CHECK(b.value(1) == 0.25);
  CHECK(b.shape() == std::vector<std::size_t>{2});

  std::vector<std::uint8_t> u{1, 2, 3};
  save_npy<std::uint8_t>(dir / "u.npy", {3}, u);
  CHECK(NpyArray::load(dir / "u.npy").value(2) == 3.0);

  // header is 64-byte aligned as the format recommends
  std::ifstream in(dir / "d.npy", std::ios::binary);
  std::string raw((std::istreambuf_iterator<char>(in)), {});
  std::size_t hlen = static_cast<unsigned char>(raw[8]) | (static_cast<unsigned char>(raw[9]) << 8);
  CHECK((10 + hlen) % 64 == 0);
  fs::remove_all(dir);
}

TEST_CASE("npy layouts map to CHW") {
  // NHWC, 1 observation, 1x2 pixels, 3 channels
  std::vector<float> v{1, 2, 3, 4, 5, 6};
  auto dir = temp_dir();
  save_npy<float>(dir / "hwc.npy", {1, 1, 2, 3}, v);
  NpyDataset hwc("hwc", NpyArray::load(dir / "hwc.npy"), ArrayLayout::NHWC, FactorSpace({1}));
  auto o = hwc.observation(std::int64_t{0});
  CHECK(o.channels == 3);
  CHECK(o.at(0, 0, 0) == 1);
  CHECK(o.at(0, 0, 1) == 4);
  CHECK(o.at(2, 0, 1) == 6);

  save_npy<float>(dir / "chw.npy", {1, 3, 1, 2}, v);
  NpyDataset chw("chw", NpyArray::load(dir / "chw.npy"), ArrayLayout::NCHW, FactorSpace({1}));
  CHECK(chw.observation(std::int64_t{0}).data == std::vector<double>{1, 2, 3, 4, 5, 6});

  CHECK_THROWS_AS(NpyDataset("bad", NpyArray::load(dir / "chw.npy"), ArrayLayout::NCHW,
                             FactorSpace({2})),
                  NpyError);
  CHECK_THROWS(parse_layout("HWN"));
  fs::remove_all(dir);
}

TEST_CASE("manifest resolves the array path and factor structure") {
  auto dir = temp_dir();
  std::vector<std::uint8_t> px(6 * 4, 0);
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint8_t>(i * 10);
  save_npy<std::uint8_t>(dir / "toy.npy", {6, 2, 2}, px);
  {
    std::ofstream m(dir / "toy.manifest");
    m << "# toy data\nname=toy\nnpy=toy.npy\nlayout=NHW\nfactors=3,2\nfactor_names=a,b\n";
  }
  auto man = DatasetManifest::load(dir / "toy.manifest");
  CHECK(man.factors == std::vector<int>{3, 2});
  auto ds = open_manifest(man);
  CHECK(ds->name() == "toy");
  CHECK(ds->space().name(1) == "b");
  auto o = ds->observation(FactorPos{{2, 1}});
  CHECK(o.at(0, 0, 0) == doctest::Approx(200.0 / 255.0));
  CHECK_THROWS(DatasetManifest::load(dir / "missing.manifest"));
  fs::remove_all(dir);
}

TEST_CASE("preprocessed view resizes then standardises") {
  XYSquaresParams p{16, 4, 4, 4, 1};
  XYSquares ds(p);
  ChannelStats s{{0.1}, {0.5}};
  PreprocessedDataset view(ds, 8, 8, s);
  CHECK(view.height() == 8);
  FactorPos pos{{1, 2}};
  auto expect = standardise(resize_bilinear(ds.observation(pos), 8, 8), s);
  CHECK(view.observation(pos).data == expect.data);
  CHECK_THROWS(PreprocessedDataset(ds, 8, 8, ChannelStats{{0, 0}, {1, 1}}));
}
