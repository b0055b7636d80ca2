#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "smc/error.hpp"
#include "smc/package_io.hpp"
#include "support.hpp"

using namespace smc;
using namespace smc::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no smc::Error thrown");
  return ErrorCode::InvalidInput;
}

std::uint32_t meta_length(const Bytes& b) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[8 + i]) << (8 * i);
  return v;
}

ModelFile tiny_model() {
  ModelGraph m = make_model({2, 1, 1}, {dense_layer("d", 2, 2)}, 0, RngStream{3, 0});
  round_params_to_f32(m.params);
  return {m, {4, 7}, Domain::B};
}

}  // namespace

TEST_CASE("component round trip over random cases") {
  for (std::uint64_t k = 0; k < 100; ++k) {
    CAPTURE(k);
    const SmcPackage pkg = random_package(k);
    const Bytes bytes = encode_package(pkg);
    const SmcPackage back = decode_package(bytes);
    CHECK(back == pkg);
    CHECK(encode_package(back) == bytes);
  }
}

TEST_CASE("encoding is deterministic and sized by its contents") {
  const ModelFile m = tiny_model();
  const Bytes a = encode_model(m);
  CHECK(a == encode_model(m));
  CHECK(decode_model(a) == m);
  CHECK(detect_format(a) == kModelMagic);
  // magic + version + length + metadata + 6 floats + crc
  CHECK(a.size() == 7 + 1 + 4 + meta_length(a) + 24 + 4);
  CHECK(std::memcmp(a.data(), "SMCMDL1\x01", 8) == 0);

  const SmcPackage pkg = random_package(3);
  const Bytes p = encode_package(pkg);
  CHECK(p.size() == 12 + meta_length(p) + 4 * component_params(apply_smc(make_toy_classifier(3, RngStream{5, 0}), pkg)).values.size() + 4);
}

TEST_CASE("dataset round trip") {
  const ShapeDataset ds = generate({1, 4}, 3, Domain::B, 12);
  const ShapeDataset back = decode_dataset(encode_dataset(ds));
  CHECK(back.labels == ds.labels);
  // Pixels travel as float32.
  std::vector<double> rounded(ds.images.size());
  for (std::size_t i = 0; i < rounded.size(); ++i) rounded[i] = static_cast<float>(ds.images[i]);
  CHECK(back.images == rounded);
  CHECK(back.masks == ds.masks);
  CHECK(back.boxes == ds.boxes);
  CHECK(back.domain == Domain::B);
  CHECK(detect_format(encode_dataset(ds)) == kDatasetMagic);
}

TEST_CASE("every single-byte corruption is detected") {
  const Bytes clean = encode_model(tiny_model());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    for (std::uint8_t mask : {0x01, 0x80, 0xFF}) {
      Bytes bad = clean;
      bad[i] ^= mask;
      const ErrorCode c = code_of([&] { decode_model(bad); });
      CHECK((c == ErrorCode::CorruptPackage || c == ErrorCode::UnknownFormat));
    }
  }
  const Bytes pkg = encode_package(random_package(8));
  Generator gen(RngStream{8, 8});
  for (int t = 0; t < 300; ++t) {
    Bytes bad = pkg;
    bad[gen.uniform_below(bad.size())] ^= static_cast<std::uint8_t>(1 + gen.uniform_below(255));
    const ErrorCode c = code_of([&] { decode_package(bad); });
    CHECK((c == ErrorCode::CorruptPackage || c == ErrorCode::UnknownFormat));
  }
}

TEST_CASE("format errors") {
  const Bytes clean = encode_model(tiny_model());
  CHECK(code_of([] { decode_model(Bytes{}); }) == ErrorCode::UnknownFormat);
  CHECK(code_of([&] { decode_package(clean); }) == ErrorCode::UnknownFormat);
  CHECK(detect_format(Bytes{'x', 'y'}).empty());
  Bytes v2 = clean;
  v2[7] = 0x02;
  CHECK(code_of([&] { decode_model(v2); }) == ErrorCode::UnknownFormat);
  for (std::size_t keep : {std::size_t{8}, std::size_t{12}, clean.size() / 2, clean.size() - 1}) {
    CAPTURE(keep);
    CHECK(code_of([&] { decode_model(Bytes(clean.begin(), clean.begin() + static_cast<std::ptrdiff_t>(keep))); }) ==
          ErrorCode::CorruptPackage);
  }
  ModelFile inf = tiny_model();
  inf.model.params["d"].bias.values[0] = HUGE_VAL;
  CHECK(code_of([&] { encode_model(inf); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { read_file("/nonexistent/file.smcpkg"); }) == ErrorCode::NotFound);
}

TEST_CASE("crc32 known value") {
  const std::string s = "123456789";
  CHECK(crc32(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())) == 0xCBF43926u);
}
