#include "smc/package_io.hpp"

#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <zlib.h>

#include "smc/error.hpp"

namespace smc {
namespace {

using json = nlohmann::json;

constexpr std::size_t kMagicLen = 7;
constexpr std::size_t kHeaderLen = kMagicLen + 1 + 4;

struct TensorEntry {
  std::string name;
  std::string role;
  std::vector<std::size_t> shape;
  const std::vector<double>* values = nullptr;
};

struct Envelope {
  json meta;
  std::vector<float> blob;
  // directory entries in order: name/role → element range
  struct Slot {
    std::string name, role;
    std::vector<std::size_t> shape;
    std::size_t offset = 0, length = 0;
  };
  std::vector<Slot> slots;

  std::vector<double> take(const Slot& s) const {
    return {blob.begin() + static_cast<std::ptrdiff_t>(s.offset),
            blob.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length)};
  }
};

void put_u32le(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32le(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

Bytes encode_envelope(std::string_view magic, json meta, const std::vector<TensorEntry>& tensors) {
  json dir = json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    for (double v : *t.values)
      require(std::isfinite(v), ErrorCode::InvalidInput, fmt::format("tensor {}.{} is not finite", t.name, t.role));
    dir.push_back({{"name", t.name}, {"role", t.role}, {"shape", t.shape}, {"offset", offset}, {"length", t.values->size()}});
    offset += t.values->size();
  }
  meta["tensors"] = std::move(dir);
  const std::string text = meta.dump();

  Bytes out(magic.begin(), magic.end());
  out.push_back(kFormatVersion);
  put_u32le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset * 4 + 4);
  for (const auto& t : tensors) {
    for (double v : *t.values) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32le(out, bits);
    }
  }
  put_u32le(out, crc32(out));
  return out;
}

Envelope decode_envelope(std::span<const std::uint8_t> bytes, std::string_view magic) {
  require(!bytes.empty(), ErrorCode::UnknownFormat, "empty input");
  const std::string_view found = detect_format(bytes);
  require(found == magic, ErrorCode::UnknownFormat,
          found.empty() ? std::string("unrecognised magic")
                        : fmt::format("expected a {} file, got {}", magic, found));
  require(bytes.size() >= kHeaderLen + 4, ErrorCode::CorruptPackage, "truncated header");
  require(bytes[kMagicLen] == kFormatVersion, ErrorCode::UnknownFormat,
          fmt::format("unsupported format version {}", bytes[kMagicLen]));
  const std::size_t body = bytes.size() - 4;
  require(crc32(bytes.first(body)) == get_u32le(bytes.data() + body), ErrorCode::CorruptPackage, "CRC mismatch");

  const std::size_t meta_len = get_u32le(bytes.data() + kMagicLen + 1);
  require(meta_len <= body - kHeaderLen, ErrorCode::CorruptPackage, "metadata length exceeds the file");
  Envelope env;
  try {
    env.meta = json::parse(bytes.begin() + kHeaderLen, bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderLen + meta_len));
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptPackage, fmt::format("metadata is not valid JSON: {}", e.what()));
  }
  const std::size_t blob_bytes = body - kHeaderLen - meta_len;
  require(blob_bytes % 4 == 0, ErrorCode::CorruptPackage, "blob is not a whole number of floats");
  env.blob.resize(blob_bytes / 4);
  const std::uint8_t* p = bytes.data() + kHeaderLen + meta_len;
  for (std::size_t i = 0; i < env.blob.size(); ++i) {
    const std::uint32_t bits = get_u32le(p + 4 * i);
    std::memcpy(&env.blob[i], &bits, sizeof bits);
  }
  try {
    std::size_t expect = 0;
    for (const auto& e : env.meta.at("tensors")) {
      Envelope::Slot s{e.at("name").get<std::string>(), e.at("role").get<std::string>(),
                       e.at("shape").get<std::vector<std::size_t>>(), e.at("offset").get<std::size_t>(),
                       e.at("length").get<std::size_t>()};
      std::size_t prod = 1;
      for (auto d : s.shape) prod *= d;
      require(s.offset == expect && prod == s.length && s.offset + s.length <= env.blob.size(),
              ErrorCode::CorruptPackage, fmt::format("tensor directory entry {}.{} is inconsistent", s.name, s.role));
      expect += s.length;
      env.slots.push_back(std::move(s));
    }
    require(expect == env.blob.size(), ErrorCode::CorruptPackage, "blob length differs from the tensor directory");
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptPackage, fmt::format("malformed tensor directory: {}", e.what()));
  }
  return env;
}

json layer_to_json(const LayerSpec& l) {
  return {{"name", l.name}, {"kind", to_string(l.kind)}, {"block", l.block}, {"in", l.in},
          {"out", l.out},   {"kernel", l.kernel},         {"pad", l.pad}};
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.name = j.at("name").get<std::string>();
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.block = j.at("block").get<std::string>();
  l.in = j.at("in").get<std::size_t>();
  l.out = j.at("out").get<std::size_t>();
  l.kernel = j.at("kernel").get<std::size_t>();
  l.pad = j.at("pad").get<std::size_t>();
  return l;
}

json layers_to_json(const std::vector<LayerSpec>& layers) {
  json arr = json::array();
  for (const auto& l : layers) arr.push_back(layer_to_json(l));
  return arr;
}

std::vector<LayerSpec> layers_from_json(const json& arr) {
  std::vector<LayerSpec> out;
  for (const auto& j : arr) out.push_back(layer_from_json(j));
  return out;
}

void add_param_tensors(std::vector<TensorEntry>& out, const std::vector<LayerSpec>& layers, const ParamMap& params) {
  for (const auto& l : layers) {
    if (!l.has_params()) continue;
    auto it = params.find(l.name);
    require(it != params.end(), ErrorCode::NotFound, "no tensors for layer " + l.name);
    out.push_back({l.name, "weight", it->second.weight.shape, &it->second.weight.values});
    out.push_back({l.name, "bias", it->second.bias.shape, &it->second.bias.values});
  }
}

ParamMap params_from(const Envelope& env) {
  ParamMap params;
  for (const auto& s : env.slots) {
    require(s.role == "weight" || s.role == "bias", ErrorCode::CorruptPackage, "unknown tensor role " + s.role);
    Tensor& t = s.role == "weight" ? params[s.name].weight : params[s.name].bias;
    t.shape = s.shape;
    t.values = env.take(s);
  }
  return params;
}

// Any structural problem in decoded metadata means the file is not what it
// claims to be.
template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptPackage, fmt::format("malformed metadata: {}", e.what()));
  }
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    c = ::crc32(c, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

std::string_view detect_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicLen) return {};
  const std::string_view head(reinterpret_cast<const char*>(bytes.data()), kMagicLen);
  for (auto m : {kPackageMagic, kModelMagic, kDatasetMagic})
    if (head == m) return m;
  return {};
}

Bytes encode_package(const SmcPackage& pkg) {
  json meta;
  meta["kind"] = to_string(pkg.kind.variant);
  meta["old_classes"] = pkg.kind.old_classes;
  meta["new_classes"] = pkg.kind.new_classes;
  meta["task"] = to_string(pkg.kind.task);
  meta["domain"] = to_string(pkg.kind.domain);
  meta["split_candidate"] = pkg.split_candidate;
  meta["split_layer"] = pkg.split_layer;
  meta["lambda"] = pkg.lambda;
  meta["beta"] = pkg.beta;
  meta["base_checksum"] = pkg.base_checksum;
  meta["phi_s_new"] = layers_to_json(pkg.phi_s_new);
  meta["head_new"] = layers_to_json(pkg.head_new);
  std::vector<TensorEntry> tensors;
  add_param_tensors(tensors, pkg.phi_s_new, pkg.params);
  add_param_tensors(tensors, pkg.head_new, pkg.params);
  return encode_envelope(kPackageMagic, std::move(meta), tensors);
}

SmcPackage decode_package(std::span<const std::uint8_t> bytes) {
  const Envelope env = decode_envelope(bytes, kPackageMagic);
  return guarded([&] {
    SmcPackage pkg;
    const json& m = env.meta;
    pkg.kind.variant = smc_variant_from_string(m.at("kind").get<std::string>());
    pkg.kind.old_classes = m.at("old_classes").get<std::vector<int>>();
    pkg.kind.new_classes = m.at("new_classes").get<std::vector<int>>();
    pkg.kind.task = task_kind_from_string(m.at("task").get<std::string>());
    pkg.kind.domain = domain_from_string(m.at("domain").get<std::string>());
    pkg.split_candidate = m.at("split_candidate").get<std::string>();
    pkg.split_layer = m.at("split_layer").get<std::string>();
    pkg.lambda = m.at("lambda").get<double>();
    pkg.beta = m.at("beta").get<double>();
    pkg.base_checksum = m.at("base_checksum").get<std::string>();
    pkg.phi_s_new = layers_from_json(m.at("phi_s_new"));
    pkg.head_new = layers_from_json(m.at("head_new"));
    pkg.params = params_from(env);
    return pkg;
  });
}

Bytes encode_model(const ModelFile& file) {
  const ModelGraph& m = file.model;
  json meta;
  meta["input_shape"] = {m.input_shape.c, m.input_shape.h, m.input_shape.w};
  meta["layers"] = layers_to_json(m.layers);
  meta["head_start"] = m.head_start;
  meta["classes"] = file.classes;
  meta["domain"] = to_string(file.domain);
  std::vector<TensorEntry> tensors;
  add_param_tensors(tensors, m.layers, m.params);
  return encode_envelope(kModelMagic, std::move(meta), tensors);
}

ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  const Envelope env = decode_envelope(bytes, kModelMagic);
  ModelFile file = guarded([&] {
    ModelFile f;
    const json& m = env.meta;
    const auto shape = m.at("input_shape").get<std::vector<std::size_t>>();
    require(shape.size() == 3, ErrorCode::CorruptPackage, "input shape needs three dimensions");
    f.model.input_shape = {shape[0], shape[1], shape[2]};
    f.model.layers = layers_from_json(m.at("layers"));
    f.model.head_start = m.at("head_start").get<std::size_t>();
    f.classes = m.at("classes").get<std::vector<int>>();
    f.domain = domain_from_string(m.at("domain").get<std::string>());
    f.model.params = params_from(env);
    return f;
  });
  for (const auto& l : file.model.layers)
    if (l.has_params()) file.model.trainable[l.name] = true;
  file.model.validate();
  return file;
}

Bytes encode_dataset(const ShapeDataset& ds) {
  json meta;
  meta["classes"] = ds.classes;
  meta["domain"] = to_string(ds.domain);
  meta["seed"] = ds.seed;
  meta["n"] = ds.n;
  std::vector<double> labels(ds.labels.begin(), ds.labels.end());
  std::vector<double> boxes;
  for (const auto& b : ds.boxes) boxes.insert(boxes.end(), {b.cx, b.cy, b.w, b.h});
  std::vector<TensorEntry> tensors{
      {"images", "data", {ds.n, 1, kImageSide, kImageSide}, &ds.images},
      {"masks", "data", {ds.n, kImageSide, kImageSide}, &ds.masks},
      {"labels", "data", {ds.n}, &labels},
      {"boxes", "data", {ds.n, 4}, &boxes},
  };
  return encode_envelope(kDatasetMagic, std::move(meta), tensors);
}

ShapeDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  const Envelope env = decode_envelope(bytes, kDatasetMagic);
  return guarded([&] {
    ShapeDataset ds;
    ds.classes = env.meta.at("classes").get<std::vector<int>>();
    ds.domain = domain_from_string(env.meta.at("domain").get<std::string>());
    ds.seed = env.meta.at("seed").get<std::uint64_t>();
    ds.n = env.meta.at("n").get<std::size_t>();
    require(env.slots.size() == 4, ErrorCode::CorruptPackage, "dataset needs four tensors");
    ds.images = env.take(env.slots[0]);
    ds.masks = env.take(env.slots[1]);
    for (double v : env.take(env.slots[2])) ds.labels.push_back(static_cast<int>(v));
    const auto boxes = env.take(env.slots[3]);
    for (std::size_t i = 0; i + 3 < boxes.size(); i += 4) ds.boxes.push_back({boxes[i], boxes[i + 1], boxes[i + 2], boxes[i + 3]});
    require(ds.images.size() == ds.n * kImagePixels && ds.labels.size() == ds.n, ErrorCode::CorruptPackage,
            "dataset tensors do not match n");
    return ds;
  });
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::NotFound, "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::InvalidInput, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::InvalidInput, "write failed for " + path);
}

}  // namespace smc
