#include "fgmamba/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace fgmamba {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

void put_i64(std::vector<uint8_t>& out, int64_t v) {
  uint64_t u = static_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((u >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;

  void need(size_t n) const {
    FGM_CHECK(pos + n <= buf.size(), "checkpoint: truncated data");
  }
  uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = static_cast<uint32_t>(buf[pos]) | (static_cast<uint32_t>(buf[pos + 1]) << 8) |
                 (static_cast<uint32_t>(buf[pos + 2]) << 16) |
                 (static_cast<uint32_t>(buf[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  int64_t i64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return static_cast<int64_t>(v);
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

void put_config(std::vector<uint8_t>& out, const ModelConfig& cfg) {
  put_u32(out, static_cast<uint32_t>(cfg.channels));
  put_u32(out, static_cast<uint32_t>(cfg.n_fgblocks));
  put_u32(out, static_cast<uint32_t>(cfg.n_gasm_per_block));
  put_u32(out, static_cast<uint32_t>(cfg.scale));
  put_u32(out, static_cast<uint32_t>(cfg.state_dim));
  put_u32(out, static_cast<uint32_t>(cfg.expansion));
  out.push_back(cfg.use_gau ? 1 : 0);
  out.push_back(cfg.use_pffm ? 1 : 0);
  put_u32(out, static_cast<uint32_t>(cfg.in_channels));
}

ModelConfig read_config(Reader& r) {
  ModelConfig cfg;
  cfg.channels = r.u32();
  cfg.n_fgblocks = r.u32();
  cfg.n_gasm_per_block = r.u32();
  cfg.scale = r.u32();
  cfg.state_dim = r.u32();
  cfg.expansion = r.u32();
  cfg.use_gau = r.u8() != 0;
  cfg.use_pffm = r.u8() != 0;
  cfg.in_channels = r.u32();
  return cfg;
}

}  // namespace

std::vector<uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'F', 'G', 'M', 'B'});
  put_u32(out, kCheckpointVersion);
  put_config(out, ck.config);
  put_u32(out, static_cast<uint32_t>(ck.tensors.size()));
  std::unordered_set<std::string> seen;
  for (const auto& t : ck.tensors) {
    FGM_CHECK(seen.insert(t.name).second, "checkpoint: duplicate tensor name " + t.name);
    FGM_CHECK(numel_of(t.shape) == static_cast<int64_t>(t.values.size()),
              "checkpoint: shape/value mismatch for " + t.name);
    for (float v : t.values)
      FGM_CHECK(std::isfinite(v), "checkpoint: non-finite value in " + t.name);
    put_u32(out, static_cast<uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(0);  // dtype f32
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int64_t e : t.shape) put_i64(out, e);
    for (float v : t.values) put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  FGM_CHECK(r.str(4) == "FGMB", "checkpoint: bad magic");
  uint32_t version = r.u32();
  FGM_CHECK(version == kCheckpointVersion,
            "checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config = read_config(r);
  uint32_t count = r.u32();
  std::unordered_set<std::string> seen;
  ck.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensorF t;
    uint32_t name_len = r.u32();
    t.name = r.str(name_len);
    FGM_CHECK(seen.insert(t.name).second, "checkpoint: duplicate tensor name " + t.name);
    uint8_t dtype = r.u8();
    FGM_CHECK(dtype == 0, "checkpoint: unsupported dtype code");
    uint32_t rank = r.u32();
    t.shape.resize(rank);
    for (uint32_t d = 0; d < rank; ++d) t.shape[d] = r.i64();
    int64_t n = numel_of(t.shape);
    t.values.resize(static_cast<size_t>(n));
    for (int64_t v = 0; v < n; ++v) {
      t.values[static_cast<size_t>(v)] = r.f32();
      FGM_CHECK(std::isfinite(t.values[static_cast<size_t>(v)]),
                "checkpoint: non-finite value in " + t.name);
    }
    ck.tensors.push_back(std::move(t));
  }
  FGM_CHECK(r.pos == bytes.size(), "checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::vector<uint8_t> bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FGM_CHECK(out.good(), "checkpoint: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  FGM_CHECK(out.good(), "checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FGM_CHECK(in.good(), "checkpoint: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint snapshot_model(FgMamba<float>& model) {
  Checkpoint ck;
  ck.config = model.config();
  model.for_each_param([&](const std::string& name, Tensor<float>& t) {
    NamedTensorF nt;
    nt.name = name;
    nt.shape = t.shape();
    nt.values.assign(t.data().begin(), t.data().end());
    ck.tensors.push_back(std::move(nt));
  });
  return ck;
}

FgMamba<float> model_from_checkpoint(const Checkpoint& ck) {
  FgMamba<float> model(ck.config, 0);
  std::unordered_map<std::string, const NamedTensorF*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t;
  size_t matched = 0;
  model.for_each_param([&](const std::string& name, Tensor<float>& t) {
    auto it = by_name.find(name);
    FGM_CHECK(it != by_name.end(), "checkpoint: missing tensor " + name);
    FGM_CHECK(it->second->shape == t.shape(),
              "checkpoint: shape mismatch for " + name + " (never reshaped silently)");
    std::copy(it->second->values.begin(), it->second->values.end(), t.data().begin());
    ++matched;
  });
  FGM_CHECK(matched == ck.tensors.size(), "checkpoint: archive holds unknown tensors");
  return model;
}

}  // namespace fgmamba
