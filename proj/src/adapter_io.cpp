#include "loraguard/adapter_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace loraguard {

namespace {

constexpr std::array<uint8_t, 4> kMagic = {'L', 'G', 'R', 'D'};
constexpr uint32_t kEmbedLayerId = 1000;
constexpr uint32_t kHeadLayerId = 1001;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32(out, bits);
}

void put_string(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  Reader(const std::vector<uint8_t>& bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    const uint8_t* p = take(2);
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }
  uint32_t u32() {
    const uint8_t* p = take(4);
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }
  float f32() {
    const uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
  }
  std::string string() {
    const uint32_t len = u32();
    const uint8_t* p = take(len);
    return std::string(reinterpret_cast<const char*>(p), len);
  }
  size_t offset() const { return pos_; }

 private:
  const uint8_t* take(size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw std::runtime_error("adapter file '" + origin_ + "': truncated at byte " +
                               std::to_string(pos_));
    }
    const uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::vector<uint8_t>& bytes_;
  std::string origin_;
  size_t pos_ = 0;
};

void put_tensor(std::vector<uint8_t>& out, const Tensor2D& t) {
  for (float v : t.data) put_f32(out, v);
}

Tensor2D read_tensor(Reader& r, int rows, int cols) {
  Tensor2D t(rows, cols);
  for (auto& v : t.data) v = r.f32();
  return t;
}

}  // namespace

uint32_t crc32_ieee(const uint8_t* data, size_t size) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int bit = 0; bit < 8; ++bit) c = (c & 1) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < size; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

std::vector<uint8_t> serialize_adapter_file(const AdapterFile& file) {
  if (file.layers.size() > 0xffff) {
    throw std::invalid_argument("adapter file: too many layers");
  }
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_u16(out, file.version);
  out.push_back(static_cast<uint8_t>(file.kind));
  put_u16(out, static_cast<uint16_t>(file.layers.size()));

  for (const AdapterFileLayer& layer : file.layers) {
    put_u32(out, layer.layer_id);
    put_u32(out, layer.d);
    put_u32(out, layer.k);
    put_u32(out, layer.r);
  }
  for (const AdapterFileLayer& layer : file.layers) {
    if (file.kind == AdapterFile::Kind::adapter) {
      if (layer.B.rows != static_cast<int>(layer.d) || layer.B.cols != static_cast<int>(layer.r) ||
          layer.A.rows != static_cast<int>(layer.r) || layer.A.cols != static_cast<int>(layer.k)) {
        throw std::invalid_argument("adapter file: layer " + std::to_string(layer.layer_id) +
                                    " payload shapes disagree with the declared table entry");
      }
      put_tensor(out, layer.B);
      put_tensor(out, layer.A);
    } else {
      if (layer.r != 0) {
        throw std::invalid_argument("adapter file: base layer " + std::to_string(layer.layer_id) +
                                    " must declare r = 0");
      }
      if (layer.B.rows != static_cast<int>(layer.d) || layer.B.cols != static_cast<int>(layer.k)) {
        throw std::invalid_argument("adapter file: base layer " + std::to_string(layer.layer_id) +
                                    " dense payload shape disagrees with the table entry");
      }
      put_tensor(out, layer.B);
    }
  }

  put_u32(out, static_cast<uint32_t>(file.metadata.size()));
  for (const auto& [key, value] : file.metadata) {
    put_string(out, key);
    put_string(out, value);
  }
  put_u32(out, crc32_ieee(out.data(), out.size()));
  return out;
}

AdapterFile parse_adapter_file(const std::vector<uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < kMagic.size() + 4) {
    throw std::runtime_error("adapter file '" + origin + "': too short");
  }
  const uint32_t stored_crc = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                              (static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8) |
                              (static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16) |
                              (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
  const uint32_t actual_crc = crc32_ieee(bytes.data(), bytes.size() - 4);
  if (stored_crc != actual_crc) {
    throw std::runtime_error("adapter file '" + origin + "': checksum mismatch");
  }

  Reader r(bytes, origin);
  std::array<uint8_t, 4> magic = {r.u8(), r.u8(), r.u8(), r.u8()};
  if (magic != kMagic) {
    throw std::runtime_error("adapter file '" + origin + "': bad magic bytes");
  }
  AdapterFile file;
  file.version = r.u16();
  if (file.version != 1) {
    throw std::runtime_error("adapter file '" + origin + "': unsupported version " +
                             std::to_string(file.version));
  }
  const uint8_t kind = r.u8();
  if (kind > 1) {
    throw std::runtime_error("adapter file '" + origin + "': unknown kind " +
                             std::to_string(kind));
  }
  file.kind = static_cast<AdapterFile::Kind>(kind);

  const uint16_t layer_count = r.u16();
  file.layers.resize(layer_count);
  for (auto& layer : file.layers) {
    layer.layer_id = r.u32();
    layer.d = r.u32();
    layer.k = r.u32();
    layer.r = r.u32();
  }
  for (auto& layer : file.layers) {
    if (file.kind == AdapterFile::Kind::adapter) {
      layer.B = read_tensor(r, layer.d, layer.r);
      layer.A = read_tensor(r, layer.r, layer.k);
    } else {
      if (layer.r != 0) {
        throw std::runtime_error("adapter file '" + origin + "': base layer " +
                                 std::to_string(layer.layer_id) + " declares r != 0");
      }
      layer.B = read_tensor(r, layer.d, layer.k);
    }
  }
  const uint32_t metadata_count = r.u32();
  file.metadata.reserve(metadata_count);
  for (uint32_t i = 0; i < metadata_count; ++i) {
    std::string key = r.string();
    std::string value = r.string();
    file.metadata.emplace_back(std::move(key), std::move(value));
  }
  if (r.offset() != bytes.size() - 4) {
    throw std::runtime_error("adapter file '" + origin + "': trailing bytes before checksum");
  }
  return file;
}

void write_adapter_file(const std::string& path, const AdapterFile& file) {
  const std::vector<uint8_t> bytes = serialize_adapter_file(file);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_adapter_file: cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_adapter_file: short write to " + path);
}

AdapterFile read_adapter_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_adapter_file: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_adapter_file(bytes, path);
}

AdapterFile to_adapter_file(const LoraAdapter& adapter,
                            std::vector<std::pair<std::string, std::string>> metadata) {
  validate_adapter(adapter);
  AdapterFile file;
  file.kind = AdapterFile::Kind::adapter;
  AdapterFileLayer layer;
  layer.layer_id = static_cast<uint32_t>(adapter.layer);
  layer.d = static_cast<uint32_t>(adapter.out_dim());
  layer.k = static_cast<uint32_t>(adapter.in_dim());
  layer.r = static_cast<uint32_t>(adapter.rank());
  layer.B = adapter.B;
  layer.A = adapter.A;
  file.layers.push_back(std::move(layer));
  file.metadata = std::move(metadata);
  file.metadata.emplace_back("name", adapter.name);
  return file;
}

LoraAdapter adapter_from_file(const AdapterFile& file) {
  if (file.kind != AdapterFile::Kind::adapter) {
    throw std::runtime_error("adapter_from_file: file holds a base model, not an adapter");
  }
  if (file.layers.size() != 1) {
    throw std::runtime_error("adapter_from_file: expected a single layer, found " +
                             std::to_string(file.layers.size()));
  }
  LoraAdapter adapter;
  adapter.layer = static_cast<int>(file.layers[0].layer_id);
  adapter.B = file.layers[0].B;
  adapter.A = file.layers[0].A;
  adapter.name = metadata_value(file, "name");
  validate_adapter(adapter);
  return adapter;
}

AdapterFile to_base_file(const BaseModel& base) {
  AdapterFile file;
  file.kind = AdapterFile::Kind::base;

  auto dense_layer = [](uint32_t id, const Tensor2D& m) {
    AdapterFileLayer layer;
    layer.layer_id = id;
    layer.d = static_cast<uint32_t>(m.rows);
    layer.k = static_cast<uint32_t>(m.cols);
    layer.r = 0;
    layer.B = m;
    return layer;
  };
  file.layers.push_back(dense_layer(static_cast<uint32_t>(kHiddenLayer), base.hidden));
  file.layers.push_back(dense_layer(kEmbedLayerId, base.embed));
  file.layers.push_back(dense_layer(kHeadLayerId, base.head));

  file.metadata.emplace_back("kind", "base");
  file.metadata.emplace_back("vocab", std::to_string(base.cfg.vocab));
  file.metadata.emplace_back("seq_len", std::to_string(base.cfg.seq_len));
  file.metadata.emplace_back("embed_dim", std::to_string(base.cfg.embed_dim));
  file.metadata.emplace_back("classes", std::to_string(base.cfg.classes));
  file.metadata.emplace_back("clean_vocab", std::to_string(base.cfg.clean_vocab));
  return file;
}

BaseModel base_from_file(const AdapterFile& file) {
  if (file.kind != AdapterFile::Kind::base) {
    throw std::runtime_error("base_from_file: file holds an adapter, not a base model");
  }
  BaseModel base;
  base.cfg.vocab = std::stoi(metadata_value(file, "vocab"));
  base.cfg.seq_len = std::stoi(metadata_value(file, "seq_len"));
  base.cfg.embed_dim = std::stoi(metadata_value(file, "embed_dim"));
  base.cfg.classes = std::stoi(metadata_value(file, "classes"));
  base.cfg.clean_vocab = std::stoi(metadata_value(file, "clean_vocab"));

  bool have_hidden = false, have_embed = false, have_head = false;
  for (const AdapterFileLayer& layer : file.layers) {
    if (layer.layer_id == static_cast<uint32_t>(kHiddenLayer)) {
      base.hidden = layer.B;
      have_hidden = true;
    } else if (layer.layer_id == kEmbedLayerId) {
      base.embed = layer.B;
      have_embed = true;
    } else if (layer.layer_id == kHeadLayerId) {
      base.head = layer.B;
      have_head = true;
    }
  }
  if (!have_hidden || !have_embed || !have_head) {
    throw std::runtime_error("base_from_file: missing hidden/embed/head layer");
  }
  return base;
}

std::string metadata_value(const AdapterFile& file, const std::string& key) {
  for (const auto& [k, v] : file.metadata) {
    if (k == key) return v;
  }
  return "";
}

}  // namespace loraguard
