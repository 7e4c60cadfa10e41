#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "loraguard/adapter.hpp"
#include "loraguard/model.hpp"

namespace loraguard {

// Checkpoint container for adapters and base models.
//
// Layout, all integers little-endian:
//   magic        "LGRD" (4 bytes)
//   version      u16 (currently 1)
//   kind         u8: 0 = base, 1 = adapter
//   layer_count  u16
//   layer table  per layer: layer_id u32, d u32, k u32, r u32
//   payloads     per layer, in table order, float32 little-endian:
//                  kind=adapter: B (d*r values), then A (r*k values)
//                  kind=base:    one dense d x k matrix (r must be 0)
//   metadata     count u32, then per entry key and value, each as
//                u32 byte length + raw bytes
//   checksum     u32 CRC-32 (IEEE 802.3 polynomial) of every preceding byte
//
// Writing is fully deterministic, so write -> read -> write round-trips to
// identical bytes.
struct AdapterFileLayer {
  uint32_t layer_id = 0;
  uint32_t d = 0;
  uint32_t k = 0;
  uint32_t r = 0;
  Tensor2D B;  // adapter: d x r; base: the dense d x k matrix
  Tensor2D A;  // adapter: r x k; base: empty
};

struct AdapterFile {
  enum class Kind : uint8_t { base = 0, adapter = 1 };

  uint16_t version = 1;
  Kind kind = Kind::adapter;
  std::vector<AdapterFileLayer> layers;
  std::vector<std::pair<std::string, std::string>> metadata;
};

uint32_t crc32_ieee(const uint8_t* data, size_t size);

std::vector<uint8_t> serialize_adapter_file(const AdapterFile& file);
AdapterFile parse_adapter_file(const std::vector<uint8_t>& bytes, const std::string& origin);

void write_adapter_file(const std::string& path, const AdapterFile& file);
AdapterFile read_adapter_file(const std::string& path);

// Adapter <-> file. The trigger-bearing metadata a trainer attaches travels
// in the key-value block.
AdapterFile to_adapter_file(const LoraAdapter& adapter,
                            std::vector<std::pair<std::string, std::string>> metadata = {});
LoraAdapter adapter_from_file(const AdapterFile& file);

// Base model <-> file: hidden weight on its injection layer id, embedding and
// head on reserved ids, model dimensions in metadata.
AdapterFile to_base_file(const BaseModel& base);
BaseModel base_from_file(const AdapterFile& file);

std::string metadata_value(const AdapterFile& file, const std::string& key);

}  // namespace loraguard
