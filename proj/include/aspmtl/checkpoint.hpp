#pragma once

#include "aspmtl/model.hpp"
#include "aspmtl/tensor.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace aspmtl {

// Binary layout (all integers and doubles little-endian):
//   "ASPMTLCK"                         8-byte magic
//   u32 version                         currently 1
//   u64 n, n bytes                      manifest, compact JSON with sorted keys
//   u64 count                           number of tensors
//   per tensor: u32 n, n name bytes, u32 rank, rank x u64 dims,
//               prod(dims) x f64 values in row-major order
// Nothing time- or host-dependent is written, so identical models produce
// identical bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Model <-> checkpoint. The manifest records scheme, task count, sizes,
// classes, the LSTM block and input order, and the head feature order.
// `extra` is stored under manifest["extra"] (vocabulary, task names, data
// settings live there).
Checkpoint to_checkpoint(const Model& model, const nlohmann::json& extra = nlohmann::json::object());
Model model_from_checkpoint(const Checkpoint& ck);

}  // namespace aspmtl
