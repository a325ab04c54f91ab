// csiam/checkpoint.hpp
//
// "CSCK" checkpoint format: magic, u32 version, u32 count, then per tensor a
// u16 name length, UTF-8 name, u8 rank, u32 dims, little-endian f32 data.
// Adam moments are stored under "<name>.m" / "<name>.v"; the step counter
// rides along as the reserved 1-element tensor "__step".

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "csiam/optimizer.hpp"
#include "csiam/params.hpp"
#include "csiam/tensor.hpp"

namespace csiam {

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr const char* kStepTensorName = "__step";

namespace ckpt_detail {

inline void write_entry(std::ofstream& out, const std::string& name, const Tensor<float>& t) {
  if (name.size() > 0xffff) throw std::invalid_argument("checkpoint name too long: " + name);
  if (t.rank() > 0xff) throw std::invalid_argument("checkpoint rank too large for " + name);
  const auto name_len = static_cast<uint16_t>(name.size());
  out.write(reinterpret_cast<const char*>(&name_len), 2);
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  const auto rank = static_cast<uint8_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), 1);
  for (int d : t.shape) {
    const auto dim = static_cast<uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&dim), 4);
  }
  out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
}

inline std::pair<std::string, Tensor<float>> read_entry(std::ifstream& in, const std::string& path) {
  uint16_t name_len = 0;
  in.read(reinterpret_cast<char*>(&name_len), 2);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  uint8_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 1);
  Shape shape(rank);
  for (int i = 0; i < rank; ++i) {
    uint32_t dim = 0;
    in.read(reinterpret_cast<char*>(&dim), 4);
    shape[static_cast<size_t>(i)] = static_cast<int>(dim);
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  Tensor<float> t(shape);
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);
  return {std::move(name), std::move(t)};
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const ParameterStore<float>& store, const Adam<float>& opt,
                            int64_t step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write("CSCK", 4);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), 4);

  uint32_t count = 1;  // __step
  for (const auto& p : store.all()) {
    ++count;
    if (opt.first_moments().count(p.name)) ++count;
    if (opt.second_moments().count(p.name)) ++count;
  }
  out.write(reinterpret_cast<const char*>(&count), 4);

  ckpt_detail::write_entry(out, kStepTensorName, Tensor<float>::scalar(static_cast<float>(step)));
  for (const auto& p : store.all()) {
    ckpt_detail::write_entry(out, p.name, p.value);
    auto m = opt.first_moments().find(p.name);
    if (m != opt.first_moments().end()) ckpt_detail::write_entry(out, p.name + ".m", m->second);
    auto v = opt.second_moments().find(p.name);
    if (v != opt.second_moments().end()) ckpt_detail::write_entry(out, p.name + ".v", v->second);
  }
  if (!out) throw std::runtime_error("short write to checkpoint: " + path);
}

// Loads into an existing store (shapes must match). Returns the stored step.
inline int64_t load_checkpoint(const std::string& path, ParameterStore<float>& store, Adam<float>& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  uint32_t version = 0, count = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || std::memcmp(magic, "CSCK", 4) != 0) throw std::runtime_error("not a CSCK checkpoint: " + path);
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version in " + path);

  int64_t step = 0;
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, tensor] = ckpt_detail::read_entry(in, path);
    if (name == kStepTensorName) {
      step = static_cast<int64_t>(tensor[0]);
    } else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".m") == 0 &&
               store.contains(name.substr(0, name.size() - 2))) {
      opt.first_moments()[name.substr(0, name.size() - 2)] = std::move(tensor);
    } else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".v") == 0 &&
               store.contains(name.substr(0, name.size() - 2))) {
      opt.second_moments()[name.substr(0, name.size() - 2)] = std::move(tensor);
    } else {
      Parameter<float>& p = store.get(name);
      if (p.value.shape != tensor.shape) {
        throw std::runtime_error("checkpoint shape mismatch for " + name + ": expected " + shape_str(p.value.shape) +
                                 ", found " + shape_str(tensor.shape));
      }
      p.value = std::move(tensor);
    }
  }
  return step;
}

}  // namespace csiam
