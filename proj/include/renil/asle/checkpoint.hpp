#pragma once

// Checkpoint container, all integers little-endian:
//
//   char[8]  magic "RNLCKPT\0"
//   u32      format version (1)
//   u32      bytes per scalar (4 = float32, 8 = float64)
//   u64      training step counter
//   u32      config JSON length, then that many UTF-8 bytes
//   u32      parameter count
//   per parameter:
//     u32 name length, name bytes
//     u32 ndim, ndim x u64 dims
//     prod(dims) scalars, row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "renil/asle/config.hpp"
#include "renil/asle/model.hpp"
#include "renil/errors.hpp"

namespace renil::asle {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'R', 'N', 'L', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw SchemaError("checkpoint truncated");
  return v;
}

inline std::string get_string(std::istream& is, std::uint32_t n) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), n)) throw SchemaError("checkpoint truncated");
  return s;
}

}  // namespace detail

template <class T>
void write_checkpoint(std::ostream& os, AsleModel<T>& model) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  os.write(kCheckpointMagic, 8);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, sizeof(T));
  detail::put<std::uint64_t>(os, model.step);
  const std::string cfg = nlohmann::json(model.config()).dump();
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto params = model.parameters();
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter<T>* p : params) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p->shape.size()));
    for (std::size_t d : p->shape) detail::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->size() * sizeof(T)));
  }
  if (!os) throw IoError("failed writing checkpoint");
}

template <class T>
void save_checkpoint(const std::string& path, AsleModel<T>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(os, model);
}

// Reads any scalar width and converts to T.
template <class T>
AsleModel<T> read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw SchemaError("not a checkpoint (bad magic)");
  }
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw SchemaError("unsupported checkpoint version " + std::to_string(version));
  const auto width = detail::get<std::uint32_t>(is);
  if (width != 4 && width != 8) throw SchemaError("unsupported scalar width " + std::to_string(width));
  const auto step = detail::get<std::uint64_t>(is);
  const std::string cfg_text = detail::get_string(is, detail::get<std::uint32_t>(is));
  AsleConfig cfg;
  try {
    cfg = nlohmann::json::parse(cfg_text).get<AsleConfig>();
  } catch (const std::exception& e) {
    throw SchemaError(std::string("checkpoint config: ") + e.what());
  }
  AsleModel<T> model(cfg, 0);
  model.step = step;
  const auto params = model.parameters();
  const auto n = detail::get<std::uint32_t>(is);
  if (n != params.size()) throw SchemaError("checkpoint parameter count does not match its config");
  for (Parameter<T>* p : params) {
    const std::string name = detail::get_string(is, detail::get<std::uint32_t>(is));
    if (name != p->name) throw SchemaError("checkpoint parameter '" + name + "', expected '" + p->name + "'");
    const auto ndim = detail::get<std::uint32_t>(is);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get<std::uint64_t>(is));
    if (shape != p->shape) throw SchemaError("checkpoint shape mismatch for " + name);
    for (T& v : p->value) v = width == 4 ? static_cast<T>(detail::get<float>(is)) : static_cast<T>(detail::get<double>(is));
  }
  if (!model.parameters_finite()) throw SchemaError("checkpoint contains non-finite parameters");
  return model;
}

template <class T>
AsleModel<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  return read_checkpoint<T>(is);
}

}  // namespace renil::asle
