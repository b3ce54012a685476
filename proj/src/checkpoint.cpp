#include "tsl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace tsl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open checkpoint for writing: " + path);
  out << "TSL-CHECKPOINT 1\n" << store.size() << "\n";
  std::uint64_t offset = 0;
  for (const auto& [name, t] : store.map()) {
    out << name << " f32 " << t.dims.n << " " << t.dims.h << " " << t.dims.w << " "
        << t.dims.c << " " << offset << "\n";
    offset += t.data.size() * sizeof(float);
  }
  out << "DATA\n";
  for (const auto& [name, t] : store.map())
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  check(out.good(), "checkpoint write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  check(magic == "TSL-CHECKPOINT" && version == 1,
        "not a checkpoint file: " + path);
  std::size_t count = 0;
  in >> count;
  struct Entry {
    std::string name;
    Shape dims;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    std::string dtype;
    in >> e.name >> dtype >> e.dims.n >> e.dims.h >> e.dims.w >> e.dims.c >> e.offset;
    check(dtype == "f32", "unsupported dtype '" + dtype + "' in " + path);
  }
  std::string marker;
  in >> marker;
  check(marker == "DATA", "malformed checkpoint header: " + path);
  in.get();  // newline before payload
  std::streampos payload = in.tellg();
  ParamStore store;
  for (const auto& e : entries) {
    Tensor t(e.dims);
    in.seekg(payload + static_cast<std::streamoff>(e.offset));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    check(in.good(), "truncated checkpoint payload: " + path);
    store.add(e.name, std::move(t));
  }
  return store;
}

}  // namespace tsl
