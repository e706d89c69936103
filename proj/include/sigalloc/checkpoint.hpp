#pragma once

// Parameter checkpoints: a plain-text header followed by raw little-endian
// float64 data.
//
//   sigalloc-checkpoint 1
//   tensors <count>
//   <name> <rank> <dim_0> ... <dim_{rank-1}> <byte offset into data>
//   ...
//   data <total bytes>
//   <binary payload, exactly total bytes>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sigalloc/error.hpp"
#include "sigalloc/model.hpp"

namespace sigalloc {

inline constexpr const char* kCheckpointMagic = "sigalloc-checkpoint 1";

inline void write_checkpoint(std::ostream& out, const SitParameters& params) {
  out << kCheckpointMagic << "\n";
  out << "tensors " << params.size() << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : params.entries()) {
    out << name << " " << t.rank();
    for (std::size_t d : t.shape()) out << " " << d;
    out << " " << offset << "\n";
    offset += t.numel() * 8;
  }
  out << "data " << offset << "\n";
  for (const auto& [name, t] : params.entries())
    for (double v : t.value()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
      out.write(bytes, 8);
    }
}

inline void save_checkpoint(const std::string& path, const SitParameters& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  write_checkpoint(out, params);
  if (!out) fail(ErrorCode::IoError, "write to " + path + " failed");
}

inline SitParameters read_checkpoint(std::istream& in) {
  auto bad = [](const std::string& msg) -> void { fail(ErrorCode::FormatError, "checkpoint: " + msg); };
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) bad("missing header");
  std::size_t count = 0;
  {
    std::getline(in, line);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key >> count) || key != "tensors") bad("expected 'tensors <n>'");
  }
  struct Entry {
    std::string name;
    ad::Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) bad("truncated tensor table");
    std::istringstream ls(line);
    Entry e;
    std::size_t rank = 0;
    if (!(ls >> e.name >> rank)) bad("malformed tensor line: " + line);
    e.shape.resize(rank);
    for (auto& d : e.shape)
      if (!(ls >> d)) bad("malformed shape: " + line);
    if (!(ls >> e.offset)) bad("missing offset: " + line);
    entries.push_back(std::move(e));
  }
  std::size_t total = 0;
  {
    std::getline(in, line);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key >> total) || key != "data") bad("expected 'data <bytes>'");
  }
  std::vector<char> blob(total);
  in.read(blob.data(), static_cast<std::streamsize>(total));
  if (static_cast<std::size_t>(in.gcount()) != total) bad("truncated payload");
  SitParameters params;
  for (const auto& e : entries) {
    const std::size_t n = ad::numel(e.shape);
    if (e.offset + n * 8 > total) bad("tensor " + e.name + " runs past payload");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[e.offset + i * 8 + b])) << (8 * b);
      v[i] = std::bit_cast<double>(bits);
    }
    params.add(e.name, ad::Tensor::parameter(e.shape, std::move(v)));
  }
  return params;
}

inline SitParameters load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  return read_checkpoint(in);
}

/// Throws InvalidConfig unless `params` has exactly the tensors, in order and
/// shape, that `cfg` would initialise.
inline void check_compatible(const SitParameters& params, const SitConfig& cfg) {
  const SitParameters ref = init_parameters(cfg, 0);
  if (ref.size() != params.size())
    fail(ErrorCode::InvalidConfig, "checkpoint has " + std::to_string(params.size()) + " tensors, configuration expects " +
                                       std::to_string(ref.size()));
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto& [name, t] = params.entries()[i];
    const auto& [ref_name, ref_t] = ref.entries()[i];
    if (name != ref_name || t.shape() != ref_t.shape())
      fail(ErrorCode::InvalidConfig, "checkpoint tensor " + name + " does not match configuration tensor " + ref_name);
  }
}

}  // namespace sigalloc
