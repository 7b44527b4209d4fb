#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mrg/errors.hpp"
#include "mrg/model.hpp"
#include "mrg/tensor.hpp"

namespace mrg {

// Named-array checkpoint, version-tagged. Layout:
//   line:   MRGCKPT 1 <count>
//   per entry: line "<name> <rows> <cols>" followed by rows*cols
//   little-endian float64 values, then a newline.
inline constexpr const char* kCheckpointMagic = "MRGCKPT";

template <typename S>
void save_checkpoint(const std::string& path, const NamedParams<S>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << kCheckpointMagic << " 1 " << params.size() << "\n";
  for (const auto& [name, p] : params.items) {
    out << name << " " << p.rows() << " " << p.cols() << "\n";
    for (Index r = 0; r < p.rows(); ++r)
      for (Index c = 0; c < p.cols(); ++c) {
        const double v = double(p.value()(r, c));
        out.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
    out << "\n";
  }
  if (!out) throw IoError("short write while saving checkpoint: " + path);
}

inline std::map<std::string, MatrixOf<double>> load_checkpoint_arrays(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  in >> magic >> version >> count;
  if (magic != kCheckpointMagic || version != 1)
    throw IoError("not a version-1 checkpoint: " + path);
  in.ignore(1);  // newline
  std::map<std::string, MatrixOf<double>> arrays;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    Index rows = 0, cols = 0;
    in >> name >> rows >> cols;
    in.ignore(1);
    MatrixOf<double> m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(double));
        m(r, c) = v;
      }
    in.ignore(1);
    if (!in) throw IoError("truncated checkpoint: " + path);
    arrays.emplace(std::move(name), std::move(m));
  }
  return arrays;
}

template <typename S>
void load_checkpoint(const std::string& path, NamedParams<S>& params) {
  const auto arrays = load_checkpoint_arrays(path);
  for (auto& [name, p] : params.items) {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw IoError("checkpoint " + path + " is missing '" + name + "'");
    if (it->second.rows() != p.rows() || it->second.cols() != p.cols())
      throw IoError("checkpoint shape mismatch for '" + name + "'");
    p.value() = it->second.template cast<S>();
  }
}

}  // namespace mrg
