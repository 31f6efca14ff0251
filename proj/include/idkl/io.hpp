#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "idkl/tensor.hpp"

// "IDKT" tensor records: 4 magic bytes, u32 rank, rank x u32 extents, then
// the row-major values as IEEE-754 doubles. Everything little-endian.
namespace idkl::io {

class FormatError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

struct NamedTensor {
    std::string name;
    Tensor value;
};

// A checkpoint is `<stem>.bin` holding concatenated IDKT records plus
// `<stem>.index.csv` with header `name,offset,shape` (offset in bytes into
// the .bin, shape as e.g. 8x3x3x3).
void save_named_tensors(const std::filesystem::path& stem, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_named_tensors(const std::filesystem::path& stem);

std::filesystem::path bin_path(const std::filesystem::path& stem);
std::filesystem::path index_path(const std::filesystem::path& stem);

}  // namespace idkl::io
