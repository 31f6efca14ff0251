#include "idkl/io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace idkl::io {
namespace {

constexpr std::array<char, 4> kMagic{'I', 'D', 'K', 'T'};
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

template <typename T>
void put(std::ostream& os, T v) {
    v = to_little(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw FormatError("truncated IDKT record");
    }
    return to_little(v);
}

std::string shape_field(const Shape& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "x" : "") + std::to_string(shape[i]);
    }
    return s.empty() ? "scalar" : s;
}

Shape parse_shape_field(const std::string& s) {
    Shape shape;
    if (s == "scalar") {
        return shape;
    }
    std::istringstream is(s);
    std::string part;
    while (std::getline(is, part, 'x')) {
        shape.push_back(std::stoul(part));
    }
    return shape;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    }
    for (double v : t.data()) {
        put<double>(os, v);
    }
    if (!os) {
        throw std::runtime_error("failed writing IDKT record");
    }
}

Tensor read_tensor(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
        throw FormatError("bad IDKT magic");
    }
    const auto rank = get<std::uint32_t>(is);
    if (rank > kMaxRank) {
        throw FormatError("IDKT rank " + std::to_string(rank) + " too large");
    }
    Shape shape(rank);
    for (auto& e : shape) {
        e = get<std::uint32_t>(is);
        if (e == 0) {
            throw FormatError("IDKT zero extent");
        }
    }
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) {
        v = get<double>(is);
    }
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return read_tensor(is);
}

std::filesystem::path bin_path(const std::filesystem::path& stem) {
    return std::filesystem::path(stem.string() + ".bin");
}

std::filesystem::path index_path(const std::filesystem::path& stem) {
    return std::filesystem::path(stem.string() + ".index.csv");
}

void save_named_tensors(const std::filesystem::path& stem, const std::vector<NamedTensor>& tensors) {
    std::ofstream bin(bin_path(stem), std::ios::binary);
    std::ofstream index(index_path(stem));
    if (!bin || !index) {
        throw std::runtime_error("cannot write checkpoint " + stem.string());
    }
    index << "name,offset,shape\n";
    for (const auto& nt : tensors) {
        index << nt.name << ',' << static_cast<std::uint64_t>(bin.tellp()) << ',' << shape_field(nt.value.shape())
              << '\n';
        write_tensor(bin, nt.value);
    }
}

std::vector<NamedTensor> load_named_tensors(const std::filesystem::path& stem) {
    std::ifstream bin(bin_path(stem), std::ios::binary);
    std::ifstream index(index_path(stem));
    if (!bin || !index) {
        throw std::runtime_error("cannot open checkpoint " + stem.string());
    }
    std::string line;
    if (!std::getline(index, line) || line != "name,offset,shape") {
        throw FormatError("bad checkpoint index header in " + index_path(stem).string());
    }
    std::vector<NamedTensor> out;
    while (std::getline(index, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string name, offset, shape;
        if (!std::getline(row, name, ',') || !std::getline(row, offset, ',') || !std::getline(row, shape)) {
            throw FormatError("malformed checkpoint index row: " + line);
        }
        bin.seekg(static_cast<std::streamoff>(std::stoull(offset)));
        Tensor t = read_tensor(bin);
        if (t.shape() != parse_shape_field(shape)) {
            throw FormatError("checkpoint entry " + name + " shape disagrees with its index");
        }
        out.push_back({name, std::move(t)});
    }
    return out;
}

}  // namespace idkl::io
