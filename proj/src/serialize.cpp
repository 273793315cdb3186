#include "dex/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "dex/errors.hpp"

namespace dex::io {

namespace {

void put_le(std::ostream& os, std::uint64_t v, int bytes) {
    char buf[8];
    for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, bytes);
}

std::uint64_t get_le(std::istream& is, int bytes) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), bytes)) throw InputError("unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

constexpr std::uint64_t kMaxRank = 16;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v, 4); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v, 8); }
void write_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v), 8); }

void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_u64(os, t.rank());
    for (auto e : t.shape()) write_u64(os, e);
    for (double v : t.data()) write_f64(os, v);
}

std::uint32_t read_u32(std::istream& is) { return static_cast<std::uint32_t>(get_le(is, 4)); }
std::uint64_t read_u64(std::istream& is) { return get_le(is, 8); }
double read_f64(std::istream& is) { return std::bit_cast<double>(get_le(is, 8)); }

std::string read_string(std::istream& is) {
    const auto n = read_u64(is);
    if (n > kMaxElements) throw InputError("string length out of range");
    std::string s(n, '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw InputError("unexpected end of file");
    return s;
}

Tensor read_tensor(std::istream& is) {
    const auto rank = read_u64(is);
    if (rank == 0 || rank > kMaxRank) throw InputError("tensor rank out of range");
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& e : shape) {
        e = read_u64(is);
        if (e == 0 || e > kMaxElements) throw InputError("tensor extent out of range");
        n *= e;
        if (n > kMaxElements) throw InputError("tensor too large");
    }
    std::vector<double> data(n);
    for (auto& v : data) v = read_f64(is);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace dex::io
