#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "dex/tensor.hpp"

/// Little-endian binary primitives. A tensor blob is rank (u64), extents
/// (u64 each), then raw IEEE-754 doubles.
namespace dex::io {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);
void write_tensor(std::ostream& os, const Tensor& t);

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);
Tensor read_tensor(std::istream& is);

}  // namespace dex::io
