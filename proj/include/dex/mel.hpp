#pragma once

#include <cstddef>

#include "dex/tensor.hpp"

namespace dex {

/// F x T mel-spectrogram with the framing metadata needed for RTF.
struct MelSpec {
    Tensor values;  // [F x T]
    double sample_rate = 22050.0;
    std::size_t hop = 256;

    std::size_t bins() const { return values.dim(0); }
    std::size_t frames() const { return values.dim(1); }
    double seconds() const { return static_cast<double>(frames() * hop) / sample_rate; }
};

}  // namespace dex
