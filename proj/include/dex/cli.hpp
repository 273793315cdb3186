#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dex/pipeline.hpp"

namespace dex::cli {

/// `dex corpus|train|synth|sweep|ablate`. Returns 0 on success, 2 for usage
/// and input errors, 3 for numeric failures.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Worker cap from DEX_THREADS (defaults to the hardware concurrency).
std::size_t worker_threads();

/// synthesis seconds / (frames * hop / sample_rate)
double real_time_factor(double synth_seconds, std::size_t frames, std::size_t hop, double sample_rate);
double mean_squared_error(const Tensor& a, const Tensor& b);

struct SweepRow {
    std::size_t nfe = 0;
    std::size_t repeat = 0;
    double mse = 0.0;
    double synth_seconds = 0.0;
    std::size_t frames = 0;
    std::size_t hop = 0;
    double sample_rate = 0.0;
    double rtf = 0.0;
};

/// Times full synthesis of `target` (its own reference, its MAS durations) at each NFE.
std::vector<SweepRow> run_sweep(const pipeline::Model& model, const pipeline::Utterance& target,
                                const std::vector<std::size_t>& nfes, std::size_t repeat, std::uint64_t seed);
std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& row);

struct AblationOptions {
    std::vector<decoder::EmbedKind> kinds{decoder::EmbedKind::sin_cos, decoder::EmbedKind::time_freq,
                                          decoder::EmbedKind::pos_freq, decoder::EmbedKind::conv_freq};
    std::size_t epochs = 20;
    std::size_t nfe = 10;
    bool overlap_ablation = true;  // also run conv-freq with non-overlapping patches
    std::size_t threads = 1;
};

struct AblationRow {
    decoder::EmbedKind kind = decoder::EmbedKind::conv_freq;
    bool overlap = true;
    std::size_t patch_kernel = 0;
    double final_loss = 0.0;
    double sample_mse = 0.0;
    std::size_t long_frames = 0;  // longer than the trained extent
    std::string long_result;      // "ok" or "extent error"
};

std::vector<AblationRow> run_ablation(const pipeline::ModelConfig& base, const pipeline::ToyCorpus& corpus,
                                      const AblationOptions& options);
std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& row);

/// One CSV row per mel bin, one column per frame, shortest round-trip numbers.
void write_matrix_csv(std::ostream& os, const Tensor& m);
Tensor read_matrix_csv(std::istream& is);
/// Binary PGM, row = mel bin, column = frame, min/max normalized.
void write_pgm(std::ostream& os, const Tensor& m);

}  // namespace dex::cli
