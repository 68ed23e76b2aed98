#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "netsketch/tensor.hpp"

namespace netsketch {

/// Base class for everything that can go wrong reading or writing files.
class io_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated container, bad magic, unsupported version.
class parse_error : public io_error {
    using io_error::io_error;
};

/// Structurally valid container with an unsupported dtype or shape.
class format_error : public io_error {
    using io_error::io_error;
};

/// Payload carries NaN or infinite values.
class data_error : public io_error {
    using io_error::io_error;
};

/// Stored checksum does not match the payload.
class checksum_error : public io_error {
    using io_error::io_error;
};

/// One layer's identity for files and reports.
struct LayerSpec {
    std::string name;
    std::uint32_t n = 0;        // filter count
    Shape shape;                // per-filter kernel shape
    std::uint32_t spatial_s = 1;  // output positions, for accounting

    [[nodiscard]] std::size_t t() const { return shape.volume(); }
};

struct LayerWeights {
    LayerSpec spec;
    std::vector<RealTensor> filters;  // spec.n tensors of spec.shape
};

struct LayerSketches {
    LayerSpec spec;
    std::uint32_t declared_m = 0;  // requested terms per filter
    std::vector<Sketch> sketches;  // spec.n entries
};

/// Bit-level composition of a sketch file, itemized so the pool
/// deduplication saving stays measurable.
struct StorageBreakdown {
    std::uint64_t pool_bits = 0;
    std::uint64_t index_bits = 0;
    std::uint64_t scale_bits = 0;
    std::uint64_t metadata_bits = 0;  // magic, headers, counts, residual history, checksum

    [[nodiscard]] std::uint64_t total_bits() const {
        return pool_bits + index_bits + scale_bits + metadata_bits;
    }
};

struct SketchLayerInfo {
    LayerSpec spec;
    std::uint32_t declared_m = 0;
    SketchMethod method = SketchMethod::direct;
    std::uint32_t pool_size = 0;
    std::uint64_t total_terms = 0;
    std::uint32_t index_bit_width = 0;
    StorageBreakdown storage;
};

struct SketchFileInfo {
    std::uint16_t version = 0;
    std::vector<SketchLayerInfo> layers;
    StorageBreakdown storage;  // whole file
};

/// Load a weight container. Accepts the native "NSKW" format and the
/// standard versioned array format (little-endian 4-D float arrays,
/// C order) detected by magic bytes. Rejects non-finite values.
[[nodiscard]] std::vector<LayerWeights> load_weights(const std::filesystem::path& path);

/// Write layers in the native NSKW format.
void save_weights(const std::filesystem::path& path,
                  std::span<const LayerWeights> layers);

/// Write sketched layers in the NSKT format: per layer a deduplicated pool
/// of distinct bit patterns, per-filter index lists at the minimal fixed
/// width, scale vectors, residual history, and a CRC32 trailer.
StorageBreakdown save_sketch(const std::filesystem::path& path,
                             std::span<const LayerSketches> layers);

/// Load an NSKT file. The checksum is validated before any parsing.
[[nodiscard]] std::vector<LayerSketches> load_sketch(const std::filesystem::path& path);

/// Parse an NSKT file for reporting without materializing the sketches.
[[nodiscard]] SketchFileInfo inspect_sketch(const std::filesystem::path& path);

enum class Distribution : std::uint8_t { gaussian = 0, uniform = 1 };

/// n deterministic random filters; gaussian is standard normal per entry,
/// uniform is flat on [-1, 1).
[[nodiscard]] std::vector<RealTensor> generate_synthetic(Shape shape, std::uint32_t n,
                                                         Distribution distribution,
                                                         std::uint64_t seed);

}  // namespace netsketch
