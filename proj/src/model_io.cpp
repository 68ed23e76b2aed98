#include "netsketch/model_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "netsketch/rng.hpp"

namespace netsketch {

namespace {

constexpr std::array<char, 5> kWeightsMagic = {'N', 'S', 'K', 'W', '\0'};
constexpr std::array<char, 5> kSketchMagic = {'N', 'S', 'K', 'T', '\0'};
constexpr std::uint16_t kFormatVersion = 1;

// ---------------------------------------------------------------------
// little-endian byte buffer helpers

struct Writer {
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(const void* data, std::size_t size) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + size);
    }
    void str(const std::string& s) {
        u32(std::uint32_t(s.size()));
        raw(s.data(), s.size());
    }
};

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t count) const {
        if (pos + count > bytes.size()) {
            throw parse_error("unexpected end of file");
        }
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= std::uint16_t(bytes[pos++]) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), len);
        pos += len;
        return s;
    }
};

// ---------------------------------------------------------------------
// CRC32 (IEEE, reflected polynomial 0xEDB88320)

constexpr std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
            c = c & 1 ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        }
        table[i] = c;
    }
    return table;
}

std::uint32_t crc32(std::span<const std::uint8_t> data) {
    static constexpr auto table = make_crc_table();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::uint8_t byte : data) {
        c = table[(c ^ byte) & 0xFF] ^ (c >> 8);
    }
    return c ^ 0xFFFFFFFFu;
}

// ---------------------------------------------------------------------
// file helpers

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw io_error("read failure on " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              std::streamsize(bytes.size()));
    if (!out) throw io_error("write failure on " + path.string());
}

void check_layer_spec(const LayerSpec& spec) {
    if (spec.n < 1 || spec.spatial_s < 1 || spec.shape.volume() < 1 ||
        spec.shape.c < 1 || spec.shape.w < 1 || spec.shape.h < 1) {
        throw parse_error("layer '" + spec.name + "' has degenerate dimensions");
    }
}

LayerSpec read_layer_spec(Reader& r) {
    LayerSpec spec;
    spec.name = r.str();
    spec.n = r.u32();
    spec.shape.c = r.u32();
    spec.shape.w = r.u32();
    spec.shape.h = r.u32();
    spec.spatial_s = r.u32();
    check_layer_spec(spec);
    return spec;
}

void write_layer_spec(Writer& w, const LayerSpec& spec) {
    w.str(spec.name);
    w.u32(spec.n);
    w.u32(spec.shape.c);
    w.u32(spec.shape.w);
    w.u32(spec.shape.h);
    w.u32(spec.spatial_s);
}

// ---------------------------------------------------------------------
// NSKW

std::vector<LayerWeights> parse_weights(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    r.pos = kWeightsMagic.size();  // magic already checked
    const std::uint16_t version = r.u16();
    if (version != kFormatVersion) {
        throw parse_error("unsupported NSKW version " + std::to_string(version));
    }
    const std::uint32_t layer_count = r.u32();
    std::vector<LayerWeights> layers;
    layers.reserve(layer_count);
    for (std::uint32_t li = 0; li < layer_count; ++li) {
        LayerWeights layer;
        layer.spec = read_layer_spec(r);
        const std::size_t t = layer.spec.t();
        for (std::uint32_t f = 0; f < layer.spec.n; ++f) {
            std::vector<double> values(t);
            for (std::size_t i = 0; i < t; ++i) values[i] = r.f64();
            RealTensor tensor(layer.spec.shape, std::move(values));
            if (!tensor.is_finite()) {
                throw data_error("non-finite value in layer '" + layer.spec.name +
                                 "' filter " + std::to_string(f));
            }
            layer.filters.push_back(std::move(tensor));
        }
        layers.push_back(std::move(layer));
    }
    if (r.pos != bytes.size()) throw parse_error("trailing bytes in NSKW file");
    return layers;
}

// ---------------------------------------------------------------------
// npy import (read-only)

std::vector<LayerWeights> parse_npy(std::span<const std::uint8_t> bytes,
                                    const std::filesystem::path& path) {
    Reader r{bytes};
    r.pos = 6;  // \x93NUMPY already checked
    const std::uint8_t major = r.u8();
    r.u8();  // minor
    std::size_t header_len = 0;
    if (major == 1) {
        header_len = r.u16();
    } else if (major == 2 || major == 3) {
        header_len = r.u32();
    } else {
        throw parse_error("unsupported npy version");
    }
    r.need(header_len);
    std::string header(reinterpret_cast<const char*>(bytes.data() + r.pos),
                       header_len);
    r.pos += header_len;

    auto dict_value = [&](const std::string& key) -> std::string {
        const std::size_t at = header.find("'" + key + "'");
        if (at == std::string::npos) {
            throw parse_error("npy header missing key '" + key + "'");
        }
        std::size_t colon = header.find(':', at);
        if (colon == std::string::npos) throw parse_error("malformed npy header");
        std::size_t start = colon + 1;
        while (start < header.size() && header[start] == ' ') ++start;
        std::size_t end;
        if (header[start] == '(') {
            end = header.find(')', start);
            if (end == std::string::npos) throw parse_error("malformed npy header");
            ++end;
        } else {
            end = header.find_first_of(",}", start);
            if (end == std::string::npos) throw parse_error("malformed npy header");
        }
        return header.substr(start, end - start);
    };

    const std::string descr = dict_value("descr");
    const bool f64 = descr.find("<f8") != std::string::npos;
    const bool f32 = descr.find("<f4") != std::string::npos;
    if (!f64 && !f32) {
        throw format_error("npy dtype must be little-endian f4 or f8, got " + descr);
    }
    if (dict_value("fortran_order").find("True") != std::string::npos) {
        throw format_error("fortran_order npy arrays are not supported");
    }

    std::vector<std::uint64_t> dims;
    {
        const std::string shape = dict_value("shape");
        std::uint64_t value = 0;
        bool in_number = false;
        for (char ch : shape) {
            if (ch >= '0' && ch <= '9') {
                value = value * 10 + std::uint64_t(ch - '0');
                in_number = true;
            } else if (in_number) {
                dims.push_back(value);
                value = 0;
                in_number = false;
            }
        }
        if (in_number) dims.push_back(value);
    }
    if (dims.size() != 4) {
        throw format_error("expected a 4-D weight array, got " +
                           std::to_string(dims.size()) + " dimensions");
    }
    for (std::uint64_t d : dims) {
        if (d < 1) throw format_error("npy shape has a zero dimension");
        if (d > 0xFFFFFFFFull) throw format_error("npy dimension out of range");
    }
    if (dims[1] * dims[2] * dims[3] > bytes.size() ||
        dims[0] > bytes.size()) {
        throw parse_error("npy payload size does not match header shape");
    }

    // Axis order (n, c, h, w); C-order rows land directly in the
    // channel-major filter linearization.
    LayerWeights layer;
    layer.spec.name = path.stem().string();
    layer.spec.n = std::uint32_t(dims[0]);
    layer.spec.shape = {std::uint32_t(dims[1]), std::uint32_t(dims[3]),
                        std::uint32_t(dims[2])};
    layer.spec.spatial_s = 1;
    const std::size_t t = layer.spec.t();

    const std::size_t value_count = std::size_t(dims[0]) * t;
    const std::size_t value_size = f64 ? 8 : 4;
    r.need(value_count * value_size);
    if (bytes.size() - r.pos != value_count * value_size) {
        throw parse_error("npy payload size does not match header shape");
    }
    for (std::uint32_t f = 0; f < layer.spec.n; ++f) {
        std::vector<double> values(t);
        for (std::size_t i = 0; i < t; ++i) {
            if (f64) {
                values[i] = r.f64();
            } else {
                float v;
                std::uint32_t raw = r.u32();
                std::memcpy(&v, &raw, 4);
                values[i] = double(v);
            }
        }
        RealTensor tensor(layer.spec.shape, std::move(values));
        if (!tensor.is_finite()) {
            throw data_error("non-finite value in npy filter " + std::to_string(f));
        }
        layer.filters.push_back(std::move(tensor));
    }
    return {std::move(layer)};
}

// ---------------------------------------------------------------------
// NSKT pieces

std::size_t pool_bytes_per_tensor(std::size_t t) { return (t + 7) / 8; }

std::uint32_t index_width_for_pool(std::uint32_t pool_size) {
    return pool_size <= 1 ? 0 : std::uint32_t(std::bit_width(pool_size - 1));
}

void append_packed_bits(Writer& w, const BinaryTensor& b) {
    const std::size_t t = b.size();
    std::uint8_t byte = 0;
    for (std::size_t i = 0; i < t; ++i) {
        if (b.bit(i)) byte |= std::uint8_t(1) << (i & 7);
        if ((i & 7) == 7) {
            w.u8(byte);
            byte = 0;
        }
    }
    if (t & 7) w.u8(byte);
}

BinaryTensor read_packed_bits(Reader& r, Shape shape) {
    const std::size_t t = shape.volume();
    const std::size_t nbytes = pool_bytes_per_tensor(t);
    r.need(nbytes);
    BinaryTensor b(shape);
    for (std::size_t i = 0; i < t; ++i) {
        if ((r.bytes[r.pos + (i >> 3)] >> (i & 7)) & 1) b.set_sign(i, +1);
    }
    for (std::size_t i = t; i < nbytes * 8; ++i) {
        if ((r.bytes[r.pos + (i >> 3)] >> (i & 7)) & 1) {
            throw parse_error("nonzero padding bits in tensor pool");
        }
    }
    r.pos += nbytes;
    return b;
}

struct IndexBitWriter {
    Writer& w;
    std::uint64_t acc = 0;
    std::uint32_t used = 0;

    void push(std::uint32_t value, std::uint32_t width) {
        acc |= std::uint64_t(value) << used;
        used += width;
        while (used >= 8) {
            w.u8(std::uint8_t(acc));
            acc >>= 8;
            used -= 8;
        }
    }
    void flush() {
        if (used > 0) {
            w.u8(std::uint8_t(acc));
            acc = 0;
            used = 0;
        }
    }
};

struct IndexBitReader {
    Reader& r;
    std::uint64_t acc = 0;
    std::uint32_t avail = 0;

    std::uint32_t pull(std::uint32_t width) {
        while (avail < width) {
            acc |= std::uint64_t(r.u8()) << avail;
            avail += 8;
        }
        const std::uint32_t value =
            std::uint32_t(acc & ((std::uint64_t(1) << width) - 1));
        acc >>= width;
        avail -= width;
        return value;
    }
    void align() {
        acc = 0;
        avail = 0;
    }
};

struct ParsedSketchFile {
    std::vector<LayerSketches> layers;
    SketchFileInfo info;
};

ParsedSketchFile parse_sketch(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kSketchMagic.size() + 4) {
        throw parse_error("file too short for NSKT");
    }
    const std::span payload = bytes.first(bytes.size() - 4);
    Reader trailer{bytes, bytes.size() - 4};
    if (trailer.u32() != crc32(payload)) {
        throw checksum_error("NSKT checksum mismatch");
    }

    Reader r{payload};
    r.pos = kSketchMagic.size();
    ParsedSketchFile out;
    out.info.version = r.u16();
    if (out.info.version != kFormatVersion) {
        throw parse_error("unsupported NSKT version " +
                          std::to_string(out.info.version));
    }
    out.info.storage.metadata_bits = (kSketchMagic.size() + 2 + 4 + 4) * 8;

    const std::uint32_t layer_count = r.u32();
    for (std::uint32_t li = 0; li < layer_count; ++li) {
        const std::size_t layer_start = r.pos;
        LayerSketches layer;
        SketchLayerInfo info;
        layer.spec = read_layer_spec(r);
        info.spec = layer.spec;
        const std::size_t t = layer.spec.t();

        layer.declared_m = r.u32();
        info.declared_m = layer.declared_m;
        const std::uint8_t method_tag = r.u8();
        if (method_tag > 1) throw parse_error("unknown sketch method tag");
        info.method = SketchMethod(method_tag);

        const std::uint32_t pool_size = r.u32();
        info.pool_size = pool_size;
        const std::uint32_t index_width = r.u8();
        if (index_width != index_width_for_pool(pool_size)) {
            throw parse_error("index bit width does not match pool size");
        }
        info.index_bit_width = index_width;

        std::vector<BinaryTensor> pool;
        pool.reserve(pool_size);
        for (std::uint32_t p = 0; p < pool_size; ++p) {
            pool.push_back(read_packed_bits(r, layer.spec.shape));
        }
        info.storage.pool_bits = std::uint64_t(pool_size) * t;
        const std::uint64_t pool_padding =
            std::uint64_t(pool_size) * (pool_bytes_per_tensor(t) * 8 - t);

        std::uint64_t index_bits = 0;
        std::uint64_t scale_bits = 0;
        for (std::uint32_t f = 0; f < layer.spec.n; ++f) {
            Sketch s;
            s.shape = layer.spec.shape;
            s.method = info.method;
            const std::uint32_t terms = r.u32();
            if (terms > layer.declared_m) {
                throw parse_error("filter carries more terms than declared");
            }
            const std::uint8_t stop_tag = r.u8();
            if (stop_tag > 2) throw parse_error("unknown stop reason tag");
            s.stop = StopReason(stop_tag);

            IndexBitReader indices{r};
            for (std::uint32_t k = 0; k < terms; ++k) {
                const std::uint32_t idx =
                    index_width == 0 ? 0 : indices.pull(index_width);
                if (idx >= pool_size) throw parse_error("pool index out of range");
                s.basis.push_back(pool[idx]);
            }
            index_bits += std::uint64_t(terms) * index_width;

            for (std::uint32_t k = 0; k < terms; ++k) {
                s.scales.push_back(r.f64());
                if (!std::isfinite(s.scales.back())) {
                    throw data_error("non-finite scale in layer '" +
                                     layer.spec.name + "'");
                }
            }
            scale_bits += std::uint64_t(terms) * 64;

            for (std::uint32_t k = 0; k <= terms; ++k) {
                s.residual_norms_sq.push_back(r.f64());
                if (!std::isfinite(s.residual_norms_sq.back())) {
                    throw data_error("non-finite residual history in layer '" +
                                     layer.spec.name + "'");
                }
            }
            layer.sketches.push_back(std::move(s));
        }

        info.storage.index_bits = index_bits;
        info.storage.scale_bits = scale_bits;
        const std::uint64_t layer_bits = std::uint64_t(r.pos - layer_start) * 8;
        info.storage.metadata_bits = layer_bits - info.storage.pool_bits -
                                     pool_padding - index_bits - scale_bits;
        info.storage.pool_bits += pool_padding;  // padding travels with the pool
        for (const Sketch& s : layer.sketches) info.total_terms += s.terms();

        out.info.storage.pool_bits += info.storage.pool_bits;
        out.info.storage.index_bits += info.storage.index_bits;
        out.info.storage.scale_bits += info.storage.scale_bits;
        out.info.storage.metadata_bits += info.storage.metadata_bits;
        out.info.layers.push_back(std::move(info));
        out.layers.push_back(std::move(layer));
    }
    if (r.pos != payload.size()) throw parse_error("trailing bytes in NSKT file");
    return out;
}

}  // namespace

std::vector<LayerWeights> load_weights(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.size() >= kWeightsMagic.size() &&
        std::memcmp(bytes.data(), kWeightsMagic.data(), kWeightsMagic.size()) == 0) {
        return parse_weights(bytes);
    }
    static constexpr std::array<std::uint8_t, 6> npy_magic = {0x93, 'N', 'U',
                                                              'M', 'P', 'Y'};
    if (bytes.size() >= npy_magic.size() &&
        std::memcmp(bytes.data(), npy_magic.data(), npy_magic.size()) == 0) {
        return parse_npy(bytes, path);
    }
    throw parse_error("unrecognized weight container: " + path.string());
}

void save_weights(const std::filesystem::path& path,
                  std::span<const LayerWeights> layers) {
    Writer w;
    w.raw(kWeightsMagic.data(), kWeightsMagic.size());
    w.u16(kFormatVersion);
    w.u32(std::uint32_t(layers.size()));
    for (const LayerWeights& layer : layers) {
        check_layer_spec(layer.spec);
        if (layer.filters.size() != layer.spec.n) {
            throw std::invalid_argument("filter count does not match layer spec");
        }
        write_layer_spec(w, layer.spec);
        for (const RealTensor& filter : layer.filters) {
            if (!(filter.shape() == layer.spec.shape)) {
                throw std::invalid_argument("filter shape does not match layer spec");
            }
            if (!filter.is_finite()) {
                throw data_error("refusing to write non-finite weights");
            }
            for (double v : filter.values()) w.f64(v);
        }
    }
    write_file(path, w.bytes);
}

StorageBreakdown save_sketch(const std::filesystem::path& path,
                             std::span<const LayerSketches> layers) {
    Writer w;
    w.raw(kSketchMagic.data(), kSketchMagic.size());
    w.u16(kFormatVersion);
    w.u32(std::uint32_t(layers.size()));

    for (const LayerSketches& layer : layers) {
        check_layer_spec(layer.spec);
        if (layer.sketches.size() != layer.spec.n) {
            throw std::invalid_argument("sketch count does not match layer spec");
        }
        write_layer_spec(w, layer.spec);
        w.u32(layer.declared_m);
        SketchMethod method = layer.sketches.empty() ? SketchMethod::direct
                                                     : layer.sketches[0].method;
        w.u8(std::uint8_t(method));

        // Deduplicate bit patterns across the whole layer, keeping first
        // occurrence order.
        std::map<std::vector<std::uint64_t>, std::uint32_t> seen;
        std::vector<const BinaryTensor*> pool;
        std::vector<std::vector<std::uint32_t>> filter_indices;
        for (const Sketch& s : layer.sketches) {
            if (!(s.shape == layer.spec.shape)) {
                throw std::invalid_argument("sketch shape does not match layer spec");
            }
            if (s.terms() > layer.declared_m) {
                throw std::invalid_argument("sketch carries more terms than declared");
            }
            std::vector<std::uint32_t> indices;
            for (const BinaryTensor& b : s.basis) {
                std::vector<std::uint64_t> key(b.words().begin(), b.words().end());
                auto [it, inserted] =
                    seen.emplace(std::move(key), std::uint32_t(pool.size()));
                if (inserted) pool.push_back(&b);
                indices.push_back(it->second);
            }
            filter_indices.push_back(std::move(indices));
        }

        const std::uint32_t pool_size = std::uint32_t(pool.size());
        const std::uint32_t index_width = index_width_for_pool(pool_size);
        w.u32(pool_size);
        w.u8(std::uint8_t(index_width));
        for (const BinaryTensor* b : pool) append_packed_bits(w, *b);

        for (std::uint32_t f = 0; f < layer.spec.n; ++f) {
            const Sketch& s = layer.sketches[f];
            w.u32(std::uint32_t(s.terms()));
            w.u8(std::uint8_t(s.stop));
            IndexBitWriter indices{w};
            if (index_width > 0) {
                for (std::uint32_t idx : filter_indices[f]) {
                    indices.push(idx, index_width);
                }
            }
            indices.flush();
            for (double a : s.scales) w.f64(a);
            if (s.residual_norms_sq.size() != s.terms() + 1) {
                throw std::invalid_argument("sketch residual history has wrong length");
            }
            for (double r : s.residual_norms_sq) w.f64(r);
        }
    }

    w.u32(crc32(w.bytes));
    write_file(path, w.bytes);
    return parse_sketch(w.bytes).info.storage;
}

std::vector<LayerSketches> load_sketch(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.size() < kSketchMagic.size() ||
        std::memcmp(bytes.data(), kSketchMagic.data(), kSketchMagic.size()) != 0) {
        throw parse_error("not an NSKT file: " + path.string());
    }
    return parse_sketch(bytes).layers;
}

SketchFileInfo inspect_sketch(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.size() < kSketchMagic.size() ||
        std::memcmp(bytes.data(), kSketchMagic.data(), kSketchMagic.size()) != 0) {
        throw parse_error("not an NSKT file: " + path.string());
    }
    return parse_sketch(bytes).info;
}

std::vector<RealTensor> generate_synthetic(Shape shape, std::uint32_t n,
                                           Distribution distribution,
                                           std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("filter count must be >= 1");
    if (shape.volume() < 1) throw std::invalid_argument("shape must be nonempty");
    std::mt19937_64 gen(seed);
    std::vector<RealTensor> filters;
    filters.reserve(n);
    for (std::uint32_t f = 0; f < n; ++f) {
        RealTensor tensor(shape);
        for (double& v : tensor.values()) {
            v = distribution == Distribution::gaussian
                    ? gaussian(gen)
                    : 2.0 * uniform_unit(gen) - 1.0;
        }
        filters.push_back(std::move(tensor));
    }
    return filters;
}

}  // namespace netsketch
