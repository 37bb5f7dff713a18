#pragma once

// Versioned binary checkpoint: config snapshot, normalization frame, RNG
// state and both parameter stores (values, Adam moments, step counters).
//
// Layout (little-endian):
//   "SIMSCKPT" u32 version  i32 completed_phase
//   str config_json  f64[8] frame  str rng_state
//   store<f32> intensity  store<f64> displacement
// where str = u64 length + bytes and
//   store<T> = i64 step, u64 count, count x (str name, i64 rows, i64 cols,
//              u8 frozen, T[rows*cols] value, m, v)

#include "config.hpp"
#include "networks.hpp"
#include "volume.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

namespace sims {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char checkpoint_magic[8] = {'S', 'I', 'M', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
    int completed_phase = 0;
    PipelineConfig config;
    NormalizationFrame frame;
    std::string rng_state;
    IntensityNet net;
    DisplacementNet reg;
};

namespace detail {

class BinWriter {
public:
    explicit BinWriter(const std::string& path) : os_(path, std::ios::binary | std::ios::trunc)
    {
        if (!os_)
            throw DataError("cannot open '" + path + "' for writing");
    }
    void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    template <class T>
    void pod(const T& v)
    {
        bytes(&v, sizeof(T));
    }
    void str(const std::string& s)
    {
        pod<std::uint64_t>(s.size());
        bytes(s.data(), s.size());
    }
    void finish(const std::string& path)
    {
        os_.flush();
        if (!os_)
            throw DataError("write failed for '" + path + "'");
    }

private:
    std::ofstream os_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : is_(path, std::ios::binary), path_(path)
    {
        if (!is_)
            throw DataError("cannot open checkpoint '" + path + "'");
    }
    void bytes(void* p, std::size_t n)
    {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n)
            throw DataError("checkpoint '" + path_ + "' is truncated");
    }
    template <class T>
    T pod()
    {
        T v;
        bytes(&v, sizeof(T));
        return v;
    }
    std::string str()
    {
        const auto n = pod<std::uint64_t>();
        if (n > (std::uint64_t{1} << 32))
            throw DataError("checkpoint '" + path_ + "' is corrupt (string length)");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    std::ifstream is_;
    std::string path_;
};

template <class T>
void write_store(BinWriter& w, const ParamStore<T>& store)
{
    w.pod<std::int64_t>(store.step);
    w.pod<std::uint64_t>(store.size());
    for (const auto& p : store) {
        w.str(p.name);
        w.pod<std::int64_t>(p.value.rows());
        w.pod<std::int64_t>(p.value.cols());
        w.pod<std::uint8_t>(p.frozen ? 1 : 0);
        const auto n = static_cast<std::size_t>(p.value.size()) * sizeof(T);
        w.bytes(p.value.data(), n);
        w.bytes(p.m.data(), n);
        w.bytes(p.v.data(), n);
    }
}

/// Reads into a store built from the same architecture; names and shapes
/// must match entry for entry.
template <class T>
void read_store(BinReader& r, ParamStore<T>& store, const char* what)
{
    store.step = r.pod<std::int64_t>();
    const auto count = r.pod<std::uint64_t>();
    if (count != store.size())
        throw ConfigError(std::string("checkpoint architecture mismatch: ") + what + " parameter count differs");
    for (auto& p : store) {
        const std::string name = r.str();
        const auto rows = r.pod<std::int64_t>();
        const auto cols = r.pod<std::int64_t>();
        if (name != p.name || rows != p.value.rows() || cols != p.value.cols())
            throw ConfigError(std::string("checkpoint architecture mismatch: ") + what + " parameter '" + name + "'");
        p.frozen = r.pod<std::uint8_t>() != 0;
        const auto n = static_cast<std::size_t>(p.value.size()) * sizeof(T);
        r.bytes(p.value.data(), n);
        r.bytes(p.m.data(), n);
        r.bytes(p.v.data(), n);
    }
}

} // namespace detail

/// True when two configs describe the same network architectures.
inline bool same_architecture(const PipelineConfig& a, const PipelineConfig& b)
{
    return a.intensity == b.intensity && a.displacement == b.displacement;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c)
{
    detail::BinWriter w(path);
    w.bytes(checkpoint_magic, sizeof checkpoint_magic);
    w.pod<std::uint32_t>(checkpoint_version);
    w.pod<std::int32_t>(c.completed_phase);
    w.str(json(c.config).dump());
    for (int d = 0; d < 3; ++d)
        w.pod<double>(c.frame.box_min[d]);
    for (int d = 0; d < 3; ++d)
        w.pod<double>(c.frame.box_max[d]);
    w.pod<double>(c.frame.lo);
    w.pod<double>(c.frame.hi);
    w.str(c.rng_state);
    detail::write_store(w, c.net.params());
    detail::write_store(w, c.reg.params());
    w.finish(path);
}

inline Checkpoint load_checkpoint(const std::string& path)
{
    detail::BinReader r(path);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, checkpoint_magic, sizeof magic) != 0)
        throw DataError("'" + path + "' is not a checkpoint");
    const auto version = r.pod<std::uint32_t>();
    if (version != checkpoint_version)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.completed_phase = r.pod<std::int32_t>();
    try {
        c.config = json::parse(r.str()).get<PipelineConfig>();
    }
    catch (const json::exception& e) {
        throw DataError(std::string("checkpoint config is unreadable: ") + e.what());
    }
    for (int d = 0; d < 3; ++d)
        c.frame.box_min[d] = r.pod<double>();
    for (int d = 0; d < 3; ++d)
        c.frame.box_max[d] = r.pod<double>();
    c.frame.lo = r.pod<double>();
    c.frame.hi = r.pod<double>();
    c.rng_state = r.str();
    c.net = IntensityNet(c.config.intensity, c.config.seed);
    c.reg = DisplacementNet(c.config.displacement, c.config.seed);
    detail::read_store(r, c.net.params(), "intensity");
    detail::read_store(r, c.reg.params(), "displacement");
    return c;
}

} // namespace sims
