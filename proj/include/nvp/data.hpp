#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nvp/tensor.hpp"

namespace nvp {

enum class WaveKind { plane, spiral, pulse };

inline const char* to_string(WaveKind k) {
    switch (k) {
        case WaveKind::plane: return "plane";
        case WaveKind::spiral: return "spiral";
        case WaveKind::pulse: return "pulse";
    }
    return "?";
}

inline WaveKind wave_kind_from(const std::string& s) {
    if (s == "plane") return WaveKind::plane;
    if (s == "spiral") return WaveKind::spiral;
    if (s == "pulse") return WaveKind::pulse;
    throw DataError("unknown wave kind: " + s);
}

// Synthetic traveling-wave sequences on an electrode-like grid. The frame
// rate is informational only; speed is in pixels/frame.
struct WaveParams {
    std::int64_t height = 18, width = 20;
    double frame_rate_hz = 277.78;
    WaveKind kind = WaveKind::plane;
    double speed = 0.5;       // pixels/frame, > 0
    double direction = 0.0;   // radians
    double wavelength = 8.0;  // pixels
    double amplitude = 1.0;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (height < 1 || width < 1) throw DataError("wave params: grid extents must be positive");
        if (speed <= 0.0) throw DataError("wave params: speed must be > 0");
        if (wavelength <= 0.0) throw DataError("wave params: wavelength must be > 0");
        if (amplitude < 0.0 || amplitude > 1.0)
            throw DataError("wave params: amplitude must be in [0, 1]");
        if (noise_sigma < 0.0) throw DataError("wave params: noise sigma must be >= 0");
    }
};

// Frames [T, H, W] in [-1, 1]. plane: sinusoid advancing along `direction`;
// spiral: rotating arms from the grid centre; pulse: Gaussian bump
// translating with wraparound (sigma = wavelength / 2).
template <typename T = float>
TensorT<T> generate_waves(const WaveParams& params, std::int64_t total_frames) {
    params.validate();
    if (total_frames < 1) throw DataError("generate_waves: total_frames must be >= 1");

    const double two_pi = 2.0 * 3.14159265358979323846;
    Rng rng(params.seed);
    std::vector<T> data(static_cast<std::size_t>(total_frames * params.height * params.width));

    const double cx = (params.width - 1) / 2.0;
    const double cy = (params.height - 1) / 2.0;
    std::size_t idx = 0;
    for (std::int64_t tau = 0; tau < total_frames; ++tau) {
        const double shift = params.speed * static_cast<double>(tau);
        for (std::int64_t y = 0; y < params.height; ++y)
            for (std::int64_t x = 0; x < params.width; ++x) {
                double v = 0.0;
                switch (params.kind) {
                    case WaveKind::plane: {
                        const double u = x * std::cos(params.direction) +
                                         y * std::sin(params.direction) - shift;
                        v = params.amplitude * std::sin(two_pi * u / params.wavelength);
                        break;
                    }
                    case WaveKind::spiral: {
                        const double dx = x - cx, dy = y - cy;
                        const double r = std::sqrt(dx * dx + dy * dy);
                        v = params.amplitude *
                            std::sin(std::atan2(dy, dx) + two_pi * (r - shift) / params.wavelength);
                        break;
                    }
                    case WaveKind::pulse: {
                        const double px = std::fmod(
                            cx + shift * std::cos(params.direction), double(params.width));
                        const double py = std::fmod(
                            cy + shift * std::sin(params.direction), double(params.height));
                        auto wrap = [](double d, double extent) {
                            d = std::abs(d);
                            return std::min(d, extent - d);
                        };
                        const double dx = wrap(x - (px < 0 ? px + params.width : px),
                                               double(params.width));
                        const double dy = wrap(y - (py < 0 ? py + params.height : py),
                                               double(params.height));
                        const double sigma = params.wavelength / 2.0;
                        v = params.amplitude *
                            std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                        break;
                    }
                }
                if (params.noise_sigma > 0.0) v += params.noise_sigma * rng.normal();
                data[idx++] = static_cast<T>(std::clamp(v, -1.0, 1.0));
            }
    }
    return TensorT<T>::from({total_frames, params.height, params.width}, std::move(data));
}

// Affine map of [lo, hi] onto [-1, 1]; kept so evaluation can invert it.
struct NormScale {
    double lo = -1.0, hi = 1.0;
};

template <typename T>
TensorT<T> normalize_minmax_symmetric(const TensorT<T>& frames, NormScale* scale_out) {
    const auto& d = frames.data();
    if (d.empty()) throw DataError("normalize: empty input");
    double lo = d[0], hi = d[0];
    for (T v : d) {
        lo = std::min<double>(lo, v);
        hi = std::max<double>(hi, v);
    }
    if (hi - lo < 1e-12) throw DataError("normalize: constant input has no range");
    std::vector<T> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        out[i] = static_cast<T>(2.0 * (d[i] - lo) / (hi - lo) - 1.0);
    if (scale_out) *scale_out = {lo, hi};
    return TensorT<T>::from(frames.shape(), std::move(out));
}

template <typename T>
TensorT<T> apply_norm_scale(const TensorT<T>& frames, const NormScale& scale) {
    if (scale.hi - scale.lo < 1e-12) throw DataError("normalize: degenerate scale");
    std::vector<T> out(frames.data().size());
    const auto& d = frames.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        out[i] = static_cast<T>(2.0 * (d[i] - scale.lo) / (scale.hi - scale.lo) - 1.0);
    return TensorT<T>::from(frames.shape(), std::move(out));
}

template <typename T>
TensorT<T> denormalize(const TensorT<T>& frames, const NormScale& scale) {
    std::vector<T> out(frames.data().size());
    const auto& d = frames.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        out[i] = static_cast<T>((d[i] + 1.0) / 2.0 * (scale.hi - scale.lo) + scale.lo);
    return TensorT<T>::from(frames.shape(), std::move(out));
}

// [B, 1, t+n, H, W] block of consecutive frames; the first `split` time steps
// are observations.
template <typename T>
struct SequenceBatch {
    TensorT<T> block;
    std::int64_t split = 0;

    std::int64_t batch() const { return block.extent(0); }
    std::int64_t horizon() const { return block.extent(2) - split; }
};

// Window start offsets within [range_lo, range_hi) at the given stride;
// windows never cross the range boundary.
inline std::vector<std::int64_t> window_starts(std::int64_t range_lo, std::int64_t range_hi,
                                               std::int64_t window_len, std::int64_t stride) {
    if (stride < 1) throw DataError("window: stride must be >= 1");
    if (range_hi - range_lo < window_len)
        throw DataError("window: range of " + std::to_string(range_hi - range_lo) +
                        " frames is shorter than the " + std::to_string(window_len) +
                        "-frame window");
    std::vector<std::int64_t> starts;
    for (std::int64_t s = range_lo; s + window_len <= range_hi; s += stride) starts.push_back(s);
    return starts;
}

// Cuts one [B,1,t+n,H,W] batch out of a [T,H,W] frame tensor.
template <typename T>
SequenceBatch<T> make_batch(const TensorT<T>& frames, const std::vector<std::int64_t>& starts,
                            std::int64_t t, std::int64_t n) {
    if (frames.rank() != 3) throw DataError("make_batch: frames must be [T,H,W]");
    if (starts.empty()) throw DataError("make_batch: no windows");
    const std::int64_t len = t + n;
    const std::int64_t h = frames.extent(1), w = frames.extent(2);
    const std::int64_t hw = h * w;
    std::vector<T> out(static_cast<std::size_t>(starts.size() * len * hw));
    for (std::size_t b = 0; b < starts.size(); ++b) {
        const std::int64_t s = starts[b];
        if (s < 0 || s + len > frames.extent(0)) throw DataError("make_batch: window out of range");
        std::copy_n(frames.data().begin() + s * hw, len * hw, out.begin() + b * len * hw);
    }
    return {TensorT<T>::from({static_cast<std::int64_t>(starts.size()), 1, len, h, w},
                             std::move(out)),
            t};
}

// Splits a [B,1,L,H,W] block into L constant frames of shape [B,1,H,W].
template <typename T>
std::vector<TensorT<T>> split_frames(const SequenceBatch<T>& batch) {
    const auto& s = batch.block.shape();
    const std::int64_t b_count = s[0], len = s[2], hw = s[3] * s[4];
    std::vector<TensorT<T>> frames;
    frames.reserve(static_cast<std::size_t>(len));
    const auto& src = batch.block.data();
    for (std::int64_t i = 0; i < len; ++i) {
        std::vector<T> f(static_cast<std::size_t>(b_count * hw));
        for (std::int64_t b = 0; b < b_count; ++b)
            std::copy_n(src.begin() + (b * len + i) * hw, hw, f.begin() + b * hw);
        frames.push_back(TensorT<T>::from({b_count, 1, s[3], s[4]}, std::move(f)));
    }
    return frames;
}

// ---------------------------------------------------------------------------
// NVT1 tensor file: magic "NVT1", u32 rank, u32 extents, little-endian f32
// payload, row-major.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("tensor file: truncated header");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline std::uint32_t float_bits(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    return u;
}

inline float bits_float(std::uint32_t u) {
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace detail

template <typename T>
void write_tensor_file(const std::string& path, const TensorT<T>& tensor) {
    if (tensor.rank() > 8) throw DataError("tensor file: rank > 8 unsupported");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("tensor file: cannot open for writing: " + path);
    os.write("NVT1", 4);
    detail::write_u32(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d = 0; d < tensor.rank(); ++d)
        detail::write_u32(os, static_cast<std::uint32_t>(tensor.extent(d)));
    for (T v : tensor.data()) detail::write_u32(os, detail::float_bits(static_cast<float>(v)));
    if (!os) throw DataError("tensor file: write failed: " + path);
}

template <typename T = float>
TensorT<T> read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("tensor file: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "NVT1", 4) != 0)
        throw DataError("tensor file: bad magic in " + path);
    const std::uint32_t rank = detail::read_u32(is);
    if (rank > 8) throw DataError("tensor file: rank " + std::to_string(rank) + " > 8");
    Shape shape(rank);
    std::int64_t count = 1;
    for (auto& e : shape) {
        e = detail::read_u32(is);
        count *= e;
    }
    std::vector<T> data(static_cast<std::size_t>(count));
    for (auto& v : data) {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        if (!is) throw DataError("tensor file: truncated payload in " + path);
        v = static_cast<T>(detail::bits_float(std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                                              (std::uint32_t(b[2]) << 16) |
                                              (std::uint32_t(b[3]) << 24)));
    }
    return TensorT<T>::from(std::move(shape), std::move(data));
}

}  // namespace nvp
