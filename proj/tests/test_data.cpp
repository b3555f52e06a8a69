#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nvp/data.hpp"

using nvp::Tensor;
using nvp::WaveKind;
using nvp::WaveParams;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Waves, PlaneWaveIsPeriodic) {
    WaveParams p;
    p.kind = WaveKind::plane;
    p.speed = 0.5;
    p.wavelength = 8.0;  // period = wavelength / speed = 16 frames
    p.noise_sigma = 0.0;
    auto frames = nvp::generate_waves<float>(p, 40);
    const std::int64_t hw = p.height * p.width;
    for (std::int64_t tau = 0; tau < 20; ++tau)
        for (std::int64_t i = 0; i < hw; ++i)
            EXPECT_NEAR(frames.data()[tau * hw + i], frames.data()[(tau + 16) * hw + i], 1e-5);
}

TEST(Waves, ZeroAmplitudeGivesZeroFrames) {
    WaveParams p;
    p.amplitude = 0.0;
    p.noise_sigma = 0.0;
    auto frames = nvp::generate_waves<float>(p, 8);
    for (float v : frames.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Waves, PlaneWaveMeanOverPeriodNearZero) {
    WaveParams p;
    p.kind = WaveKind::plane;
    p.speed = 0.5;
    p.wavelength = 8.0;
    p.noise_sigma = 0.0;
    p.amplitude = 0.9;
    auto frames = nvp::generate_waves<double>(p, 16);  // one full period
    // Numeric integration over the period at each pixel.
    const std::int64_t hw = p.height * p.width;
    for (std::int64_t i = 0; i < hw; ++i) {
        double mean = 0.0;
        for (std::int64_t tau = 0; tau < 16; ++tau) mean += frames.data()[tau * hw + i];
        EXPECT_NEAR(mean / 16.0, 0.0, 1e-3);
    }
}

TEST(Waves, DeterministicPerSeedAndKindsDiffer) {
    WaveParams p;
    p.noise_sigma = 0.05;
    p.seed = 42;
    auto a = nvp::generate_waves<float>(p, 6);
    auto b = nvp::generate_waves<float>(p, 6);
    EXPECT_EQ(a.data(), b.data());

    p.kind = WaveKind::spiral;
    auto s = nvp::generate_waves<float>(p, 6);
    EXPECT_NE(a.data(), s.data());
    p.kind = WaveKind::pulse;
    auto q = nvp::generate_waves<float>(p, 6);
    for (float v : q.data()) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
    }
    EXPECT_THROW(nvp::generate_waves<float>(WaveParams{.speed = 0.0}, 8), nvp::DataError);
}

TEST(Normalize, MapsRangeToUnitInterval) {
    auto x = Tensor::from({5}, {0.0f, 2.5f, 5.0f, 7.5f, 10.0f});
    nvp::NormScale scale;
    auto y = nvp::normalize_minmax_symmetric(x, &scale);
    EXPECT_FLOAT_EQ(y.at({0}), -1.0f);
    EXPECT_FLOAT_EQ(y.at({2}), 0.0f);  // value 5 -> 0
    EXPECT_FLOAT_EQ(y.at({4}), 1.0f);
    EXPECT_EQ(scale.lo, 0.0);
    EXPECT_EQ(scale.hi, 10.0);
}

TEST(Normalize, SymmetricDataUnchanged) {
    auto x = Tensor::from({4}, {-1.0f, -0.25f, 0.5f, 1.0f});
    nvp::NormScale scale;
    auto y = nvp::normalize_minmax_symmetric(x, &scale);
    for (std::int64_t i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-7);
}

TEST(Normalize, RoundTripAndConstantRejected) {
    nvp::Rng rng(3);
    auto x = Tensor::uniform({30}, rng, -4.0f, 9.0f);
    nvp::NormScale scale;
    auto y = nvp::normalize_minmax_symmetric(x, &scale);
    auto back = nvp::denormalize(y, scale);
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(back.data()[i], x.data()[i], 1e-6);

    auto constant = Tensor::filled({10}, 3.0f);
    EXPECT_THROW(nvp::normalize_minmax_symmetric(constant, &scale), nvp::DataError);
}

TEST(Window, CountsAndBoundaries) {
    // 64 frames, stride 32, window 32 -> exactly 2 windows.
    auto starts = nvp::window_starts(0, 64, 32, 32);
    EXPECT_EQ(starts.size(), 2u);
    EXPECT_EQ(starts[0], 0);
    EXPECT_EQ(starts[1], 32);

    // Count formula floor((L - 32)/stride) + 1 against enumeration.
    for (std::int64_t len : {32, 33, 64, 100, 321})
        for (std::int64_t stride : {1, 2, 7, 32}) {
            const auto s = nvp::window_starts(0, len, 32, stride);
            EXPECT_EQ(static_cast<std::int64_t>(s.size()), (len - 32) / stride + 1);
        }

    // Windows never cross the range boundary.
    auto bounded = nvp::window_starts(10, 60, 32, 4);
    for (auto s : bounded) {
        EXPECT_GE(s, 10);
        EXPECT_LE(s + 32, 60);
    }

    EXPECT_THROW(nvp::window_starts(0, 31, 32, 1), nvp::DataError);
}

TEST(Window, BatchExtractionMatchesSource) {
    nvp::Rng rng(5);
    auto frames = Tensor::uniform({40, 4, 5}, rng, -1.0f, 1.0f);
    auto batch = nvp::make_batch(frames, {3, 7}, 2, 2);
    EXPECT_EQ(batch.block.shape(), (nvp::Shape{2, 1, 4, 4, 5}));
    EXPECT_EQ(batch.split, 2);
    EXPECT_EQ(batch.horizon(), 2);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t y = 0; y < 4; ++y)
            for (std::int64_t x = 0; x < 5; ++x) {
                EXPECT_EQ(batch.block.at({0, 0, i, y, x}), frames.at({3 + i, y, x}));
                EXPECT_EQ(batch.block.at({1, 0, i, y, x}), frames.at({7 + i, y, x}));
            }

    auto split = nvp::split_frames(batch);
    EXPECT_EQ(split.size(), 4u);
    EXPECT_EQ(split[1].at({1, 0, 2, 3}), frames.at({8, 2, 3}));
}

TEST(TensorFile, BitExactRoundTrip) {
    nvp::Rng rng(6);
    auto t = Tensor::uniform({3, 18, 20}, rng, -1.0f, 1.0f);
    const auto path = temp_path("nvp_test_roundtrip.nvt");
    nvp::write_tensor_file(path, t);
    auto back = nvp::read_tensor_file<float>(path);
    EXPECT_EQ(back.shape(), t.shape());
    EXPECT_EQ(back.data(), t.data());
    std::remove(path.c_str());
}

TEST(TensorFile, HeaderLayout) {
    // [32,18,20] file: 4 magic + 4 rank + 12 extents = 20 header bytes, then
    // 4*32*18*20 = 92,160 payload bytes.
    auto t = Tensor::zeros({32, 18, 20});
    const auto path = temp_path("nvp_test_header.nvt");
    nvp::write_tensor_file(path, t);
    EXPECT_EQ(std::filesystem::file_size(path), 20u + 92160u);
    std::remove(path.c_str());
}

TEST(TensorFile, BadMagicAndTruncationRejected) {
    const auto path = temp_path("nvp_test_bad.nvt");
    {
        std::ofstream os(path, std::ios::binary);
        os.write("BOGUS123", 8);
    }
    EXPECT_THROW(nvp::read_tensor_file<float>(path), nvp::DataError);
    {
        std::ofstream os(path, std::ios::binary);
        os.write("NVT1", 4);
        const std::uint32_t rank = 2, e0 = 4, e1 = 4;
        os.write(reinterpret_cast<const char*>(&rank), 4);
        os.write(reinterpret_cast<const char*>(&e0), 4);
        os.write(reinterpret_cast<const char*>(&e1), 4);
        const float v = 1.0f;  // only one of 16 payload values
        os.write(reinterpret_cast<const char*>(&v), 4);
    }
    EXPECT_THROW(nvp::read_tensor_file<float>(path), nvp::DataError);
    {
        std::ofstream os(path, std::ios::binary);
        os.write("NVT1", 4);
        const std::uint32_t rank = 9;
        os.write(reinterpret_cast<const char*>(&rank), 4);
    }
    EXPECT_THROW(nvp::read_tensor_file<float>(path), nvp::DataError);
    std::remove(path.c_str());
}
