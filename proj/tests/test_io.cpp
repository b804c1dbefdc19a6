#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "zoomseg/io.hpp"

using namespace zoomseg;

namespace {

io::Bitmap gradient(int h, int w, int channels) {
    io::Bitmap b{h, w, channels, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * channels))};
    for (std::size_t i = 0; i < b.pixels.size(); ++i) b.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
    return b;
}

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Png, RoundTripsGreyAndRgb) {
    for (int ch : {1, 3}) {
        const auto b = gradient(7, 5, ch);
        const auto back = io::decode_png(io::encode_png(b));
        EXPECT_EQ(back.height, 7);
        EXPECT_EQ(back.width, 5);
        EXPECT_EQ(back.channels, ch);
        EXPECT_EQ(back.pixels, b.pixels);
    }
}

TEST(Png, CorruptStreamsThrow) {
    auto png = io::encode_png(gradient(4, 4, 3));
    png.resize(png.size() / 2);
    EXPECT_THROW(io::decode_png(png), io::ImageIoError);
    EXPECT_THROW(io::decode_image_bytes(bytes("garbage")), io::ImageIoError);
    EXPECT_THROW(io::decode_image_bytes({}), io::ImageIoError);
}

TEST(Pnm, BinaryAndAsciiVariants) {
    const auto b = gradient(3, 4, 3);
    EXPECT_EQ(io::decode_pnm(io::encode_ppm(b)).pixels, b.pixels);
    const auto ascii = io::decode_image_bytes(bytes("P2\n# comment\n2 1\n15\n0 15\n"));
    EXPECT_EQ(ascii.channels, 1);
    EXPECT_EQ(ascii.pixels, (std::vector<std::uint8_t>{0, 255}));
    EXPECT_THROW(io::decode_pnm(bytes("P6\n2 2\n255\n\x01")), io::ImageIoError);
    EXPECT_THROW(io::decode_pnm(bytes("P4\n2 2\n")), io::ImageIoError);
    EXPECT_THROW(io::decode_pnm(bytes("P5\n2 2\n999\n")), io::ImageIoError);
}

TEST(Raster, GreyFilesFillAllChannels) {
    io::Bitmap b{1, 2, 1, {0, 255}};
    const auto img = io::to_raster(b);
    EXPECT_EQ(img.r(0, 1), 1.f);
    EXPECT_EQ(img.b(0, 1), 1.f);
    EXPECT_EQ(img.g(0, 0), 0.f);
}

TEST(Raster, ImageRoundTripQuantizesTo8Bits) {
    RasterImage img(3, 3);
    for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 9; ++i) img.channel(k)[i] = static_cast<float>(i * 30 + k * 7) / 255.f;
    EXPECT_EQ(io::decode_image(io::encode_png(io::to_bitmap(img))), img);
}

TEST(Mask, ThresholdAt128AndFileRoundTrip) {
    io::Bitmap b{1, 4, 1, {0, 127, 128, 255}};
    BinaryMask expected(1, 4, 0);
    expected[2] = expected[3] = 1;
    EXPECT_EQ(io::to_mask(b), expected);
    BinaryMask m(5, 6, 0);
    m(1, 2) = m(4, 5) = 1;
    const auto path = (std::filesystem::temp_directory_path() / ("zoomseg_io_" + std::to_string(::getpid()) + ".png")).string();
    io::save_mask(path, m);
    EXPECT_EQ(io::load_mask(path), m);
    std::filesystem::remove(path);
    EXPECT_THROW(io::load_mask(path), io::ImageIoError);
}

TEST(Files, PpmSuffixSelectsPpm) {
    const auto path = (std::filesystem::temp_directory_path() / ("zoomseg_io_" + std::to_string(::getpid()) + ".ppm")).string();
    io::save_image(path, RasterImage(2, 3, 0.5f));
    const auto raw = io::read_file(path);
    EXPECT_EQ(raw[0], 'P');
    EXPECT_EQ(raw[1], '6');
    EXPECT_EQ(io::load_image(path).width(), 3);
    std::filesystem::remove(path);
}
