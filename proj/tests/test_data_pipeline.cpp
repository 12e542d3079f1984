#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "surge/data_pipeline.hpp"
#include "surge/rng.hpp"

using namespace surge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "surge_data_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Image random_image(int64_t h, int64_t w, uint64_t seed) {
    Image img(h, w);
    Rng rng(seed);
    for (auto& p : img.pixels) p = float(rng.uniform());
    return img;
}

// Independent oracle: direct 2-D kernel summation per output pixel (no
// separable passes, no shared code with the production resampler).
double oracle_cubic(double x) {
    constexpr double a = -0.5;
    x = std::fabs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

Image oracle_bicubic_downscale(const Image& img, int64_t factor) {
    const int64_t oh = img.h / factor, ow = img.w / factor;
    const double scale = double(factor);
    const double support = 2.0 * scale;
    Image out(oh, ow);
    for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
            const double cy = (oy + 0.5) * scale - 0.5;
            const double cx = (ox + 0.5) * scale - 0.5;
            const int64_t y0 = int64_t(std::floor(cy - support + 0.5));
            const int64_t y1 = int64_t(std::floor(cy + support + 0.5));
            const int64_t x0 = int64_t(std::floor(cx - support + 0.5));
            const int64_t x1 = int64_t(std::floor(cx + support + 0.5));
            for (int64_t c = 0; c < 3; ++c) {
                double acc = 0.0, wacc = 0.0;
                for (int64_t sy = y0; sy <= y1; ++sy)
                    for (int64_t sx = x0; sx <= x1; ++sx) {
                        const double wgt = oracle_cubic((sy - cy) / scale) *
                                           oracle_cubic((sx - cx) / scale);
                        const int64_t yy = std::clamp<int64_t>(sy, 0, img.h - 1);
                        const int64_t xx = std::clamp<int64_t>(sx, 0, img.w - 1);
                        acc += wgt * img.at(yy, xx, c);
                        wacc += wgt;
                    }
                out.at(oy, ox, c) = float(std::clamp(acc / wacc, 0.0, 1.0));
            }
        }
    return out;
}

void write_gray_png(const std::string& path, int bit_depth, int w, int h) {
    FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, f);
    png_set_IHDR(png, info, w, h, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    const size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> row(rowbytes, 0);
    if (bit_depth == 16) {
        auto* r16 = reinterpret_cast<uint16_t*>(row.data());
        for (int x = 0; x < w; ++x) r16[x] = uint16_t(x == 0 ? 65535 : 32768);
    }
    for (int y = 0; y < h; ++y) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

void write_bmp24(const std::string& path, int w, int h, unsigned char r, unsigned char g,
                 unsigned char b) {
    const int stride = ((w * 3 + 3) / 4) * 4;
    const int data_size = stride * h;
    std::vector<unsigned char> buf(54 + size_t(data_size), 0);
    buf[0] = 'B';
    buf[1] = 'M';
    auto put32 = [&](int off, uint32_t v) {
        buf[off] = v & 0xff;
        buf[off + 1] = (v >> 8) & 0xff;
        buf[off + 2] = (v >> 16) & 0xff;
        buf[off + 3] = (v >> 24) & 0xff;
    };
    put32(2, uint32_t(buf.size()));
    put32(10, 54);
    put32(14, 40);
    put32(18, uint32_t(w));
    put32(22, uint32_t(h));
    buf[26] = 1;
    buf[28] = 24;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            unsigned char* px = buf.data() + 54 + y * stride + x * 3;
            px[0] = b;
            px[1] = g;
            px[2] = r;
        }
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

}  // namespace

TEST_CASE("png round trip preserves endpoints exactly and values within 1/255") {
    Image img = random_image(20, 17, 42);
    img.at(0, 0, 0) = 1.0f;
    img.at(0, 0, 1) = 0.0f;
    const std::string path = (temp_dir() / "roundtrip.png").string();
    save_png(img, path);
    Image back = load_image(path);
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    CHECK(back.at(0, 0, 0) == 1.0f);
    CHECK(back.at(0, 0, 1) == 0.0f);
    float max_diff = 0;
    for (size_t i = 0; i < img.pixels.size(); ++i)
        max_diff = std::max(max_diff, std::fabs(img.pixels[i] - back.pixels[i]));
    CHECK(max_diff <= 1.0f / 255.0f);
}

TEST_CASE("16-bit grayscale png loads scaled and replicated to rgb") {
    const std::string path = (temp_dir() / "gray16.png").string();
    write_gray_png(path, 16, 4, 3);
    Image img = load_image(path);
    REQUIRE(img.h == 3);
    REQUIRE(img.w == 4);
    CHECK(img.at(0, 0, 0) == doctest::Approx(1.0));
    CHECK(img.at(0, 0, 2) == doctest::Approx(1.0));  // replicated channel
    CHECK(img.at(0, 1, 1) == doctest::Approx(32768.0 / 65535.0));
}

TEST_CASE("sub-8-bit png is a format error") {
    const std::string path = (temp_dir() / "gray4.png").string();
    write_gray_png(path, 4, 4, 4);
    CHECK_THROWS_AS(load_image(path), FormatError);
}

TEST_CASE("bmp 24-bit loads with channels unswizzled") {
    const std::string path = (temp_dir() / "solid.bmp").string();
    write_bmp24(path, 5, 4, 255, 128, 0);
    Image img = load_image(path);
    REQUIRE(img.h == 4);
    REQUIRE(img.w == 5);
    CHECK(img.at(2, 3, 0) == doctest::Approx(1.0));
    CHECK(img.at(2, 3, 1) == doctest::Approx(128.0 / 255.0));
    CHECK(img.at(2, 3, 2) == doctest::Approx(0.0));
}

TEST_CASE("unreadable and unknown files raise decode/format errors") {
    CHECK_THROWS_AS(load_image((temp_dir() / "missing.png").string()), DecodeError);
    const std::string junk = (temp_dir() / "junk.dat").string();
    std::ofstream(junk) << "not an image";
    CHECK_THROWS_AS(load_image(junk), FormatError);
    const std::string badpng = (temp_dir() / "trunc.png").string();
    std::ofstream(badpng, std::ios::binary).write("\x89PNG\r\n\x1a\ngarbage", 16);
    CHECK_THROWS_AS(load_image(badpng), DecodeError);
}

TEST_CASE("extract_random_patch contracts") {
    Rng rng(7);
    Image exact = random_image(256, 256, 1);
    PatchCrop crop = extract_random_patch(exact, 256, rng);
    CHECK(crop.row == 0);
    CHECK(crop.col == 0);
    CHECK(crop.patch.pixels == exact.pixels);

    Image small = random_image(255, 300, 2);
    CHECK_THROWS_AS(extract_random_patch(small, 256, rng), PreconditionError);

    Image big = random_image(512, 512, 3);
    Rng a(99), b(99);
    PatchCrop c1 = extract_random_patch(big, 256, a);
    PatchCrop c2 = extract_random_patch(big, 256, b);
    CHECK(c1.row == c2.row);
    CHECK(c1.col == c2.col);
    CHECK(c1.row >= 0);
    CHECK(c1.row <= 512 - 256);
}

TEST_CASE("bicubic downscale of a constant image is constant") {
    Image img(64, 32);
    std::fill(img.pixels.begin(), img.pixels.end(), 0.7f);
    Image out = bicubic_downscale(img, 4);
    REQUIRE(out.h == 16);
    REQUIRE(out.w == 8);
    for (float v : out.pixels) CHECK(v == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("bicubic downscale shape contract and divisibility precondition") {
    Image img = random_image(256, 256, 4);
    Image out = bicubic_downscale(img, 4);
    CHECK(out.h == 64);
    CHECK(out.w == 64);
    Image odd = random_image(254, 256, 5);
    CHECK_THROWS_AS(bicubic_downscale(odd, 4), PreconditionError);
    CHECK_THROWS_AS(bicubic_downscale(img, 1), PreconditionError);
}

TEST_CASE("bicubic downscale matches direct kernel-sum oracle") {
    // horizontal ramp plus random texture, both checked at 1e-5
    Image ramp(32, 48);
    for (int64_t y = 0; y < ramp.h; ++y)
        for (int64_t x = 0; x < ramp.w; ++x)
            for (int64_t c = 0; c < 3; ++c) ramp.at(y, x, c) = float(x) / float(ramp.w - 1);
    for (const Image& img : {ramp, random_image(40, 24, 6)}) {
        Image got = bicubic_downscale(img, 4);
        Image want = oracle_bicubic_downscale(img, 4);
        REQUIRE(got.h == want.h);
        REQUIRE(got.w == want.w);
        double max_diff = 0;
        for (size_t i = 0; i < got.pixels.size(); ++i)
            max_diff = std::max(max_diff, double(std::fabs(got.pixels[i] - want.pixels[i])));
        CHECK(max_diff < 1e-5);
    }
}

TEST_CASE("manifest parsing skips comments and blanks") {
    fs::path dir = temp_dir() / "mani";
    fs::create_directories(dir);
    save_png(random_image(16, 16, 7), (dir / "a.png").string());
    save_png(random_image(16, 16, 8), (dir / "b.png").string());
    std::ofstream(dir / "list.txt") << "# comment\na.png\n\n  b.png  # trailing\n";
    DatasetManifest m = load_manifest((dir / "list.txt").string());
    REQUIRE(m.entries.size() == 2);
    CHECK(m.entries[0] == "a.png");
    CHECK(m.entries[1] == "b.png");
    CHECK_THROWS_AS(load_manifest((dir / "nope.txt").string()), PreconditionError);
}

TEST_CASE("validate_manifest excludes small images with a warning") {
    fs::path dir = temp_dir() / "mani2";
    fs::create_directories(dir);
    save_png(random_image(300, 300, 9), (dir / "big.png").string());
    save_png(random_image(255, 300, 10), (dir / "small.png").string());
    std::ofstream(dir / "list.txt") << "big.png\nsmall.png\n";
    ValidatedDataset v = validate_manifest(load_manifest((dir / "list.txt").string()), 256);
    REQUIRE(v.manifest.entries.size() == 1);
    CHECK(v.manifest.entries[0] == "big.png");
    REQUIRE(v.warnings.size() == 1);
    CHECK(v.warnings[0].find("small.png") != std::string::npos);
}

TEST_CASE("epoch batching: counts, determinism, pair invariants") {
    fs::path dir = temp_dir() / "batches";
    fs::create_directories(dir);
    // 40 images at patch scale 16 exercises the 40/8=5 grouping arithmetic
    std::ofstream list(dir / "list.txt");
    for (int i = 0; i < 40; ++i) {
        std::string name = "img" + std::to_string(i) + ".png";
        save_png(random_image(24, 28, 100 + uint64_t(i)), (dir / name).string());
        list << name << "\n";
    }
    list.close();
    DatasetManifest m = load_manifest((dir / "list.txt").string());

    Rng seed(1234);
    auto batches = make_epoch_batches(m, 8, seed, 0, 16, 4);
    CHECK(batches.size() == 5);  // trailing partial dropped by construction
    for (const auto& b : batches) {
        REQUIRE(b.size() == 8);
        for (const auto& p : b.pairs) {
            CHECK(p.hr.h == 16);
            CHECK(p.lr.h == 4);
            // lr must be the bicubic reduction of hr
            Image lr2 = bicubic_downscale(p.hr, 4);
            double max_diff = 0;
            for (size_t i = 0; i < lr2.pixels.size(); ++i)
                max_diff = std::max(max_diff, double(std::fabs(lr2.pixels[i] - p.lr.pixels[i])));
            CHECK(max_diff < 1e-6);
            CHECK(p.crop_row >= 0);
            CHECK(p.crop_row <= 24 - 16);
            CHECK(p.crop_col <= 28 - 16);
        }
    }

    auto batches2 = make_epoch_batches(m, 8, Rng(1234), 0, 16, 4);
    for (size_t b = 0; b < batches.size(); ++b)
        for (int64_t i = 0; i < 8; ++i) {
            CHECK(batches[b].pairs[size_t(i)].source_id == batches2[b].pairs[size_t(i)].source_id);
            CHECK(batches[b].pairs[size_t(i)].crop_row == batches2[b].pairs[size_t(i)].crop_row);
        }

    auto epoch1 = make_epoch_batches(m, 8, seed, 1, 16, 4);
    bool any_offset_differs = false;
    for (size_t b = 0; b < batches.size() && !any_offset_differs; ++b)
        for (int64_t i = 0; i < 8; ++i)
            if (batches[b].pairs[size_t(i)].crop_row != epoch1[b].pairs[size_t(i)].crop_row)
                any_offset_differs = true;
    CHECK(any_offset_differs);

    CHECK_THROWS_AS(make_epoch_batches(m, 41, seed, 0, 16, 4), ConfigError);
    CHECK_THROWS_AS(make_epoch_batches(m, 1, seed, 0, 16, 4), ConfigError);
}
