#include "wsihyb/slide_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <filesystem>

namespace wsihyb {

namespace {
constexpr uint64_t kHeaderBytes = 4 + 2 + 4 + 4 + 4 + 1;

uint32_t div_ceil(uint32_t a, uint32_t b) { return (a + b - 1) / b; }
}  // namespace

size_t TissueMask::tissue_count() const {
    size_t n = 0;
    for (uint8_t c : cells) n += (c != 0);
    return n;
}

struct SlideImage::Fd {
    int fd = -1;
    ~Fd() {
        if (fd >= 0) ::close(fd);
    }
};

SlideImage SlideImage::open(const std::string& path, const std::string& slide_id) {
    SlideImage s;
    s.fd_ = std::make_shared<Fd>();
    s.fd_->fd = ::open(path.c_str(), O_RDONLY);
    if (s.fd_->fd < 0) throw DataError("cannot open slide: " + path);
    s.path_ = path;
    s.id_ = slide_id.empty() ? std::filesystem::path(path).stem().string()
                             : slide_id;

    unsigned char header[kHeaderBytes];
    ssize_t got = ::pread(s.fd_->fd, header, sizeof(header), 0);
    if (got != static_cast<ssize_t>(sizeof(header)))
        throw DataError("truncated slide header: " + path);
    if (std::memcmp(header, kSlideMagic, 4) != 0)
        throw DataError("bad slide magic in " + path);
    uint16_t version = static_cast<uint16_t>(header[4] | (header[5] << 8));
    if (version != kSlideFormatVersion)
        throw DataError("unsupported slide format version " +
                        std::to_string(version) + " in " + path);
    auto rd32 = [&](int off) {
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | header[off + i];
        return v;
    };
    s.width_ = rd32(6);
    s.height_ = rd32(10);
    s.tile_size_ = rd32(14);
    s.channels_ = header[18];
    if (s.width_ == 0 || s.height_ == 0 || s.tile_size_ == 0 ||
        s.channels_ == 0)
        throw DataError("degenerate slide dimensions in " + path);

    uint64_t tile_bytes = static_cast<uint64_t>(s.tile_size_) * s.tile_size_ *
                          s.channels_;
    uint64_t expect = kHeaderBytes + tile_bytes * s.tile_rows() * s.tile_cols();
    uint64_t actual = std::filesystem::file_size(path);
    if (actual != expect)
        throw DataError("slide size mismatch in " + path + ": expected " +
                        std::to_string(expect) + " bytes, found " +
                        std::to_string(actual));
    return s;
}

uint32_t SlideImage::tile_rows() const { return div_ceil(height_, tile_size_); }
uint32_t SlideImage::tile_cols() const { return div_ceil(width_, tile_size_); }

std::vector<uint8_t> SlideImage::read_tile(uint32_t tile_row,
                                           uint32_t tile_col) const {
    if (tile_row >= tile_rows() || tile_col >= tile_cols())
        throw DataError("tile (" + std::to_string(tile_row) + "," +
                        std::to_string(tile_col) + ") out of range in " + id_);
    uint64_t tile_bytes =
        static_cast<uint64_t>(tile_size_) * tile_size_ * channels_;
    uint64_t off = kHeaderBytes +
                   tile_bytes * (static_cast<uint64_t>(tile_row) * tile_cols() +
                                 tile_col);
    std::vector<uint8_t> buf(tile_bytes);
    uint64_t done = 0;
    while (done < tile_bytes) {
        ssize_t got = ::pread(fd_->fd, buf.data() + done, tile_bytes - done,
                              static_cast<off_t>(off + done));
        if (got <= 0) throw DataError("read failed in " + path_);
        done += static_cast<uint64_t>(got);
    }
    return buf;
}

std::vector<uint8_t> SlideImage::read_region(uint32_t x, uint32_t y, uint32_t w,
                                             uint32_t h) const {
    if (w == 0 || h == 0 || static_cast<uint64_t>(x) + w > width_ ||
        static_cast<uint64_t>(y) + h > height_)
        throw DataError("region read out of bounds on slide " + id_);
    std::vector<uint8_t> out(static_cast<size_t>(w) * h * channels_);
    uint32_t tr0 = y / tile_size_, tr1 = (y + h - 1) / tile_size_;
    uint32_t tc0 = x / tile_size_, tc1 = (x + w - 1) / tile_size_;
    for (uint32_t tr = tr0; tr <= tr1; ++tr) {
        for (uint32_t tc = tc0; tc <= tc1; ++tc) {
            std::vector<uint8_t> tile = read_tile(tr, tc);
            uint32_t ty0 = tr * tile_size_, tx0 = tc * tile_size_;
            uint32_t ry0 = std::max(y, ty0), ry1 = std::min(y + h, ty0 + tile_size_);
            uint32_t rx0 = std::max(x, tx0), rx1 = std::min(x + w, tx0 + tile_size_);
            for (uint32_t ry = ry0; ry < ry1; ++ry) {
                const uint8_t* src =
                    tile.data() +
                    (static_cast<size_t>(ry - ty0) * tile_size_ + (rx0 - tx0)) *
                        channels_;
                uint8_t* dst =
                    out.data() +
                    (static_cast<size_t>(ry - y) * w + (rx0 - x)) * channels_;
                std::memcpy(dst, src, static_cast<size_t>(rx1 - rx0) * channels_);
            }
        }
    }
    return out;
}

void write_slide_file(const std::string& path, uint32_t width, uint32_t height,
                      uint32_t tile_size, uint32_t channels,
                      const std::vector<uint8_t>& pixels) {
    if (width == 0 || height == 0 || tile_size == 0 || channels == 0)
        throw UsageError("degenerate slide dimensions");
    if (pixels.size() != static_cast<size_t>(width) * height * channels)
        throw UsageError("pixel buffer size does not match dimensions");

    BinaryWriter out(path);
    out.bytes(kSlideMagic, 4);
    out.u16(kSlideFormatVersion);
    out.u32(width);
    out.u32(height);
    out.u32(tile_size);
    out.u8(static_cast<uint8_t>(channels));

    uint32_t rows = div_ceil(height, tile_size), cols = div_ceil(width, tile_size);
    std::vector<uint8_t> tile(static_cast<size_t>(tile_size) * tile_size *
                              channels);
    for (uint32_t tr = 0; tr < rows; ++tr) {
        for (uint32_t tc = 0; tc < cols; ++tc) {
            std::fill(tile.begin(), tile.end(), 0);
            uint32_t y0 = tr * tile_size, x0 = tc * tile_size;
            uint32_t ylim = std::min(height, y0 + tile_size);
            uint32_t xlim = std::min(width, x0 + tile_size);
            for (uint32_t y = y0; y < ylim; ++y) {
                const uint8_t* src =
                    pixels.data() +
                    (static_cast<size_t>(y) * width + x0) * channels;
                uint8_t* dst =
                    tile.data() +
                    static_cast<size_t>(y - y0) * tile_size * channels;
                std::memcpy(dst, src, static_cast<size_t>(xlim - x0) * channels);
            }
            out.bytes(tile.data(), tile.size());
        }
    }
    out.close();
}

// ---------------------------------------------------------------------------

int otsu_threshold(const std::array<uint64_t, 256>& histogram) {
    uint64_t total = 0, total_weighted = 0;
    int first_occupied = -1;
    for (int i = 0; i < 256; ++i) {
        total += histogram[i];
        total_weighted += histogram[i] * static_cast<uint64_t>(i);
        if (first_occupied < 0 && histogram[i] > 0) first_occupied = i;
    }
    if (total == 0) throw DataError("empty histogram");

    // Between-class variance up to a constant factor:
    //   (s0*w1 - s1*w0)^2 / (w0*w1).
    // Sums are exact integers; the ratio is evaluated once per t in long
    // double so that any scan order produces identical comparisons.
    long double best = 0.0L;
    int best_t = -1;
    uint64_t w0 = 0, s0 = 0;
    for (int t = 0; t < 256; ++t) {
        w0 += histogram[t];
        s0 += histogram[t] * static_cast<uint64_t>(t);
        uint64_t w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        uint64_t s1 = total_weighted - s0;
        long double a = static_cast<long double>(s0) * w1 -
                        static_cast<long double>(s1) * w0;
        long double var = a * a / (static_cast<long double>(w0) * w1);
        if (best_t < 0 || var > best) {
            best = var;
            best_t = t;
        }
    }
    // All mass in one bin: no split has positive variance.
    if (best_t < 0 || best == 0.0L) return first_occupied;
    return best_t;
}

TissueMask compute_tissue_mask(const SlideImage& slide, uint32_t factor) {
    if (factor == 0) throw UsageError("downsample factor must be >= 1");
    if (slide.tile_size() % factor != 0)
        throw UsageError("downsample factor must divide the tile size");

    TissueMask mask;
    mask.factor = factor;
    mask.cols = div_ceil(slide.width(), factor);
    mask.rows = div_ceil(slide.height(), factor);

    // Per-cell channel sums accumulated strip by strip (one tile row at a
    // time) so large slides never need a full decode.
    std::vector<std::array<uint64_t, 3>> sums(
        static_cast<size_t>(mask.rows) * mask.cols, {0, 0, 0});
    std::vector<uint64_t> counts(sums.size(), 0);

    const uint32_t ts = slide.tile_size();
    for (uint32_t tr = 0; tr < slide.tile_rows(); ++tr) {
        uint32_t y0 = tr * ts;
        uint32_t h = std::min(ts, slide.height() - y0);
        std::vector<uint8_t> strip = slide.read_region(0, y0, slide.width(), h);
        for (uint32_t dy = 0; dy < h; ++dy) {
            uint32_t cell_row = (y0 + dy) / factor;
            const uint8_t* row =
                strip.data() + static_cast<size_t>(dy) * slide.width() * 3;
            for (uint32_t x = 0; x < slide.width(); ++x) {
                size_t cell = static_cast<size_t>(cell_row) * mask.cols + x / factor;
                sums[cell][0] += row[x * 3 + 0];
                sums[cell][1] += row[x * 3 + 1];
                sums[cell][2] += row[x * 3 + 2];
                counts[cell]++;
            }
        }
    }

    std::vector<uint8_t> lumas(sums.size());
    std::array<uint64_t, 256> hist{};
    for (size_t i = 0; i < sums.size(); ++i) {
        double n = static_cast<double>(counts[i]);
        int r = static_cast<int>(std::llround(sums[i][0] / n));
        int g = static_cast<int>(std::llround(sums[i][1] / n));
        int b = static_cast<int>(std::llround(sums[i][2] / n));
        int l = std::clamp(luma_u8(r, g, b), 0, 255);
        lumas[i] = static_cast<uint8_t>(l);
        hist[l]++;
    }

    int threshold = otsu_threshold(hist);
    mask.cells.resize(lumas.size());
    for (size_t i = 0; i < lumas.size(); ++i)
        mask.cells[i] = lumas[i] <= threshold ? 1 : 0;
    return mask;
}

std::vector<uint32_t> stride_positions(uint32_t extent, uint32_t patch_size,
                                       uint32_t stride) {
    std::vector<uint32_t> pos;
    for (uint64_t p = 0; p + patch_size <= extent; p += stride)
        pos.push_back(static_cast<uint32_t>(p));
    uint32_t last = extent - patch_size;
    if (pos.empty() || pos.back() != last) pos.push_back(last);
    return pos;
}

std::vector<PatchRef> enumerate_patches(const SlideImage& slide,
                                        const TissueMask& mask,
                                        uint32_t patch_size, uint32_t overlap) {
    if (patch_size == 0 || overlap >= patch_size)
        throw UsageError("require 0 <= overlap < patch_size");
    if (patch_size > slide.width() || patch_size > slide.height())
        throw UsageError("patch size exceeds slide extent");

    uint32_t stride = patch_size - overlap;
    std::vector<uint32_t> xs = stride_positions(slide.width(), patch_size, stride);
    std::vector<uint32_t> ys = stride_positions(slide.height(), patch_size, stride);

    auto has_tissue = [&](uint32_t x, uint32_t y) {
        uint32_t c0 = x / mask.factor;
        uint32_t c1 = std::min((x + patch_size - 1) / mask.factor, mask.cols - 1);
        uint32_t r0 = y / mask.factor;
        uint32_t r1 = std::min((y + patch_size - 1) / mask.factor, mask.rows - 1);
        for (uint32_t r = r0; r <= r1; ++r)
            for (uint32_t c = c0; c <= c1; ++c)
                if (mask.at(r, c)) return true;
        return false;
    };

    std::vector<PatchRef> out;
    for (uint32_t y : ys)
        for (uint32_t x : xs)
            if (has_tissue(x, y))
                out.push_back(PatchRef{slide.id(), x, y, patch_size});
    return out;
}

std::vector<uint8_t> read_patch(const SlideImage& slide, const PatchRef& ref) {
    if (static_cast<uint64_t>(ref.x) + ref.size > slide.width() ||
        static_cast<uint64_t>(ref.y) + ref.size > slide.height())
        throw DataError("patch out of bounds on slide " + slide.id());
    return slide.read_region(ref.x, ref.y, ref.size, ref.size);
}

}  // namespace wsihyb
