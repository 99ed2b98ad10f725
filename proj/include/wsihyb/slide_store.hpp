#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "wsihyb/common.hpp"

namespace wsihyb {

// Tiled slide container (.wsih):
//   magic "WSIH" | version u16 | width u32 | height u32 | tile_size u32 |
//   channels u8 | tiles row-major, each tile_size*tile_size*channels raw
//   bytes (interleaved channels, row-major pixels). Edge tiles are stored
//   at full size with the out-of-bounds remainder zero-filled, so the byte
//   offset of any tile is a closed-form expression. All integers little
//   endian, no compression.

inline constexpr char kSlideMagic[4] = {'W', 'S', 'I', 'H'};
inline constexpr uint16_t kSlideFormatVersion = 1;

enum class SlideLabel : uint8_t { negative = 0, positive = 1 };

struct PatchRef {
    std::string slide_id;
    uint32_t x = 0;
    uint32_t y = 0;
    uint32_t size = 0;

    bool operator==(const PatchRef&) const = default;
};

struct TissueMask {
    uint32_t factor = 1;
    uint32_t cols = 0;
    uint32_t rows = 0;
    std::vector<uint8_t> cells;  // rows*cols, nonzero = tissue

    bool at(uint32_t row, uint32_t col) const {
        return cells[static_cast<size_t>(row) * cols + col] != 0;
    }
    size_t tissue_count() const;
};

class SlideImage {
public:
    // The container itself carries no identifier; callers pass the id the
    // dataset manifest assigned (defaults to the file stem).
    static SlideImage open(const std::string& path, const std::string& slide_id = "");

    SlideImage() = default;

    const std::string& id() const { return id_; }
    const std::string& path() const { return path_; }
    uint32_t width() const { return width_; }
    uint32_t height() const { return height_; }
    uint32_t tile_size() const { return tile_size_; }
    uint32_t channels() const { return channels_; }
    uint32_t tile_rows() const;
    uint32_t tile_cols() const;
    SlideLabel label() const { return label_; }
    void set_label(SlideLabel l) { label_ = l; }

    // Raw padded tile bytes. Thread-safe (pread on a shared descriptor).
    std::vector<uint8_t> read_tile(uint32_t tile_row, uint32_t tile_col) const;

    // Interleaved pixel block; out-of-bounds requests are errors.
    std::vector<uint8_t> read_region(uint32_t x, uint32_t y, uint32_t w,
                                     uint32_t h) const;

private:
    struct Fd;
    std::shared_ptr<Fd> fd_;
    std::string id_;
    std::string path_;
    uint32_t width_ = 0;
    uint32_t height_ = 0;
    uint32_t tile_size_ = 0;
    uint32_t channels_ = 0;
    SlideLabel label_ = SlideLabel::negative;
};

// Writes a full in-memory raster out as a tiled container. `pixels` is
// width*height*channels interleaved bytes.
void write_slide_file(const std::string& path, uint32_t width, uint32_t height,
                      uint32_t tile_size, uint32_t channels,
                      const std::vector<uint8_t>& pixels);

// ---------------------------------------------------------------------------
// Operations

// Rounded BT.601 luma, shared by the tissue mask and the feature extractor.
inline int luma_u8(int r, int g, int b) {
    return static_cast<int>(std::llround(0.299 * r + 0.587 * g + 0.114 * b));
}

// Smallest index t maximizing the between-class variance
// w0(t)*w1(t)*(mu0(t)-mu1(t))^2 with class 0 = bins [0..t]. A histogram
// whose mass sits in a single bin returns that bin.
int otsu_threshold(const std::array<uint64_t, 256>& histogram);

// Downsamples by block-mean, grayscales, thresholds with Otsu; cells at or
// below the threshold (the darker side) are tissue. `factor` must divide
// the tile size.
TissueMask compute_tissue_mask(const SlideImage& slide, uint32_t factor);

// Grid positions along one axis: 0, stride, 2*stride, ... plus a final
// clamped position so the last patch ends exactly at the extent.
std::vector<uint32_t> stride_positions(uint32_t extent, uint32_t patch_size,
                                       uint32_t stride);

// Row-major (y, x) list of patch references covering all tissue; patches
// without a single tissue cell are dropped.
std::vector<PatchRef> enumerate_patches(const SlideImage& slide,
                                        const TissueMask& mask,
                                        uint32_t patch_size, uint32_t overlap);

// size*size*channels interleaved bytes assembled from the underlying tiles.
std::vector<uint8_t> read_patch(const SlideImage& slide, const PatchRef& ref);

}  // namespace wsihyb
