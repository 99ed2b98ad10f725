#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wsihyb/common.hpp"
#include "wsihyb/slide_store.hpp"

namespace wsihyb {

// Pixel classes of the synthetic raster. Lesion texture appears only on
// positive slides; distractor texture appears on both, statistically
// between benign tissue and lesion so that image-level supervision has
// something to disambiguate.
enum class TextureClass : uint8_t {
    background = 0,
    benign = 1,
    distractor = 2,
    lesion = 3,
};

struct TextureParams {
    std::array<double, 3> mean_rgb;
    double sigma;
};

struct GenConfig {
    uint32_t train_slides = 160;
    uint32_t test_slides = 100;
    double pos_fraction = 0.1;
    uint32_t extent = 4096;
    uint32_t tile_size = 512;
    uint32_t patch_size = 512;
    uint32_t fine_patches = 24;

    uint32_t min_distractors = 10;
    uint32_t max_distractors = 22;
    uint32_t min_lesions = 1;
    uint32_t max_lesions = 3;
    double min_radius = 64.0;
    double max_radius = 256.0;

    // Texture knobs; distractor statistics sit at `distractor_shift`
    // between benign and lesion.
    double noise_scale = 1.0;
    double distractor_shift = 0.55;

    uint64_t seed = 1;

    void validate() const;
};

TextureParams texture_params(TextureClass cls, const GenConfig& cfg);

struct SlideEntry {
    std::string id;
    std::string file;  // relative to the dataset directory
    int label = 0;     // 1 = positive
    std::string split; // "train" | "test"
    uint32_t lesions = 0;
    uint32_t distractors = 0;
};

struct FinePatchEntry {
    std::string slide_id;  // source slide of the annotated patch
    std::string file;
    uint32_t x = 0;
    uint32_t y = 0;
    uint32_t size = 0;
};

struct DatasetManifest {
    uint64_t seed = 0;
    uint32_t extent = 0;
    uint32_t tile_size = 0;
    uint32_t patch_size = 0;
    std::string root;  // directory holding manifest.json
    std::string digest;
    std::vector<SlideEntry> slides;
    std::vector<FinePatchEntry> fine_patches;

    std::vector<const SlideEntry*> split_slides(const std::string& split) const;
};

// Renders one synthetic slide deterministically from (cfg, seed, id).
// Exposed for tests; the full generator below drives it per slide.
struct RenderedSlide {
    std::vector<uint8_t> pixels;   // extent*extent*3 interleaved
    std::vector<uint8_t> classes;  // extent*extent TextureClass codes
    uint32_t lesions = 0;
    uint32_t distractors = 0;
};
RenderedSlide render_slide(const GenConfig& cfg, const Rng& parent,
                           const std::string& id, bool positive);

// Writes slides, fine-label patches and manifest.json under out_dir.
// Deterministic per (cfg, cfg.seed): rerunning yields byte-identical files.
DatasetManifest generate_synthetic_dataset(const GenConfig& cfg,
                                           const std::string& out_dir,
                                           unsigned workers = 0,
                                           const ProgressFn& progress = {});

DatasetManifest load_manifest(const std::string& dataset_dir);

}  // namespace wsihyb
