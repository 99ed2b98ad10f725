#include "wsihyb/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "json.hpp"

namespace wsihyb {

using nlohmann::json;

void GenConfig::validate() const {
    if (train_slides == 0) throw UsageError("slides must be >= 1");
    if (pos_fraction < 0.0 || pos_fraction > 1.0)
        throw UsageError("pos_frac must lie in [0, 1]");
    if (extent == 0 || tile_size == 0 || extent < tile_size)
        throw UsageError("extent must be >= tile size");
    if (patch_size > extent) throw UsageError("patch size exceeds extent");
    if (min_radius <= 0 || max_radius < min_radius)
        throw UsageError("require 0 < min_radius <= max_radius");
    if (min_distractors > max_distractors || min_lesions > max_lesions)
        throw UsageError("blob count ranges are inverted");
    if (max_lesions == 0) throw UsageError("positive slides need max_lesions >= 1");
    if (distractor_shift <= 0.0 || distractor_shift >= 1.0)
        throw UsageError("distractor_shift must lie strictly between 0 and 1");
    if (noise_scale < 0.0) throw UsageError("noise_scale must be >= 0");
}

TextureParams texture_params(TextureClass cls, const GenConfig& cfg) {
    // Brightfield-like palette: light background, darker tissue. Lesion is
    // darker with stronger local variance; the distractor interpolates.
    const TextureParams background{{246.0, 243.0, 247.0}, 2.0};
    const TextureParams benign{{225.0, 198.0, 214.0}, 6.0};
    const TextureParams lesion{{150.0, 105.0, 155.0}, 26.0};
    TextureParams p;
    switch (cls) {
        case TextureClass::background: p = background; break;
        case TextureClass::benign: p = benign; break;
        case TextureClass::lesion: p = lesion; break;
        case TextureClass::distractor: {
            double s = cfg.distractor_shift;
            for (int c = 0; c < 3; ++c)
                p.mean_rgb[c] =
                    benign.mean_rgb[c] + s * (lesion.mean_rgb[c] - benign.mean_rgb[c]);
            p.sigma = benign.sigma + s * (lesion.sigma - benign.sigma);
            break;
        }
    }
    p.sigma *= cfg.noise_scale;
    return p;
}

namespace {

struct Ellipse {
    double cx, cy, rx, ry, angle;
};

// Per-row horizontal span of a rotated ellipse; empty when the row misses it.
bool ellipse_row_span(const Ellipse& e, double y, double& x0, double& x1) {
    // ((dx*c + dy*s)/rx)^2 + ((-dx*s + dy*c)/ry)^2 = 1, quadratic in dx.
    double c = std::cos(e.angle), s = std::sin(e.angle);
    double dy = y - e.cy;
    double irx = 1.0 / (e.rx * e.rx), iry = 1.0 / (e.ry * e.ry);
    double A = c * c * irx + s * s * iry;
    double B = 2.0 * dy * c * s * (irx - iry);
    double C = dy * dy * (s * s * irx + c * c * iry) - 1.0;
    double disc = B * B - 4.0 * A * C;
    if (disc < 0.0) return false;
    double sq = std::sqrt(disc);
    x0 = e.cx + (-B - sq) / (2.0 * A);
    x1 = e.cx + (-B + sq) / (2.0 * A);
    return true;
}

class ClassMap {
public:
    ClassMap(uint32_t extent) : extent_(extent), cells_(static_cast<size_t>(extent) * extent, 0) {}

    uint8_t at(uint32_t x, uint32_t y) const {
        return cells_[static_cast<size_t>(y) * extent_ + x];
    }

    void fill_ellipse(const Ellipse& e, uint8_t cls) {
        for_each_span(e, [&](uint32_t y, uint32_t x0, uint32_t x1) {
            std::memset(&cells_[static_cast<size_t>(y) * extent_ + x0], cls,
                        x1 - x0 + 1);
        });
    }

    // True when every covered pixel already holds one of `allowed`.
    bool ellipse_inside(const Ellipse& e,
                        std::initializer_list<uint8_t> allowed) const {
        bool ok = true;
        for_each_span(e, [&](uint32_t y, uint32_t x0, uint32_t x1) {
            if (!ok) return;
            const uint8_t* row = &cells_[static_cast<size_t>(y) * extent_];
            for (uint32_t x = x0; x <= x1; ++x) {
                bool match = false;
                for (uint8_t a : allowed)
                    if (row[x] == a) { match = true; break; }
                if (!match) { ok = false; return; }
            }
        });
        return ok;
    }

    // Requires the ellipse bounding box to stay inside the slide.
    bool ellipse_in_bounds(const Ellipse& e) const {
        double r = std::max(e.rx, e.ry);
        return e.cx - r >= 0.0 && e.cy - r >= 0.0 &&
               e.cx + r < static_cast<double>(extent_) &&
               e.cy + r < static_cast<double>(extent_);
    }

    const std::vector<uint8_t>& cells() const { return cells_; }
    std::vector<uint8_t> take_cells() { return std::move(cells_); }

private:
    template <typename Fn>
    void for_each_span(const Ellipse& e, Fn&& fn) const {
        double rmax = std::max(e.rx, e.ry);
        int64_t y_lo = std::max<int64_t>(0, static_cast<int64_t>(std::floor(e.cy - rmax)));
        int64_t y_hi = std::min<int64_t>(extent_ - 1, static_cast<int64_t>(std::ceil(e.cy + rmax)));
        for (int64_t y = y_lo; y <= y_hi; ++y) {
            double x0d, x1d;
            if (!ellipse_row_span(e, static_cast<double>(y), x0d, x1d)) continue;
            int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(x0d)));
            int64_t x1 = std::min<int64_t>(extent_ - 1, static_cast<int64_t>(std::floor(x1d)));
            if (x0 > x1) continue;
            fn(static_cast<uint32_t>(y), static_cast<uint32_t>(x0),
               static_cast<uint32_t>(x1));
        }
    }

    uint32_t extent_;
    std::vector<uint8_t> cells_;
};

Ellipse random_blob(const GenConfig& cfg, Rng& rng) {
    double r = cfg.min_radius + rng.uniform() * (cfg.max_radius - cfg.min_radius);
    double aspect = 0.6 + rng.uniform() * 0.4;
    double margin = std::max(r, 1.0) + 1.0;
    double span = static_cast<double>(cfg.extent) - 2.0 * margin;
    if (span <= 0.0) span = 1.0;
    Ellipse e;
    e.cx = margin + rng.uniform() * span;
    e.cy = margin + rng.uniform() * span;
    e.rx = r;
    e.ry = r * aspect;
    e.angle = rng.uniform() * M_PI;
    return e;
}

}  // namespace

RenderedSlide render_slide(const GenConfig& cfg, const Rng& parent,
                           const std::string& id, bool positive) {
    Rng rng = parent.split("slide/" + id);
    const uint32_t extent = cfg.extent;
    ClassMap map(extent);

    // Tissue region: a union of a few large ellipses around the center.
    uint32_t n_tissue = static_cast<uint32_t>(rng.uniform_int(2, 3));
    for (uint32_t i = 0; i < n_tissue; ++i) {
        Ellipse e;
        e.cx = extent * (0.35 + rng.uniform() * 0.30);
        e.cy = extent * (0.35 + rng.uniform() * 0.30);
        e.rx = extent * (0.20 + rng.uniform() * 0.12);
        e.ry = extent * (0.20 + rng.uniform() * 0.12);
        e.angle = rng.uniform() * M_PI;
        map.fill_ellipse(e, static_cast<uint8_t>(TextureClass::benign));
    }

    constexpr int kMaxAttempts = 200;
    auto place = [&](uint8_t cls, std::initializer_list<uint8_t> allowed) {
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            Ellipse e = random_blob(cfg, rng);
            if (!map.ellipse_in_bounds(e)) continue;
            if (!map.ellipse_inside(e, allowed)) continue;
            map.fill_ellipse(e, cls);
            return true;
        }
        return false;
    };

    RenderedSlide out;

    // Distractors first, lesions after, so lesion pixels are never
    // overwritten and the class map doubles as the exact lesion mask.
    uint32_t want_distractors = static_cast<uint32_t>(
        rng.uniform_int(cfg.min_distractors, cfg.max_distractors));
    for (uint32_t i = 0; i < want_distractors; ++i) {
        if (place(static_cast<uint8_t>(TextureClass::distractor),
                  {static_cast<uint8_t>(TextureClass::benign),
                   static_cast<uint8_t>(TextureClass::distractor)}))
            out.distractors++;
        else
            throw DataError("slide " + id +
                            ": could not place distractor blob after retries; "
                            "reduce blob count or radius");
    }
    if (positive) {
        uint32_t want_lesions = static_cast<uint32_t>(
            rng.uniform_int(cfg.min_lesions, cfg.max_lesions));
        want_lesions = std::max<uint32_t>(want_lesions, 1);
        for (uint32_t i = 0; i < want_lesions; ++i) {
            if (place(static_cast<uint8_t>(TextureClass::lesion),
                      {static_cast<uint8_t>(TextureClass::benign),
                       static_cast<uint8_t>(TextureClass::distractor),
                       static_cast<uint8_t>(TextureClass::lesion)}))
                out.lesions++;
            else if (out.lesions == 0 && i + 1 == want_lesions)
                throw DataError("slide " + id +
                                ": could not place a lesion blob after retries");
        }
    }

    // Texture rendering: class mean plus bounded pseudo-normal noise.
    TextureParams params[4] = {
        texture_params(TextureClass::background, cfg),
        texture_params(TextureClass::benign, cfg),
        texture_params(TextureClass::distractor, cfg),
        texture_params(TextureClass::lesion, cfg),
    };
    out.classes = map.take_cells();
    out.pixels.resize(static_cast<size_t>(extent) * extent * 3);
    Rng noise = rng.split("noise");
    for (size_t i = 0; i < out.classes.size(); ++i) {
        const TextureParams& p = params[out.classes[i]];
        uint8_t* px = &out.pixels[i * 3];
        for (int c = 0; c < 3; ++c) {
            double v = p.mean_rgb[c] + p.sigma * noise.gauss3();
            px[c] = static_cast<uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
        }
    }
    return out;
}

namespace {

struct FineHarvest {
    FinePatchEntry entry;
    std::vector<uint8_t> pixels;  // patch RGB + mask plane, interleaved x4
};

std::vector<FineHarvest> harvest_fine_patches(const GenConfig& cfg,
                                              const Rng& parent,
                                              const std::string& slide_id,
                                              uint32_t want) {
    RenderedSlide slide = render_slide(cfg, parent, slide_id, true);
    Rng rng = parent.split("fine/" + slide_id);
    const uint32_t extent = cfg.extent, ps = cfg.patch_size;
    const uint8_t lesion = static_cast<uint8_t>(TextureClass::lesion);

    // Coarse-grid sample of lesion pixels; patches are centered near one of
    // them so every harvested patch contains lesion pixels.
    std::vector<std::pair<uint32_t, uint32_t>> anchors;
    for (uint32_t y = 0; y < extent; y += 16)
        for (uint32_t x = 0; x < extent; x += 16)
            if (slide.classes[static_cast<size_t>(y) * extent + x] == lesion)
                anchors.push_back({x, y});
    if (anchors.empty())
        throw DataError("fine-pool slide " + slide_id + " has no lesion pixels");

    std::vector<FineHarvest> out;
    for (uint32_t i = 0; i < want; ++i) {
        const int kTries = 50;
        bool done = false;
        for (int t = 0; t < kTries && !done; ++t) {
            auto [sx, sy] = anchors[rng.uniform_below(anchors.size())];
            int64_t jx = rng.uniform_int(-(int64_t)ps / 4, (int64_t)ps / 4);
            int64_t jy = rng.uniform_int(-(int64_t)ps / 4, (int64_t)ps / 4);
            int64_t px = std::clamp<int64_t>((int64_t)sx - (int64_t)ps / 2 + jx, 0,
                                             (int64_t)extent - ps);
            int64_t py = std::clamp<int64_t>((int64_t)sy - (int64_t)ps / 2 + jy, 0,
                                             (int64_t)extent - ps);
            FineHarvest h;
            h.pixels.resize(static_cast<size_t>(ps) * ps * 4);
            size_t lesion_px = 0;
            for (uint32_t y = 0; y < ps; ++y) {
                for (uint32_t x = 0; x < ps; ++x) {
                    size_t src = (static_cast<size_t>(py + y) * extent + (px + x));
                    size_t dst = (static_cast<size_t>(y) * ps + x) * 4;
                    h.pixels[dst + 0] = slide.pixels[src * 3 + 0];
                    h.pixels[dst + 1] = slide.pixels[src * 3 + 1];
                    h.pixels[dst + 2] = slide.pixels[src * 3 + 2];
                    uint8_t m = slide.classes[src] == lesion ? 1 : 0;
                    h.pixels[dst + 3] = m;
                    lesion_px += m;
                }
            }
            if (lesion_px == 0) continue;
            h.entry.slide_id = slide_id;
            h.entry.x = static_cast<uint32_t>(px);
            h.entry.y = static_cast<uint32_t>(py);
            h.entry.size = ps;
            out.push_back(std::move(h));
            done = true;
        }
        if (!done)
            throw DataError("could not harvest a lesion patch from " + slide_id);
    }
    return out;
}

}  // namespace

std::vector<const SlideEntry*> DatasetManifest::split_slides(
    const std::string& split) const {
    std::vector<const SlideEntry*> out;
    for (const auto& s : slides)
        if (s.split == split) out.push_back(&s);
    return out;
}

DatasetManifest generate_synthetic_dataset(const GenConfig& cfg,
                                           const std::string& out_dir,
                                           unsigned workers,
                                           const ProgressFn& progress) {
    cfg.validate();
    ensure_dir(out_dir);
    ensure_dir(path_join(out_dir, "slides"));
    ensure_dir(path_join(out_dir, "fine"));

    Rng root(cfg.seed);

    DatasetManifest manifest;
    manifest.seed = cfg.seed;
    manifest.extent = cfg.extent;
    manifest.tile_size = cfg.tile_size;
    manifest.patch_size = cfg.patch_size;
    manifest.root = out_dir;

    auto plan_split = [&](const std::string& split, uint32_t count) {
        uint32_t n_pos = static_cast<uint32_t>(
            std::llround(static_cast<double>(count) * cfg.pos_fraction));
        for (uint32_t i = 0; i < count; ++i) {
            SlideEntry e;
            bool pos = i < n_pos;
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%s_%s_%04u", split.c_str(),
                          pos ? "pos" : "neg", i);
            e.id = buf;
            e.file = "slides/" + e.id + ".wsih";
            e.label = pos ? 1 : 0;
            e.split = split;
            manifest.slides.push_back(std::move(e));
        }
    };
    plan_split("train", cfg.train_slides);
    plan_split("test", cfg.test_slides);

    if (progress)
        progress("generating " + std::to_string(manifest.slides.size()) +
                 " slides at " + std::to_string(cfg.extent) + "px");

    // Slides are independent given the seed; render/write them in parallel.
    std::vector<std::pair<uint32_t, uint32_t>> blob_counts(manifest.slides.size());
    parallel_for(manifest.slides.size(), workers, [&](size_t i) {
        SlideEntry& e = manifest.slides[i];
        RenderedSlide r = render_slide(cfg, root, e.id, e.label == 1);
        blob_counts[i] = {r.lesions, r.distractors};
        write_slide_file(path_join(out_dir, e.file), cfg.extent, cfg.extent,
                         cfg.tile_size, 3, r.pixels);
    });
    for (size_t i = 0; i < manifest.slides.size(); ++i) {
        manifest.slides[i].lesions = blob_counts[i].first;
        manifest.slides[i].distractors = blob_counts[i].second;
    }

    // Fine-label patches come from a disjoint pool of positive slides that
    // exist only in memory; the manifest records their ids for provenance.
    if (cfg.fine_patches > 0) {
        if (progress)
            progress("harvesting " + std::to_string(cfg.fine_patches) +
                     " fine-label patches");
        const uint32_t per_slide = 4;
        uint32_t n_fine_slides = (cfg.fine_patches + per_slide - 1) / per_slide;
        std::vector<std::vector<FineHarvest>> harvests(n_fine_slides);
        parallel_for(n_fine_slides, workers, [&](size_t i) {
            uint32_t want = std::min(per_slide,
                                     cfg.fine_patches - static_cast<uint32_t>(i) * per_slide);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "fine_%04zu", i);
            harvests[i] = harvest_fine_patches(cfg, root, buf, want);
        });
        uint32_t idx = 0;
        for (auto& hs : harvests) {
            for (auto& h : hs) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "fine/patch_%04u.wsip", idx++);
                h.entry.file = buf;
                write_slide_file(path_join(out_dir, h.entry.file), h.entry.size,
                                 h.entry.size, h.entry.size, 4, h.pixels);
                manifest.fine_patches.push_back(h.entry);
            }
        }
    }

    // Digest covers every generated file in manifest order.
    uint64_t digest = 0xcbf29ce484222325ull;
    auto fold = [&](const std::string& rel) {
        std::string line = rel + ":" + hex64(file_digest(path_join(out_dir, rel))) + "\n";
        digest = fnv1a64(line.data(), line.size(), digest);
    };
    for (const auto& s : manifest.slides) fold(s.file);
    for (const auto& f : manifest.fine_patches) fold(f.file);
    manifest.digest = hex64(digest);

    json j;
    j["format"] = "wsihyb-dataset";
    j["version"] = 1;
    j["seed"] = cfg.seed;
    j["extent"] = cfg.extent;
    j["tile_size"] = cfg.tile_size;
    j["patch_size"] = cfg.patch_size;
    j["dataset_digest"] = manifest.digest;
    j["gen"] = {
        {"train_slides", cfg.train_slides},
        {"test_slides", cfg.test_slides},
        {"pos_fraction", cfg.pos_fraction},
        {"fine_patches", cfg.fine_patches},
        {"min_distractors", cfg.min_distractors},
        {"max_distractors", cfg.max_distractors},
        {"min_lesions", cfg.min_lesions},
        {"max_lesions", cfg.max_lesions},
        {"min_radius", cfg.min_radius},
        {"max_radius", cfg.max_radius},
        {"noise_scale", cfg.noise_scale},
        {"distractor_shift", cfg.distractor_shift},
    };
    j["slides"] = json::array();
    for (const auto& s : manifest.slides)
        j["slides"].push_back({{"id", s.id},
                               {"file", s.file},
                               {"label", s.label},
                               {"split", s.split},
                               {"lesions", s.lesions},
                               {"distractors", s.distractors}});
    j["fine_patches"] = json::array();
    for (const auto& f : manifest.fine_patches)
        j["fine_patches"].push_back({{"slide_id", f.slide_id},
                                     {"file", f.file},
                                     {"x", f.x},
                                     {"y", f.y},
                                     {"size", f.size}});
    write_text_file(path_join(out_dir, "manifest.json"), j.dump(2) + "\n");
    return manifest;
}

DatasetManifest load_manifest(const std::string& dataset_dir) {
    std::string path = path_join(dataset_dir, "manifest.json");
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw DataError("cannot parse " + path + ": " + e.what());
    }
    try {
        if (j.at("format") != "wsihyb-dataset")
            throw DataError("not a wsihyb dataset manifest: " + path);
        DatasetManifest m;
        m.root = dataset_dir;
        m.seed = j.at("seed").get<uint64_t>();
        m.extent = j.at("extent").get<uint32_t>();
        m.tile_size = j.at("tile_size").get<uint32_t>();
        m.patch_size = j.at("patch_size").get<uint32_t>();
        m.digest = j.at("dataset_digest").get<std::string>();
        for (const auto& s : j.at("slides")) {
            SlideEntry e;
            e.id = s.at("id").get<std::string>();
            e.file = s.at("file").get<std::string>();
            e.label = s.at("label").get<int>();
            e.split = s.at("split").get<std::string>();
            e.lesions = s.value("lesions", 0u);
            e.distractors = s.value("distractors", 0u);
            m.slides.push_back(std::move(e));
        }
        for (const auto& f : j.at("fine_patches")) {
            FinePatchEntry e;
            e.slide_id = f.at("slide_id").get<std::string>();
            e.file = f.at("file").get<std::string>();
            e.x = f.at("x").get<uint32_t>();
            e.y = f.at("y").get<uint32_t>();
            e.size = f.at("size").get<uint32_t>();
            m.fine_patches.push_back(std::move(e));
        }
        return m;
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + path + ": " + e.what());
    }
}

}  // namespace wsihyb
