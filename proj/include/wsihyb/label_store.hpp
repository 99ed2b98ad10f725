#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "wsihyb/common.hpp"
#include "wsihyb/slide_store.hpp"

namespace wsihyb {

// Soft labels are stored as 16-bit fixed point (v * 65535 rounded); the
// quantization step of ~1.5e-5 is far below the 0.01 clip granularity of
// the re-weighting rule. Clip comparisons happen on the scaled value
// before quantization.
inline constexpr double kLabelScale = 65535.0;

inline uint16_t quantize_label(double v) {
    return static_cast<uint16_t>(std::llround(v * kLabelScale));
}
inline double dequantize_label(uint16_t q) {
    return static_cast<double>(q) / kLabelScale;
}

enum class Provenance : uint8_t {
    fine = 0,
    positive_reweighted = 1,
    hard_negative = 2,
};

struct PixelMask {
    PatchRef ref;
    std::vector<uint8_t> mask;  // ref.size^2 entries, values 0/1
};

struct PseudoLabelMap {
    PatchRef ref;
    Provenance provenance = Provenance::positive_reweighted;
    uint32_t round = 0;
    // Quantized soft values; empty means identically zero (the invariant
    // form of hard negatives, which avoids materializing all-zero planes).
    std::vector<uint16_t> values;

    double value_at(size_t i) const {
        return values.empty() ? 0.0 : dequantize_label(values[i]);
    }
    std::vector<double> dense(size_t n) const;
    double max_value() const;
};

// keep iff max(prob_map) >= T; the paper's removal rule is a strict
// "less than T".
bool filter_patch_by_max(std::span<const double> prob_map, double t);

// Per pixel: 0 when v*V < 0.01, else min(v*V, 1.0).
PseudoLabelMap reweight_positive(std::span<const double> prob_map, double v_scale,
                                 const PatchRef& ref, uint32_t round);

// All-zero map for a kept patch of a negative slide. Calling this for a
// positive slide is a pipeline bug and throws.
PseudoLabelMap make_hard_negative(const PatchRef& ref, SlideLabel slide_label,
                                  uint32_t round);

// ---------------------------------------------------------------------------

// Pools keyed by (slide_id, x, y, round); duplicate keys are rejected.
// The fine pool is immutable across rounds; pseudo pools are replaced
// per round by the pipeline.
class LabelRepository {
public:
    void add_fine(PixelMask mask);
    void add_pseudo(PseudoLabelMap map);
    void drop_rounds_before(uint32_t round);

    const std::vector<PixelMask>& fine_pool() const { return fine_; }
    const std::vector<PseudoLabelMap>& pseudo_pos_pool() const { return pos_; }
    const std::vector<PseudoLabelMap>& hard_neg_pool() const { return neg_; }

    size_t total_entries() const { return fine_.size() + pos_.size() + neg_.size(); }

    // Checks the stored pools against the label rules: positive maps reach
    // exactly 1.0 at their maximum when t*v >= 1, hard negatives are
    // identically zero, values stay in range.
    struct InvariantReport {
        size_t checked = 0;
        size_t violations = 0;
        std::string first_violation;
    };
    InvariantReport verify_invariants(double t, double v_scale) const;

    void save(const std::string& path) const;
    static LabelRepository load(const std::string& path);

private:
    void register_key(const PatchRef& ref, uint32_t round);

    std::vector<PixelMask> fine_;
    std::vector<PseudoLabelMap> pos_;
    std::vector<PseudoLabelMap> neg_;
    std::unordered_map<std::string, uint8_t> keys_;
};

}  // namespace wsihyb
