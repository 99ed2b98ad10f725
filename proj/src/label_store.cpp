#include "wsihyb/label_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <tuple>

namespace wsihyb {

namespace {
constexpr char kRepoMagic[4] = {'W', 'S', 'I', 'R'};
constexpr uint16_t kRepoVersion = 1;

// Plane encodings in the repository file.
constexpr uint8_t kPlaneExplicit = 0;
constexpr uint8_t kPlaneZero = 1;

std::string pool_key(const PatchRef& ref, uint32_t round) {
    return ref.slide_id + "|" + std::to_string(ref.x) + "|" +
           std::to_string(ref.y) + "|" + std::to_string(round);
}
}  // namespace

std::vector<double> PseudoLabelMap::dense(size_t n) const {
    std::vector<double> out(n, 0.0);
    if (!values.empty())
        for (size_t i = 0; i < n; ++i) out[i] = dequantize_label(values[i]);
    return out;
}

double PseudoLabelMap::max_value() const {
    if (values.empty()) return 0.0;
    return dequantize_label(*std::max_element(values.begin(), values.end()));
}

bool filter_patch_by_max(std::span<const double> prob_map, double t) {
    if (prob_map.empty()) throw DataError("empty probability map");
    double mx = *std::max_element(prob_map.begin(), prob_map.end());
    return mx >= t;
}

PseudoLabelMap reweight_positive(std::span<const double> prob_map, double v_scale,
                                 const PatchRef& ref, uint32_t round) {
    if (v_scale < 1.0) throw UsageError("re-weighting constant must be >= 1");
    PseudoLabelMap out;
    out.ref = ref;
    out.provenance = Provenance::positive_reweighted;
    out.round = round;
    out.values.resize(prob_map.size());
    for (size_t i = 0; i < prob_map.size(); ++i) {
        double scaled = prob_map[i] * v_scale;
        double v = scaled < 0.01 ? 0.0 : std::min(scaled, 1.0);
        out.values[i] = quantize_label(v);
    }
    return out;
}

PseudoLabelMap make_hard_negative(const PatchRef& ref, SlideLabel slide_label,
                                  uint32_t round) {
    if (slide_label != SlideLabel::negative)
        throw DataError("hard negative requested for a positive slide: " +
                        ref.slide_id);
    PseudoLabelMap out;
    out.ref = ref;
    out.provenance = Provenance::hard_negative;
    out.round = round;
    return out;
}

// ---------------------------------------------------------------------------

void LabelRepository::register_key(const PatchRef& ref, uint32_t round) {
    auto [it, inserted] = keys_.emplace(pool_key(ref, round), 0);
    if (!inserted)
        throw DataError("duplicate repository key: " + pool_key(ref, round));
}

void LabelRepository::add_fine(PixelMask mask) {
    if (mask.mask.size() != static_cast<size_t>(mask.ref.size) * mask.ref.size)
        throw DataError("fine mask dimensions do not match its patch");
    register_key(mask.ref, 0);
    fine_.push_back(std::move(mask));
}

void LabelRepository::add_pseudo(PseudoLabelMap map) {
    if (map.provenance == Provenance::fine)
        throw DataError("pseudo pools do not accept fine provenance");
    if (!map.values.empty() &&
        map.values.size() != static_cast<size_t>(map.ref.size) * map.ref.size)
        throw DataError("pseudo map dimensions do not match its patch");
    if (map.provenance == Provenance::hard_negative) {
        for (uint16_t q : map.values)
            if (q != 0) throw DataError("hard negative map contains nonzero values");
    }
    register_key(map.ref, map.round);
    if (map.provenance == Provenance::positive_reweighted)
        pos_.push_back(std::move(map));
    else
        neg_.push_back(std::move(map));
}

void LabelRepository::drop_rounds_before(uint32_t round) {
    auto drop = [&](std::vector<PseudoLabelMap>& pool) {
        std::erase_if(pool, [&](const PseudoLabelMap& m) {
            if (m.round < round) {
                keys_.erase(pool_key(m.ref, m.round));
                return true;
            }
            return false;
        });
    };
    drop(pos_);
    drop(neg_);
}

LabelRepository::InvariantReport LabelRepository::verify_invariants(
    double t, double v_scale) const {
    InvariantReport rep;
    auto flag = [&](const std::string& what) {
        rep.violations++;
        if (rep.first_violation.empty()) rep.first_violation = what;
    };
    const bool saturating = t * v_scale >= 1.0;
    for (const auto& m : pos_) {
        rep.checked++;
        if (m.values.empty()) {
            flag("positive map without values: " + pool_key(m.ref, m.round));
            continue;
        }
        uint16_t mx = *std::max_element(m.values.begin(), m.values.end());
        // Kept patches have pre-reweight max >= t, so t*v >= 1 forces the
        // argmax pixel to clip to exactly 1.0.
        if (saturating && mx != quantize_label(1.0))
            flag("positive map does not reach 1.0: " + pool_key(m.ref, m.round));
        for (uint16_t q : m.values) {
            double v = dequantize_label(q);
            if (v < 0.0 || v > 1.0) {
                flag("value out of range in " + pool_key(m.ref, m.round));
                break;
            }
        }
    }
    for (const auto& m : neg_) {
        rep.checked++;
        if (m.max_value() != 0.0)
            flag("hard negative not identically zero: " + pool_key(m.ref, m.round));
    }
    return rep;
}

void LabelRepository::save(const std::string& path) const {
    BinaryWriter out(path);
    out.bytes(kRepoMagic, 4);
    out.u16(kRepoVersion);
    out.u64(fine_.size());
    out.u64(pos_.size());
    out.u64(neg_.size());

    auto write_ref = [&](const PatchRef& ref, uint32_t round, uint8_t prov) {
        out.u16(static_cast<uint16_t>(ref.slide_id.size()));
        out.bytes(ref.slide_id.data(), ref.slide_id.size());
        out.u32(ref.x);
        out.u32(ref.y);
        out.u32(ref.size);
        out.u32(round);
        out.u8(prov);
    };

    for (const auto& m : fine_) {
        write_ref(m.ref, 0, static_cast<uint8_t>(Provenance::fine));
        out.u8(kPlaneExplicit);
        for (uint8_t b : m.mask) out.u16(b ? quantize_label(1.0) : 0);
    }
    auto write_pseudo = [&](const PseudoLabelMap& m) {
        write_ref(m.ref, m.round, static_cast<uint8_t>(m.provenance));
        if (m.values.empty()) {
            out.u8(kPlaneZero);
        } else {
            out.u8(kPlaneExplicit);
            for (uint16_t q : m.values) out.u16(q);
        }
    };
    for (const auto& m : pos_) write_pseudo(m);
    for (const auto& m : neg_) write_pseudo(m);
    out.u64(0);  // reserved trailer
    out.close();
}

LabelRepository LabelRepository::load(const std::string& path) {
    BinaryReader in(path);
    char magic[4];
    in.bytes(magic, 4);
    if (std::memcmp(magic, kRepoMagic, 4) != 0) in.fail("bad repository magic");
    uint16_t version = in.u16();
    if (version != kRepoVersion)
        in.fail("unsupported repository version " + std::to_string(version));
    uint64_t n_fine = in.u64(), n_pos = in.u64(), n_neg = in.u64();

    LabelRepository repo;
    auto read_entry = [&](Provenance expect_kind) {
        uint16_t id_len = in.u16();
        if (id_len > 4096) in.fail("implausible slide id length");
        std::string id(id_len, '\0');
        in.bytes(id.data(), id_len);
        PatchRef ref;
        ref.slide_id = std::move(id);
        ref.x = in.u32();
        ref.y = in.u32();
        ref.size = in.u32();
        uint32_t round = in.u32();
        uint8_t prov = in.u8();
        if (prov != static_cast<uint8_t>(expect_kind) &&
            !(expect_kind != Provenance::fine && prov != 0))
            in.fail("unexpected provenance tag");
        uint8_t plane_kind = in.u8();
        size_t n = static_cast<size_t>(ref.size) * ref.size;
        if (ref.size == 0 || ref.size > 1u << 16) in.fail("implausible patch size");
        std::vector<uint16_t> values;
        if (plane_kind == kPlaneExplicit) {
            values.resize(n);
            for (size_t i = 0; i < n; ++i) values[i] = in.u16();
        } else if (plane_kind != kPlaneZero) {
            in.fail("unknown plane encoding " + std::to_string(plane_kind));
        }
        return std::tuple<PatchRef, uint32_t, uint8_t, std::vector<uint16_t>>(
            std::move(ref), round, prov, std::move(values));
    };

    for (uint64_t i = 0; i < n_fine; ++i) {
        auto [ref, round, prov, values] = read_entry(Provenance::fine);
        if (prov != static_cast<uint8_t>(Provenance::fine))
            in.fail("fine pool entry with wrong provenance");
        PixelMask m;
        m.ref = std::move(ref);
        m.mask.resize(values.size());
        for (size_t k = 0; k < values.size(); ++k) m.mask[k] = values[k] ? 1 : 0;
        repo.add_fine(std::move(m));
    }
    auto read_pseudo = [&](uint64_t count, Provenance kind) {
        for (uint64_t i = 0; i < count; ++i) {
            auto [ref, round, prov, values] = read_entry(kind);
            if (prov != static_cast<uint8_t>(kind))
                in.fail("pool entry with wrong provenance");
            PseudoLabelMap m;
            m.ref = std::move(ref);
            m.provenance = kind;
            m.round = round;
            m.values = std::move(values);
            repo.add_pseudo(std::move(m));
        }
    };
    read_pseudo(n_pos, Provenance::positive_reweighted);
    read_pseudo(n_neg, Provenance::hard_negative);
    in.u64();  // reserved trailer
    return repo;
}

}  // namespace wsihyb
