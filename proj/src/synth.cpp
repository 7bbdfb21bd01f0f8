#include "volformer/synth.hpp"

#include "volformer/error.hpp"
#include "volformer/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace volformer {

void SynthConfig::validate() const {
    if (n_pairs < 1) fail(ErrorKind::config, "n_pairs must be >= 1");
    if (depth < 1 || height < 8 || width < 8) {
        fail(ErrorKind::config, "synthetic volume geometry must be at least 1x8x8");
    }
    if (!(lesion_delta >= 0.0) || !(noise_sd >= 0.0)) {
        fail(ErrorKind::config, "lesion_delta and noise_sd must be >= 0");
    }
}

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

struct SubjectDraw {
    RegionInfo region;
    Volume volume;
};

// One subject's volume: smooth random background + Gaussian noise, plus the
// lesion delta inside the ellipsoid when `apply_lesion` is set. The region is
// drawn for every subject so controls carry a phantom region too.
SubjectDraw draw_subject(const SynthConfig& cfg, SeededRng& rng, bool apply_lesion) {
    const std::int64_t d = cfg.depth, h = cfg.height, w = cfg.width;
    SubjectDraw out;
    auto span = [&](double lo, double hi) { return lo + (hi - lo) * rng.next_double(); };
    out.region.center = {span(0.25 * d, 0.75 * d), span(0.25 * h, 0.75 * h),
                         span(0.25 * w, 0.75 * w)};
    out.region.radii = {std::max(1.0, span(0.15 * d, 0.25 * d)),
                        std::max(2.0, span(0.08 * h, 0.14 * h)),
                        std::max(2.0, span(0.08 * w, 0.14 * w))};
    out.region.applied = apply_lesion;

    const double phase_y = rng.next_double(), phase_x = rng.next_double(),
                 phase_z = rng.next_double();
    const double freq_y = static_cast<double>(1 + rng.next_below(2));
    const double freq_x = static_cast<double>(1 + rng.next_below(2));

    const auto& c = out.region.center;
    const auto& r = out.region.radii;
    out.volume.depth = d;
    out.volume.height = h;
    out.volume.width = w;
    out.volume.voxels = Tensor({d, h, w});
    float* vox = out.volume.voxels.data.data();
    for (std::int64_t z = 0; z < d; ++z) {
        const double fz = 0.05 * std::sin(kTau * (static_cast<double>(z) / d + phase_z));
        for (std::int64_t y = 0; y < h; ++y) {
            const double fy = std::sin(kTau * (freq_y * static_cast<double>(y) / h + phase_y));
            for (std::int64_t x = 0; x < w; ++x) {
                const double fx = std::cos(kTau * (freq_x * static_cast<double>(x) / w + phase_x));
                double v = 0.45 + 0.08 * fy * fx + fz + cfg.noise_sd * rng.next_normal();
                if (apply_lesion) {
                    const double dz = (static_cast<double>(z) - c[0]) / r[0];
                    const double dy = (static_cast<double>(y) - c[1]) / r[1];
                    const double dx = (static_cast<double>(x) - c[2]) / r[2];
                    if (dz * dz + dy * dy + dx * dx <= 1.0) v += cfg.lesion_delta;
                }
                *vox++ = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

std::string pair_id(const char* prefix, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d", prefix, index);
    return buf;
}

} // namespace

SynthDataset synthesize_cohort(const SynthConfig& cfg) {
    cfg.validate();
    SeededRng rng(cfg.seed);
    SynthDataset ds;
    const char* ethnicities[3] = {"A", "B", "C"};
    for (int p = 0; p < cfg.n_pairs; ++p) {
        const std::string sex = rng.next_below(2) == 0 ? "M" : "F";
        const std::string ethnicity = ethnicities[rng.next_below(3)];
        const double base_age = 45.0 + 30.0 * rng.next_double();
        const double base_bmi = 20.0 + 15.0 * rng.next_double();
        for (int side = 0; side < 2; ++side) {
            Subject s;
            s.id = pair_id(side == 0 ? "case" : "ctrl", p);
            s.label = side == 0 ? 1 : 0;
            s.sex = sex;
            s.ethnicity = ethnicity;
            // Jitter stays well inside the matching calipers (5 y, 3 BMI) and
            // is drawn identically for both labels.
            s.age = base_age + 1.0 * (2.0 * rng.next_double() - 1.0);
            s.bmi = base_bmi + 0.75 * (2.0 * rng.next_double() - 1.0);
            s.volume_path = "volumes/" + s.id + ".nta";
            SubjectDraw draw = draw_subject(cfg, rng, side == 0 && cfg.lesion_delta > 0.0);
            ds.manifest.regions[s.id] = draw.region;
            ds.manifest.subjects.push_back(std::move(s));
            ds.volumes.push_back(std::move(draw.volume));
        }
    }
    return ds;
}

double region_mean(const Volume& v, const RegionInfo& region) {
    const auto& c = region.center;
    const auto& r = region.radii;
    double sum = 0.0;
    std::int64_t count = 0;
    const std::int64_t z0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(c[0] - r[0]));
    const std::int64_t z1 = std::min<std::int64_t>(v.depth - 1, static_cast<std::int64_t>(c[0] + r[0]) + 1);
    const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(c[1] - r[1]));
    const std::int64_t y1 = std::min<std::int64_t>(v.height - 1, static_cast<std::int64_t>(c[1] + r[1]) + 1);
    const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(c[2] - r[2]));
    const std::int64_t x1 = std::min<std::int64_t>(v.width - 1, static_cast<std::int64_t>(c[2] + r[2]) + 1);
    for (std::int64_t z = z0; z <= z1; ++z) {
        for (std::int64_t y = y0; y <= y1; ++y) {
            for (std::int64_t x = x0; x <= x1; ++x) {
                const double dz = (static_cast<double>(z) - c[0]) / r[0];
                const double dy = (static_cast<double>(y) - c[1]) / r[1];
                const double dx = (static_cast<double>(x) - c[2]) / r[2];
                if (dz * dz + dy * dy + dx * dx <= 1.0) {
                    sum += static_cast<double>(v.voxels.at(z, y, x));
                    ++count;
                }
            }
        }
    }
    if (count == 0) fail(ErrorKind::value, "region contains no voxels");
    return sum / static_cast<double>(count);
}

} // namespace volformer
