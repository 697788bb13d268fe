#include "triage/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "triage/errors.hpp"
#include "triage/parallel.hpp"
#include "triage/rng.hpp"

namespace triage {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// The oracle below re-derives every feature from first principles on the
// rasterized masks. It pins the default extraction parameters; regenerate the
// ground truth if those defaults ever move.
constexpr double kShellDepthMm = 15.0;
constexpr double kHilarRadiusMm = 25.0;
constexpr double kRoundednessMin = 0.5;
constexpr double kLateralityMinCm3 = 1.0;
constexpr double kFocalDiameterMm = 30.0;
constexpr double kSoftTissueHu = 40.0;

double snap8(double v) { return std::round(v * 8.0) / 8.0; }

double usnap(Rng& rng, const std::array<double, 2>& r) { return snap8(rng.uniform(r[0], r[1])); }

int uint_in(Rng& rng, const std::array<int, 2>& r) {
    return r[0] + static_cast<int>(rng.below(static_cast<std::uint64_t>(r[1] - r[0] + 1)));
}

// Counter-based unit Gaussian: a pure function of (seed, voxel), so the noise
// field is identical no matter how the volume is traversed.
double gaussian01(std::uint64_t seed, std::int64_t i) {
    const std::uint64_t k = static_cast<std::uint64_t>(i);
    const std::uint64_t a = splitmix64(seed ^ splitmix64(2 * k + 1));
    const std::uint64_t b = splitmix64(seed ^ splitmix64(2 * k + 2));
    const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;       // [0, 1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

bool inside_ellipsoid(const std::array<double, 3>& p, const std::array<double, 3>& c,
                      const std::array<double, 3>& r) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = (p[i] - c[i]) / r[i];
        s += d * d;
    }
    return s <= 1.0;
}

void check_spec(const PhantomSpec& spec) {
    for (int i = 0; i < 3; ++i) {
        if (spec.dims[i] < 4) throw Error(Errc::bad_config, "phantom dims must be >= 4 per axis");
        if (!(spec.spacing_mm[i] > 0)) throw Error(Errc::bad_config, "phantom spacing must be > 0");
    }
    for (const auto& lung : spec.lungs)
        for (double r : lung.radii_mm)
            if (!(r > 0)) throw Error(Errc::bad_config, "lung radii must be > 0");
    if (!(spec.left_lobe_split > 0.0 && spec.left_lobe_split < 1.0))
        throw Error(Errc::bad_config, "left_lobe_split must be in (0,1)");
    if (!(spec.right_lobe_splits[0] > 0.0 && spec.right_lobe_splits[0] < spec.right_lobe_splits[1] &&
          spec.right_lobe_splits[1] < 1.0))
        throw Error(Errc::bad_config, "right_lobe_splits must be increasing within (0,1)");
    if (spec.noise_sigma_hu < 0) throw Error(Errc::bad_config, "noise_sigma_hu must be >= 0");
    for (std::size_t li = 0; li < spec.lesions.size(); ++li) {
        const auto& l = spec.lesions[li];
        if (l.texture != 1 && l.texture != 2)
            throw Error(Errc::bad_config, "lesion texture must be 1 (GGO) or 2 (consolidation)");
        for (double r : l.radii_mm)
            if (!(r > 0)) throw Error(Errc::bad_config, "lesion radii must be > 0");
        if (l.activation < 0.0 || l.activation > 1.0)
            throw Error(Errc::bad_config, "lesion activation must be in [0,1]");
    }
}

// --- rasterizer ----------------------------------------------------------

CaseBundle rasterize(const PhantomSpec& spec) {
    CaseBundle b;
    b.case_id = spec.case_id;
    b.label = spec.label;
    b.volume = make_grid<std::int16_t>(spec.dims, spec.spacing_mm);
    b.lungs = make_grid<std::uint8_t>(spec.dims, spec.spacing_mm);
    b.lobes = make_grid<std::uint8_t>(spec.dims, spec.spacing_mm);
    b.abnormality = make_grid<std::uint8_t>(spec.dims, spec.spacing_mm);
    b.texture = make_grid<std::uint8_t>(spec.dims, spec.spacing_mm);
    b.activation = make_grid<float>(spec.dims, spec.spacing_mm);

    const auto& dims = spec.dims;
    const auto& sp = spec.spacing_mm;
    std::vector<double> level(b.volume.voxels.size(), kSoftTissueHu);

    // lungs + lobes; voxel sample points sit at cell centres
    std::int64_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i) {
                const std::array<double, 3> p = {(x + 0.5) * sp[0], (y + 0.5) * sp[1],
                                                 (z + 0.5) * sp[2]};
                for (int k = 0; k < 2; ++k) {
                    const PhantomLung& L = spec.lungs[static_cast<std::size_t>(k)];
                    if (!inside_ellipsoid(p, L.center_mm, L.radii_mm)) continue;
                    b.lungs.voxels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(k + 1);
                    const double frac =
                        (p[2] - (L.center_mm[2] - L.radii_mm[2])) / (2.0 * L.radii_mm[2]);
                    std::uint8_t lobe;
                    if (k == 0)
                        lobe = frac < spec.left_lobe_split ? 1 : 2;
                    else
                        lobe = frac < spec.right_lobe_splits[0]
                                   ? 3
                                   : (frac < spec.right_lobe_splits[1] ? 4 : 5);
                    b.lobes.voxels[static_cast<std::size_t>(i)] = lobe;
                    level[static_cast<std::size_t>(i)] = spec.parenchyma_hu;
                    break;
                }
            }

    // lesions, in listed order (later lesions overwrite)
    for (std::size_t li = 0; li < spec.lesions.size(); ++li) {
        const PhantomLesion& l = spec.lesions[li];
        int lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, static_cast<int>(std::floor((l.center_mm[a] - l.radii_mm[a]) / sp[a] - 0.5)) - 1);
            hi[a] = std::min(dims[a] - 1,
                             static_cast<int>(std::ceil((l.center_mm[a] + l.radii_mm[a]) / sp[a])) + 1);
        }
        for (int z = lo[2]; z <= hi[2]; ++z)
            for (int y = lo[1]; y <= hi[1]; ++y)
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    const std::array<double, 3> p = {(x + 0.5) * sp[0], (y + 0.5) * sp[1],
                                                     (z + 0.5) * sp[2]};
                    if (!inside_ellipsoid(p, l.center_mm, l.radii_mm)) continue;
                    const std::size_t idx = static_cast<std::size_t>(b.volume.index(x, y, z));
                    if (b.lungs.voxels[idx] == 0)
                        throw Error(Errc::lesion_outside_lungs,
                                    spec.case_id + ": lesion " + std::to_string(li) +
                                        " has voxels outside the lungs");
                    b.abnormality.voxels[idx] = 1;
                    b.texture.voxels[idx] = static_cast<std::uint8_t>(l.texture);
                    b.activation.voxels[idx] = static_cast<float>(l.activation);
                    level[idx] = l.hu_level;
                }
    }

    for (std::size_t v = 0; v < level.size(); ++v) {
        double hu = level[v];
        if (spec.noise_sigma_hu > 0)
            hu += gaussian01(spec.seed, static_cast<std::int64_t>(v)) * spec.noise_sigma_hu;
        const long long q = std::llround(hu);
        b.volume.voxels[v] = static_cast<std::int16_t>(std::clamp<long long>(q, -32768, 32767));
    }
    return b;
}

// --- per-voxel oracle ----------------------------------------------------

int window_of(int hu) {
    if (hu >= -1000 && hu <= -950) return 0;
    if (hu > -950 && hu <= -600) return 1;
    if (hu > -600 && hu <= -250) return 2;
    return -1;
}

// A lung voxel belongs to the shell iff some non-lung voxel lies within
// depth_mm. The nearest non-lung voxel always has a lung 6-neighbour, so
// stamping metric balls around boundary voxels finds exactly that set.
std::vector<std::uint8_t> oracle_shell(const CaseBundle& b) {
    const auto& dims = b.lungs.header.dims;
    const auto& sp = b.lungs.header.spacing_mm;
    const std::int64_t n = b.lungs.header.voxel_count();
    const double d2max = kShellDepthMm * kShellDepthMm;

    std::vector<std::array<int, 3>> ball;
    const int rx = static_cast<int>(std::floor(kShellDepthMm / sp[0]));
    const int ry = static_cast<int>(std::floor(kShellDepthMm / sp[1]));
    const int rz = static_cast<int>(std::floor(kShellDepthMm / sp[2]));
    for (int dz = -rz; dz <= rz; ++dz)
        for (int dy = -ry; dy <= ry; ++dy)
            for (int dx = -rx; dx <= rx; ++dx) {
                const double d2 = dx * sp[0] * (dx * sp[0]) + dy * sp[1] * (dy * sp[1]) +
                                  dz * sp[2] * (dz * sp[2]);
                if (d2 <= d2max) ball.push_back({dx, dy, dz});
            }

    std::vector<std::uint8_t> near_false(static_cast<std::size_t>(n), 0);
    std::int64_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i) {
                if (b.lungs.voxels[static_cast<std::size_t>(i)]) continue;
                bool boundary = false;
                const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                      {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                for (const auto& d : nb) {
                    const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] || ny >= dims[1] ||
                        nz >= dims[2])
                        continue;
                    if (b.lungs.voxels[static_cast<std::size_t>(b.lungs.index(nx, ny, nz))]) {
                        boundary = true;
                        break;
                    }
                }
                if (!boundary) continue;
                for (const auto& d : ball) {
                    const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] || ny >= dims[1] ||
                        nz >= dims[2])
                        continue;
                    near_false[static_cast<std::size_t>(b.lungs.index(nx, ny, nz))] = 1;
                }
            }

    std::vector<std::uint8_t> shell(static_cast<std::size_t>(n), 0);
    for (std::int64_t v = 0; v < n; ++v)
        shell[static_cast<std::size_t>(v)] = b.lungs.voxels[static_cast<std::size_t>(v)] &&
                                                     near_false[static_cast<std::size_t>(v)]
                                                 ? 1
                                                 : 0;

    // hilar cylinder carve-out around the lung centroid axis
    std::int64_t sum_x = 0, sum_y = 0, count = 0;
    i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i)
                if (b.lungs.voxels[static_cast<std::size_t>(i)]) {
                    sum_x += x;
                    sum_y += y;
                    ++count;
                }
    if (count > 0) {
        const double cx = static_cast<double>(sum_x) / static_cast<double>(count) * sp[0];
        const double cy = static_cast<double>(sum_y) / static_cast<double>(count) * sp[1];
        const double r2 = kHilarRadiusMm * kHilarRadiusMm;
        i = 0;
        for (int z = 0; z < dims[2]; ++z)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[0]; ++x, ++i) {
                    const double dx = x * sp[0] - cx;
                    const double dy = y * sp[1] - cy;
                    if (dx * dx + dy * dy <= r2) shell[static_cast<std::size_t>(i)] = 0;
                }
    }
    return shell;
}

// Flood-fill components ordered largest-first (ties by first voxel), each
// voxel list ascending.
std::vector<std::vector<std::int64_t>> oracle_components(const std::vector<std::uint8_t>& mask,
                                                         const std::array<int, 3>& dims) {
    const std::int64_t n =
        static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
    const std::int64_t sx = 1, sy = dims[0],
                       sz = static_cast<std::int64_t>(dims[0]) * dims[1];
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(n), 0);
    std::vector<std::vector<std::int64_t>> comps;
    std::vector<std::int64_t> stack;
    for (std::int64_t start = 0; start < n; ++start) {
        if (!mask[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)]) continue;
        std::vector<std::int64_t> comp;
        stack.assign(1, start);
        seen[static_cast<std::size_t>(start)] = 1;
        while (!stack.empty()) {
            const std::int64_t cur = stack.back();
            stack.pop_back();
            comp.push_back(cur);
            const int x = static_cast<int>(cur % sy);
            const int y = static_cast<int>((cur / sy) % dims[1]);
            const int z = static_cast<int>(cur / sz);
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0 && dz == 0) continue;
                        const int nx = x + dx, ny = y + dy, nz = z + dz;
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] || ny >= dims[1] ||
                            nz >= dims[2])
                            continue;
                        const std::int64_t ni = nx * sx + ny * sy + nz * sz;
                        if (!mask[static_cast<std::size_t>(ni)] || seen[static_cast<std::size_t>(ni)])
                            continue;
                        seen[static_cast<std::size_t>(ni)] = 1;
                        stack.push_back(ni);
                    }
        }
        std::sort(comp.begin(), comp.end());
        comps.push_back(std::move(comp));
    }
    std::sort(comps.begin(), comps.end(), [](const auto& a, const auto& b2) {
        if (a.size() != b2.size()) return a.size() > b2.size();
        return a.front() < b2.front();
    });
    return comps;
}

double oracle_axial_diameter(const std::vector<std::int64_t>& comp, const VolumeHeader& h) {
    const auto& dims = h.dims;
    const auto& sp = h.spacing_mm;
    const std::int64_t plane = static_cast<std::int64_t>(dims[0]) * dims[1];
    double best = 0.0;
    std::size_t a0 = 0;
    while (a0 < comp.size()) {
        const int z = static_cast<int>(comp[a0] / plane);
        std::size_t a1 = a0;
        while (a1 < comp.size() && static_cast<int>(comp[a1] / plane) == z) ++a1;
        for (std::size_t a = a0; a < a1; ++a)
            for (std::size_t b = a + 1; b < a1; ++b) {
                const std::int64_t ra = comp[a] % plane, rb = comp[b] % plane;
                const double dx = (static_cast<int>(ra % dims[0]) - static_cast<int>(rb % dims[0])) * sp[0];
                const double dy = (static_cast<int>(ra / dims[0]) - static_cast<int>(rb / dims[0])) * sp[1];
                const double d2 = dx * dx + dy * dy;
                if (d2 > best) best = d2;
            }
        a0 = a1;
    }
    return std::sqrt(best) + std::sqrt(sp[0] * sp[0] + sp[1] * sp[1]);
}

std::array<double, 3> oracle_eigenvalues(const std::array<std::array<double, 3>, 3>& m) {
    const double a00 = m[0][0], a11 = m[1][1], a22 = m[2][2];
    const double a01 = m[0][1], a02 = m[0][2], a12 = m[1][2];
    const double p1 = a01 * a01 + a02 * a02 + a12 * a12;
    std::array<double, 3> eig;
    if (p1 == 0.0) {
        eig = {a00, a11, a22};
    } else {
        const double q = (a00 + a11 + a22) / 3.0;
        const double p2 = (a00 - q) * (a00 - q) + (a11 - q) * (a11 - q) + (a22 - q) * (a22 - q) +
                          2.0 * p1;
        const double p = std::sqrt(p2 / 6.0);
        const double b00 = (a00 - q) / p, b11 = (a11 - q) / p, b22 = (a22 - q) / p;
        const double b01 = a01 / p, b02 = a02 / p, b12 = a12 / p;
        double r = (b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) +
                    b02 * (b01 * b12 - b11 * b02)) / 2.0;
        r = std::clamp(r, -1.0, 1.0);
        const double phi = std::acos(r) / 3.0;
        eig[0] = q + 2.0 * p * std::cos(phi);
        eig[2] = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
        eig[1] = 3.0 * q - eig[0] - eig[2];
    }
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

double oracle_roundedness(const std::vector<std::int64_t>& comp, const VolumeHeader& h) {
    const auto& dims = h.dims;
    const auto& sp = h.spacing_mm;
    const std::int64_t plane = static_cast<std::int64_t>(dims[0]) * dims[1];
    const double n = static_cast<double>(comp.size());

    double mean[3] = {0, 0, 0};
    for (std::int64_t idx : comp) {
        const int z = static_cast<int>(idx / plane);
        const std::int64_t rem = idx % plane;
        mean[0] += (rem % dims[0]) * sp[0];
        mean[1] += (rem / dims[0]) * sp[1];
        mean[2] += z * sp[2];
    }
    for (double& m : mean) m /= n;

    std::array<std::array<double, 3>, 3> cov{};
    for (std::int64_t idx : comp) {
        const int z = static_cast<int>(idx / plane);
        const std::int64_t rem = idx % plane;
        const double c[3] = {(rem % dims[0]) * sp[0] - mean[0], (rem / dims[0]) * sp[1] - mean[1],
                             z * sp[2] - mean[2]};
        for (int a = 0; a < 3; ++a)
            for (int b = a; b < 3; ++b) cov[a][b] += c[a] * c[b];
    }
    for (int a = 0; a < 3; ++a)
        for (int b = a; b < 3; ++b) {
            cov[a][b] /= n;
            cov[b][a] = cov[a][b];
        }

    std::array<double, 3> eig = oracle_eigenvalues(cov);
    std::array<double, 3> floors = {sp[0] / 2.0, sp[1] / 2.0, sp[2] / 2.0};
    std::sort(floors.begin(), floors.end(), std::greater<double>());
    double semi_max = 0.0, semi_min = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double semi = std::max(std::sqrt(5.0 * std::max(eig[i], 0.0)), floors[i]);
        if (i == 0) semi_max = semi;
        if (i == 2) semi_min = semi;
    }
    return semi_min / semi_max;
}

FeatureVector oracle_features(const CaseBundle& b) {
    const auto& schema = FeatureSchema::v1();
    const auto& dims = b.volume.header.dims;
    const double vox_cm3 = b.volume.header.voxel_volume_mm3() / 1000.0;

    const std::vector<std::uint8_t> shell = oracle_shell(b);

    std::int64_t structure[kStructureCount] = {};
    std::int64_t window[kStructureCount][kHuWindowCount] = {};
    std::int64_t abn[kStructureCount] = {};
    std::int64_t tex[2][kStructureCount] = {};
    std::int64_t shell_abn = 0, lung_slices = 0, abn_slices = 0;
    double activation_sum = 0.0;

    std::int64_t i = 0;
    for (int z = 0; z < dims[2]; ++z) {
        bool any_lung = false, any_abn = false;
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i) {
                const std::size_t idx = static_cast<std::size_t>(i);
                activation_sum += b.activation.voxels[idx];
                const std::uint8_t lung = b.lungs.voxels[idx];
                if (lung == 0) continue;
                any_lung = true;
                const int w = window_of(b.volume.voxels[idx]);
                const std::uint8_t ab = b.abnormality.voxels[idx];
                const std::uint8_t tx = b.texture.voxels[idx];
                if (ab > 0) any_abn = true;
                int structures[3];
                int ns = 0;
                structures[ns++] = 0;                       // both lungs
                structures[ns++] = lung == 1 ? 1 : 2;       // left / right
                const std::uint8_t lobe = b.lobes.voxels[idx];
                if (lobe >= 1 && lobe <= 5) structures[ns++] = 2 + lobe;  // lobe1..lobe5
                for (int s = 0; s < ns; ++s) {
                    const int si = structures[s];
                    ++structure[si];
                    if (w >= 0) ++window[si][w];
                    if (ab > 0) {
                        ++abn[si];
                        if (tx >= 1 && tx <= 2) ++tex[tx - 1][si];
                    }
                }
                if (ab > 0 && shell[idx]) ++shell_abn;
            }
        if (any_lung) ++lung_slices;
        if (any_abn) ++abn_slices;
    }

    std::vector<std::uint8_t> abn_mask(b.abnormality.voxels.size()), ggo_mask(b.texture.voxels.size());
    for (std::size_t v = 0; v < abn_mask.size(); ++v) {
        abn_mask[v] = b.abnormality.voxels[v] > 0 && b.lungs.voxels[v] > 0 ? 1 : 0;
        ggo_mask[v] = b.texture.voxels[v] == 1 && b.lungs.voxels[v] > 0 ? 1 : 0;
    }
    const auto abn_comps = oracle_components(abn_mask, dims);
    const auto ggo_comps = oracle_components(ggo_mask, dims);

    auto vol = [&](std::int64_t count) { return static_cast<double>(count) * vox_cm3; };
    auto ratio = [](std::int64_t part, std::int64_t whole) {
        return whole > 0 ? 100.0 * static_cast<double>(part) / static_cast<double>(whole) : 0.0;
    };

    FeatureVector out;
    out.case_id = b.case_id;
    out.label = b.label;
    out.values.reserve(static_cast<std::size_t>(schema.size()));

    for (int s = 0; s < kStructureCount; ++s) {
        out.values.push_back(vol(structure[s]));
        for (int w = 0; w < kHuWindowCount; ++w) {
            out.values.push_back(vol(window[s][w]));
            out.values.push_back(ratio(window[s][w], structure[s]));
        }
    }

    for (int s = 0; s < kStructureCount; ++s) {
        out.values.push_back(vol(abn[s]));
        out.values.push_back(ratio(abn[s], structure[s]));
    }
    out.values.push_back(lung_slices > 0
                             ? static_cast<double>(abn_slices) / static_cast<double>(lung_slices)
                             : 0.0);
    out.values.push_back(activation_sum);
    double avw = 0.0;
    for (const auto& comp : abn_comps) {
        double act = 0.0;
        for (std::int64_t idx : comp) act += b.activation.voxels[static_cast<std::size_t>(idx)];
        const double cvol = static_cast<double>(comp.size()) * vox_cm3;
        avw += cvol * (act / static_cast<double>(comp.size()));
    }
    out.values.push_back(avw);

    for (int cls = 0; cls < 2; ++cls)
        for (int s = 0; s < kStructureCount; ++s) {
            out.values.push_back(vol(tex[cls][s]));
            out.values.push_back(ratio(tex[cls][s], structure[s]));
        }
    for (int cls = 0; cls < 2; ++cls)
        out.values.push_back(abn[0] > 0 ? static_cast<double>(tex[cls][0]) /
                                              static_cast<double>(abn[0])
                                        : 0.0);

    bool focal = false;
    for (const auto& comp : ggo_comps)
        if (oracle_axial_diameter(comp, b.volume.header) < kFocalDiameterMm &&
            oracle_roundedness(comp, b.volume.header) >= kRoundednessMin) {
            focal = true;
            break;
        }
    out.values.push_back(focal ? 1.0 : 0.0);
    const double left_vol = vol(abn[1]);
    const double right_vol = vol(abn[2]);
    const bool l = left_vol > kLateralityMinCm3;
    const bool r = right_vol > kLateralityMinCm3;
    out.values.push_back(l && !r ? 1.0 : 0.0);
    out.values.push_back(r && !l ? 1.0 : 0.0);
    out.values.push_back(l && r ? 1.0 : 0.0);
    out.values.push_back(ratio(shell_abn, abn[0]));
    return out;
}

// --- lesion placement ----------------------------------------------------

bool contained(const std::array<double, 3>& center, const std::array<double, 3>& radii,
               const PhantomLung& lung) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = (std::abs(center[i] - lung.center_mm[i]) + radii[i]) / lung.radii_mm[i];
        s += d * d;
    }
    return s <= 1.0;
}

// Subpleural sphere: start on the lung surface at height fraction w and
// azimuth a_deg around the outward axis, then step inward along the surface
// normal until the sphere fits.
PhantomLesion make_peripheral(const PhantomLung& lung, double out_sign, double w, double a_deg,
                              double r, int tex, double hu, double act) {
    const double g = std::sqrt(std::max(1.0 - w * w, 0.0));
    const double a = a_deg * M_PI / 180.0;
    const std::array<double, 3>& R = lung.radii_mm;
    const std::array<double, 3> surf = {g * R[0] * out_sign * std::cos(a),
                                        g * R[1] * std::sin(a), w * R[2]};
    std::array<double, 3> nrm = {surf[0] / (R[0] * R[0]), surf[1] / (R[1] * R[1]),
                                 surf[2] / (R[2] * R[2])};
    const double len = std::sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]);
    for (double& v : nrm) v /= len;

    for (double margin = 2.5; margin <= 20.0; margin += 1.5) {
        std::array<double, 3> c;
        for (int i = 0; i < 3; ++i) c[i] = lung.center_mm[i] + surf[i] - (r + margin) * nrm[i];
        if (contained(c, {r, r, r}, lung)) {
            PhantomLesion l;
            l.texture = tex;
            l.center_mm = c;
            l.radii_mm = {r, r, r};
            l.hu_level = hu;
            l.activation = act;
            l.peripheral = true;
            return l;
        }
    }
    throw Error(Errc::lesion_outside_lungs, "no subpleural placement fits");
}

// Central sphere near the lung core at height fraction w.
PhantomLesion make_central(const PhantomLung& lung, double w, double dir_x, double dir_y,
                           double s_mag, double r, int tex, double hu, double act) {
    for (double shrink = 1.0; shrink >= 0.0; shrink -= 0.25) {
        const std::array<double, 3> c = {lung.center_mm[0] + shrink * s_mag * lung.radii_mm[0] * dir_x,
                                         lung.center_mm[1] + shrink * s_mag * lung.radii_mm[1] * dir_y,
                                         lung.center_mm[2] + shrink * w * lung.radii_mm[2]};
        if (contained(c, {r, r, r}, lung)) {
            PhantomLesion l;
            l.texture = tex;
            l.center_mm = c;
            l.radii_mm = {r, r, r};
            l.hu_level = hu;
            l.activation = act;
            l.peripheral = false;
            return l;
        }
    }
    throw Error(Errc::lesion_outside_lungs, "no central placement fits");
}

// --- corpus draws --------------------------------------------------------

PhantomSpec base_spec(Rng& rng, const CorpusRanges& R) {
    PhantomSpec s;
    s.lungs[0] = {{24.0, 48.0, 50.0}, {22.0, 30.0, 40.0}};
    s.lungs[1] = {{72.0, 48.0, 50.0}, {22.0, 30.0, 40.0}};
    for (int k = 0; k < 2; ++k)
        for (int a = 0; a < 3; ++a)
            s.lungs[static_cast<std::size_t>(k)].radii_mm[static_cast<std::size_t>(a)] +=
                usnap(rng, R.lung_radius_jitter_mm);
    s.parenchyma_hu = usnap(rng, R.parenchyma_hu);
    s.noise_sigma_hu = usnap(rng, R.noise_sigma_hu);
    return s;
}

// sign patterns that spread lesions within one lung
constexpr double kWSign[4] = {1.0, -1.0, 1.0, -1.0};
constexpr double kASign[4] = {1.0, -1.0, -1.0, 1.0};

void add_peripheral_ggo(PhantomSpec& s, Rng& rng, const CorpusRanges& R, int lung_k, int j) {
    const PhantomLung& lung = s.lungs[static_cast<std::size_t>(lung_k)];
    const double out_sign = lung_k == 0 ? -1.0 : 1.0;
    const double w = kWSign[j % 4] * rng.uniform(0.08, 0.52);
    const double a = kASign[j % 4] * rng.uniform(8.0, 58.0);
    const double r = usnap(rng, R.ggo_radius_mm);
    s.lesions.push_back(make_peripheral(lung, out_sign, w, a, r, 1, usnap(rng, R.ggo_hu),
                                        usnap(rng, R.covid_activation)));
}

PhantomSpec draw_standard(CaseLabel label, Rng& rng, const CorpusRanges& R) {
    PhantomSpec s = base_spec(rng, R);
    s.label = label;
    if (label == CaseLabel::covid) {
        const double sub = rng.uniform();
        if (sub < 0.55) {
            // classic: subpleural GGO in both lungs, sometimes with a small
            // consolidation so a zero consolidation load does not mark the class
            for (int k = 0; k < 2; ++k) {
                const int cnt = uint_in(rng, R.covid_lesions_per_lung);
                for (int j = 0; j < cnt; ++j) add_peripheral_ggo(s, rng, R, k, j);
            }
            if (rng.below(2)) {
                const int side = static_cast<int>(rng.below(2));
                const double w = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.12, 0.45);
                const double a = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(8.0, 58.0);
                s.lesions.push_back(make_peripheral(s.lungs[static_cast<std::size_t>(side)],
                                                    side == 0 ? -1.0 : 1.0, w, a,
                                                    usnap(rng, {5.5, 7.5}), 2,
                                                    usnap(rng, R.consolidation_hu),
                                                    usnap(rng, R.covid_activation)));
            }
        } else if (sub < 0.70) {
            // early: one subpleural and one core GGO per lung
            for (int k = 0; k < 2; ++k) {
                add_peripheral_ggo(s, rng, R, k, 0);
                const PhantomLung& lung = s.lungs[static_cast<std::size_t>(k)];
                const double w = (k == 0 ? -1.0 : 1.0) * rng.uniform(0.10, 0.40);
                const double phi = rng.uniform(0.0, 2.0 * M_PI);
                const double r = usnap(rng, {6.5, 9.0});
                s.lesions.push_back(make_central(lung, w, std::cos(phi), std::sin(phi),
                                                 rng.uniform(0.0, 0.15), r, 1,
                                                 usnap(rng, R.ggo_hu),
                                                 usnap(rng, R.covid_activation)));
            }
        } else {
            // mixed texture: classic pattern plus one subpleural consolidation
            for (int k = 0; k < 2; ++k)
                for (int j = 0; j < 2; ++j) add_peripheral_ggo(s, rng, R, k, j);
            const int side = static_cast<int>(rng.below(2));
            const PhantomLung& lung = s.lungs[static_cast<std::size_t>(side)];
            const double w = rng.uniform(-0.45, 0.45);
            const double a = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(8.0, 58.0);
            const double r = usnap(rng, {7.5, 10.0});
            s.lesions.push_back(make_peripheral(lung, side == 0 ? -1.0 : 1.0, w, a, r, 2,
                                                usnap(rng, R.consolidation_hu),
                                                usnap(rng, R.covid_activation)));
        }
    } else {
        // Three of the subpopulations below are deliberate covid mimics: each
        // matches the covid pattern on two of the three class axes (laterality,
        // radial placement, texture balance) and differs on the third, so every
        // axis is individually load-bearing for the classifier.
        const double sub = rng.uniform();
        if (sub < 0.30) {
            // lobar consolidation, one side, often with an incidental core GGO —
            // keeps the GGO-volume marginals of the two classes overlapping
            const int side = static_cast<int>(rng.below(2));
            const PhantomLung& lung = s.lungs[static_cast<std::size_t>(side)];
            const int cnt = uint_in(rng, R.other_lesions);
            for (int j = 0; j < cnt; ++j) {
                const double w = (j % 2 ? 1.0 : -1.0) * rng.uniform(0.10, 0.38);
                const double phi = rng.uniform(0.0, 2.0 * M_PI);
                s.lesions.push_back(make_central(lung, w, std::cos(phi), std::sin(phi),
                                                 rng.uniform(0.0, 0.20),
                                                 usnap(rng, R.consolidation_radius_mm), 2,
                                                 usnap(rng, R.consolidation_hu),
                                                 usnap(rng, R.other_activation)));
            }
            if (rng.below(2)) {
                const double w = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.10, 0.40);
                const double phi = rng.uniform(0.0, 2.0 * M_PI);
                s.lesions.push_back(make_central(lung, w, std::cos(phi), std::sin(phi),
                                                 rng.uniform(0.0, 0.15), usnap(rng, {5.5, 8.0}),
                                                 1, usnap(rng, R.ggo_hu),
                                                 usnap(rng, R.other_activation)));
            }
        } else if (sub < 0.50) {
            // laterality mimic: unilateral peripheral pneumonia with covid-like
            // texture balance and lesion load; only the bilateral flag differs
            const int side = static_cast<int>(rng.below(2));
            const PhantomLung& lung = s.lungs[static_cast<std::size_t>(side)];
            const double out_sign = side == 0 ? -1.0 : 1.0;
            const int cnt = uint_in(rng, R.covid_lesions_per_lung);
            for (int j = 0; j < cnt; ++j) {
                const double w = kWSign[j % 4] * rng.uniform(0.08, 0.52);
                const double a = kASign[j % 4] * rng.uniform(8.0, 58.0);
                s.lesions.push_back(make_peripheral(lung, out_sign, w, a,
                                                    usnap(rng, R.ggo_radius_mm), 1,
                                                    usnap(rng, R.ggo_hu),
                                                    usnap(rng, R.covid_activation)));
            }
            const double w = kWSign[cnt % 4] * rng.uniform(0.10, 0.48);
            const double a = kASign[cnt % 4] * rng.uniform(8.0, 58.0);
            s.lesions.push_back(make_peripheral(lung, out_sign, w, a, usnap(rng, {7.5, 10.0}),
                                                2, usnap(rng, R.consolidation_hu),
                                                usnap(rng, R.covid_activation)));
        } else if (sub < 0.65) {
            // texture mimic: bilateral subpleural-plus-core consolidation with a
            // covid-like footprint but no GGO; only the dominance axis differs
            const int extra = static_cast<int>(rng.below(2));
            for (int k = 0; k < 2; ++k) {
                const PhantomLung& lung = s.lungs[static_cast<std::size_t>(k)];
                const double w = (k ? 1.0 : -1.0) * rng.uniform(0.10, 0.45);
                const double a = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(8.0, 58.0);
                s.lesions.push_back(make_peripheral(lung, k == 0 ? -1.0 : 1.0, w, a,
                                                    usnap(rng, {6.5, 7.5}), 2,
                                                    usnap(rng, R.consolidation_hu),
                                                    usnap(rng, R.covid_activation)));
                if (k == extra) {
                    const double phi = rng.uniform(0.0, 2.0 * M_PI);
                    s.lesions.push_back(make_central(lung, -w * 0.8, std::cos(phi),
                                                     std::sin(phi), rng.uniform(0.15, 0.45),
                                                     usnap(rng, {5.5, 6.5}), 2,
                                                     usnap(rng, R.consolidation_hu),
                                                     usnap(rng, R.covid_activation)));
                }
            }
        } else if (sub < 0.85) {
            // placement mimic: bilateral core GGO plus one core consolidation,
            // texture balance and volumes in the covid range; only the
            // peripheral fraction differs
            const int cons_side = static_cast<int>(rng.below(2));
            for (int k = 0; k < 2; ++k) {
                const PhantomLung& lung = s.lungs[static_cast<std::size_t>(k)];
                for (int j = 0; j < 2; ++j) {
                    const double w = (j ? 1.0 : -1.0) * rng.uniform(0.12, 0.45);
                    const double phi = rng.uniform(0.0, 2.0 * M_PI);
                    s.lesions.push_back(make_central(lung, w, std::cos(phi), std::sin(phi),
                                                     rng.uniform(0.15, 0.55),
                                                     usnap(rng, R.ggo_radius_mm), 1,
                                                     usnap(rng, R.ggo_hu),
                                                     usnap(rng, R.covid_activation)));
                }
                if (k == cons_side) {
                    const double phi = rng.uniform(0.0, 2.0 * M_PI);
                    s.lesions.push_back(make_central(lung, rng.uniform(-0.10, 0.10),
                                                     std::cos(phi), std::sin(phi),
                                                     rng.uniform(0.10, 0.40),
                                                     usnap(rng, {7.5, 10.0}), 2,
                                                     usnap(rng, R.consolidation_hu),
                                                     usnap(rng, R.covid_activation)));
                }
            }
        } else {
            // GGO-rich pneumonia: several core GGO, usually with a core
            // consolidation, one side; GGO load spans the covid range
            const int side = static_cast<int>(rng.below(2));
            const PhantomLung& lung = s.lungs[static_cast<std::size_t>(side)];
            const int cnt = 4 + static_cast<int>(rng.below(3));
            for (int j = 0; j < cnt; ++j) {
                const double w = (j % 2 ? 1.0 : -1.0) * rng.uniform(0.12, 0.45);
                const double phi = rng.uniform(0.0, 2.0 * M_PI);
                s.lesions.push_back(make_central(lung, w, std::cos(phi), std::sin(phi),
                                                 rng.uniform(0.15, 0.55), usnap(rng, {6.0, 9.5}),
                                                 1, usnap(rng, R.ggo_hu),
                                                 usnap(rng, R.other_activation)));
            }
            if (rng.below(3)) {
                const double phi = rng.uniform(0.0, 2.0 * M_PI);
                s.lesions.push_back(make_central(lung, rng.uniform(-0.10, 0.10), std::cos(phi),
                                                 std::sin(phi), rng.uniform(0.0, 0.15),
                                                 usnap(rng, {8.0, 10.0}), 2,
                                                 usnap(rng, R.consolidation_hu),
                                                 usnap(rng, R.other_activation)));
            }
        }
    }
    return s;
}

// Both classes get the same lesion load; only the radial placement differs.
PhantomSpec draw_shape_signal(CaseLabel label, Rng& rng, const CorpusRanges& R) {
    PhantomSpec s = base_spec(rng, R);
    s.label = label;
    for (int k = 0; k < 2; ++k) {
        const PhantomLung& lung = s.lungs[static_cast<std::size_t>(k)];
        for (int j = 0; j < 2; ++j) {
            const double w = (j == 0 ? -1.0 : 1.0) * rng.uniform(0.12, 0.42);
            const double r = usnap(rng, {5.5, 8.0});
            const double hu = usnap(rng, R.ggo_hu);
            const double act = usnap(rng, R.covid_activation);
            if (label == CaseLabel::covid) {
                const double a = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(5.0, 55.0);
                s.lesions.push_back(
                    make_peripheral(lung, k == 0 ? -1.0 : 1.0, w, a, r, 1, hu, act));
            } else {
                const double phi = rng.uniform(0.0, 2.0 * M_PI);
                s.lesions.push_back(make_central(lung, w, std::cos(phi), std::sin(phi),
                                                 rng.uniform(0.0, 0.08), r, 1, hu, act));
            }
        }
    }
    return s;
}

bool witness_ok(CorpusProfile profile, CaseLabel label, const FeatureVector& gt) {
    const auto& schema = FeatureSchema::v1();
    static const int ip = schema.index_of("peripheral_ratio");
    static const int ib = schema.index_of("bilateral");
    static const int ig = schema.index_of("GGO_dominance");
    const double periph = gt.values[static_cast<std::size_t>(ip)] / 100.0;
    const double bilat = gt.values[static_cast<std::size_t>(ib)];
    const double gdom = gt.values[static_cast<std::size_t>(ig)];
    if (profile == CorpusProfile::standard) {
        const double score = bilat + periph + gdom;
        return label == CaseLabel::covid ? score >= 2.2 : score <= 1.8;
    }
    // shape_signal: identical load both classes, so require the placement
    // contrast and bilateral involvement everywhere
    if (bilat != 1.0) return false;
    return label == CaseLabel::covid ? periph >= 0.60 : periph <= 0.30;
}

} // namespace

// --- public API ----------------------------------------------------------

std::vector<double> ground_truth_tolerances() {
    const auto& schema = FeatureSchema::v1();
    std::vector<double> tol(static_cast<std::size_t>(schema.size()), 0.0);
    tol[static_cast<std::size_t>(schema.index_of("peripheral_ratio"))] = 2.0;
    return tol;
}

PhantomSpec default_phantom_spec(CaseLabel label, std::uint64_t seed) {
    PhantomSpec s;
    s.case_id = label == CaseLabel::covid ? "phantom_covid" : "phantom_other";
    s.label = label;
    s.seed = seed;
    s.lungs[0] = {{24.0, 48.0, 50.0}, {22.0, 30.0, 40.0}};
    s.lungs[1] = {{72.0, 48.0, 50.0}, {22.0, 30.0, 40.0}};
    if (label == CaseLabel::covid) {
        const double w[4] = {0.30, -0.30, -0.30, 0.30};
        const double a[4] = {-25.0, 25.0, -25.0, 25.0};
        for (int j = 0; j < 4; ++j) {
            const int k = j / 2;
            s.lesions.push_back(make_peripheral(s.lungs[static_cast<std::size_t>(k)],
                                                k == 0 ? -1.0 : 1.0, w[j], a[j], 7.0, 1, -675.0,
                                                0.75));
        }
    } else {
        PhantomLesion l;
        l.texture = 2;
        l.center_mm = s.lungs[1].center_mm;
        l.radii_mm = {9.0, 10.0, 11.0};
        l.hu_level = -50.0;
        l.activation = 0.5;
        l.peripheral = false;
        s.lesions.push_back(l);
    }
    return s;
}

std::pair<CaseBundle, GroundTruth> generate_case(const PhantomSpec& spec) {
    check_spec(spec);
    CaseBundle bundle = rasterize(spec);
    GroundTruth gt;
    gt.label = spec.label;
    gt.expected = oracle_features(bundle);
    gt.tolerance = ground_truth_tolerances();
    return {std::move(bundle), std::move(gt)};
}

const char* corpus_profile_token(CorpusProfile p) {
    switch (p) {
        case CorpusProfile::standard: return "standard";
        case CorpusProfile::shape_signal: return "shape_signal";
    }
    return "?";
}

CorpusProfile parse_corpus_profile(const std::string& token) {
    if (token == "standard") return CorpusProfile::standard;
    if (token == "shape_signal") return CorpusProfile::shape_signal;
    throw Error(Errc::bad_config,
                "unknown corpus profile '" + token + "' (expected standard|shape_signal)");
}

std::vector<std::pair<CaseBundle, GroundTruth>> generate_corpus_bundles(
    int n, double class_mix, std::uint64_t seed, const CorpusRanges& ranges, CorpusProfile profile) {
    if (n < 2) throw Error(Errc::bad_config, "corpus size must be >= 2");
    if (!(class_mix >= 0.0 && class_mix <= 1.0))
        throw Error(Errc::bad_config, "class_mix must be in [0,1]");
    const std::int64_t n_covid = std::llround(static_cast<double>(n) * class_mix);
    if (n_covid <= 0 || n_covid >= n)
        throw Error(Errc::bad_config, "class_mix must leave both classes non-empty");

    // Each case depends only on seed + index, so cases generate independently in
    // parallel; exceptions are parked per slot and rethrown in case order.
    std::vector<std::pair<CaseBundle, GroundTruth>> out(static_cast<std::size_t>(n));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    parallel_for_chunks(n, [&](std::int64_t i64) {
        const int i = static_cast<int>(i64);
        try {
            const std::int64_t lo = static_cast<std::int64_t>(i) * n_covid / n;
            const std::int64_t hi = (static_cast<std::int64_t>(i) + 1) * n_covid / n;
            const CaseLabel label = hi - lo == 1 ? CaseLabel::covid : CaseLabel::other;
            const std::uint64_t case_seed = seed + static_cast<std::uint64_t>(i);

            char buf[32];
            std::snprintf(buf, sizeof buf, "case_%04d", i);

            Rng rng(case_seed);
            bool placed = false;
            for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
                PhantomSpec spec;
                try {
                    spec = profile == CorpusProfile::standard ? draw_standard(label, rng, ranges)
                                                              : draw_shape_signal(label, rng, ranges);
                } catch (const Error& e) {
                    if (e.code() != Errc::lesion_outside_lungs) throw;
                    continue;
                }
                spec.case_id = buf;
                spec.seed = case_seed;
                auto cg = generate_case(spec);
                if (!witness_ok(profile, label, cg.second.expected)) continue;
                out[static_cast<std::size_t>(i)] = std::move(cg);
                placed = true;
            }
            if (!placed)
                throw Error(Errc::degenerate_data,
                            std::string(buf) + ": no acceptable geometry after 64 attempts");
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

Corpus generate_corpus(int n, double class_mix, std::uint64_t seed, const CorpusRanges& ranges,
                       CorpusProfile profile, const std::string& out_dir) {
    auto bundles = generate_corpus_bundles(n, class_mix, seed, ranges, profile);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error(Errc::io_error, out_dir + ": " + ec.message());

    Corpus corpus;
    corpus.ground_truth.schema_version = FeatureSchema::v1().version();
    json jcases = json::array();
    for (auto& [bundle, gt] : bundles) {
        const std::string rel = bundle.case_id + "/manifest.json";
        save_case(bundle, (fs::path(out_dir) / bundle.case_id).string());
        corpus.cases.push_back({bundle.case_id, gt.label, rel});
        corpus.ground_truth.rows.push_back(gt.expected);
        jcases.push_back({{"case_id", bundle.case_id},
                          {"label", case_label_name(gt.label)},
                          {"manifest", rel}});
    }
    save_feature_table(corpus.ground_truth, (fs::path(out_dir) / "ground_truth.csv").string());

    json j;
    j["n"] = n;
    j["class_mix"] = class_mix;
    j["seed"] = seed;
    j["profile"] = corpus_profile_token(profile);
    j["schema_version"] = corpus.ground_truth.schema_version;
    j["cases"] = std::move(jcases);
    std::ofstream out(fs::path(out_dir) / "corpus.json", std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write corpus.json in " + out_dir);
    out << j.dump(2) << "\n";
    return corpus;
}

// The standard corpus plants three class axes: laterality, radial placement,
// and texture balance.  Only the first two have a unique feature expression;
// the texture axis can surface as either GGO_dominance or its exact complement
// consolidation_dominance (they induce identical splits), so neither twin is
// part of the designated contract.
std::vector<std::string> corpus_signal_features(CorpusProfile profile) {
    if (profile == CorpusProfile::standard) return {"peripheral_ratio", "bilateral"};
    return {"peripheral_ratio"};
}

} // namespace triage
