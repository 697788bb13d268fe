#include "triage/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "triage/parallel.hpp"

namespace triage {

static constexpr double kInf = std::numeric_limits<double>::infinity();

StructuringElement make_structuring_element(double radius_mm,
                                            const std::array<double, 3>& spacing_mm) {
    if (radius_mm < 0) throw Error(Errc::negative_radius, "radius_mm < 0");
    StructuringElement se;
    se.radius_mm = radius_mm;
    const double r2 = radius_mm * radius_mm;
    const int nx = static_cast<int>(radius_mm / spacing_mm[0]);
    const int ny = static_cast<int>(radius_mm / spacing_mm[1]);
    const int nz = static_cast<int>(radius_mm / spacing_mm[2]);
    for (int dz = -nz; dz <= nz; ++dz)
        for (int dy = -ny; dy <= ny; ++dy)
            for (int dx = -nx; dx <= nx; ++dx) {
                const double d2 = dx * spacing_mm[0] * (dx * spacing_mm[0]) +
                                  dy * spacing_mm[1] * (dy * spacing_mm[1]) +
                                  dz * spacing_mm[2] * (dz * spacing_mm[2]);
                if (d2 <= r2) se.offsets.push_back({dx, dy, dz});
            }
    return se;
}

// --- squared Euclidean distance transform --------------------------------
//
// Felzenszwalb-Huttenlocher lower-envelope transform, one pass per axis with
// the axis spacing folded into the parabola weight. Each pass parallelizes
// over independent lines; outputs do not depend on the thread count.

namespace {

struct Dt1dScratch {
    std::vector<double> f, d, z;
    std::vector<int> v;
    void resize(int n) {
        f.resize(n);
        d.resize(n);
        z.resize(n + 1);
        v.resize(n);
    }
};

void dt1d(int n, double w2, const double* f, double* d, int* v, double* z) {
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        double s = 0.0;
        while (k >= 0) {
            const int p = v[k];
            s = ((f[q] + w2 * q * q) - (f[p] + w2 * p * p)) / (2.0 * w2 * (q - p));
            if (s <= z[k]) --k; else break;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
        } else {
            ++k;
            v[k] = q;
            z[k] = s;
        }
        z[k + 1] = kInf;
    }
    if (k < 0) {
        for (int q = 0; q < n; ++q) d[q] = kInf;
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double dq = static_cast<double>(q - v[j]);
        d[q] = w2 * dq * dq + f[v[j]];
    }
}

} // namespace

std::vector<double> squared_distance_to_true(const BinaryMask& mask) {
    const auto& dims = mask.header.dims;
    const auto& sp = mask.header.spacing_mm;
    const std::int64_t n = mask.header.voxel_count();
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        dist[static_cast<std::size_t>(i)] = mask.voxels[static_cast<std::size_t>(i)] ? 0.0 : kInf;

    const std::int64_t sx = 1;
    const std::int64_t sy = dims[0];
    const std::int64_t sz = static_cast<std::int64_t>(dims[0]) * dims[1];

    // pass along X: lines indexed by (y,z)
    parallel_for_chunks(static_cast<std::int64_t>(dims[1]) * dims[2], [&](std::int64_t line) {
        thread_local Dt1dScratch s;
        s.resize(dims[0]);
        const std::int64_t base = line * sy;
        for (int i = 0; i < dims[0]; ++i) s.f[i] = dist[static_cast<std::size_t>(base + i * sx)];
        dt1d(dims[0], sp[0] * sp[0], s.f.data(), s.d.data(), s.v.data(), s.z.data());
        for (int i = 0; i < dims[0]; ++i) dist[static_cast<std::size_t>(base + i * sx)] = s.d[i];
    });

    // pass along Y: lines indexed by (x,z)
    parallel_for_chunks(static_cast<std::int64_t>(dims[0]) * dims[2], [&](std::int64_t line) {
        thread_local Dt1dScratch s;
        s.resize(dims[1]);
        const std::int64_t x = line % dims[0];
        const std::int64_t z = line / dims[0];
        const std::int64_t base = x + z * sz;
        for (int i = 0; i < dims[1]; ++i) s.f[i] = dist[static_cast<std::size_t>(base + i * sy)];
        dt1d(dims[1], sp[1] * sp[1], s.f.data(), s.d.data(), s.v.data(), s.z.data());
        for (int i = 0; i < dims[1]; ++i) dist[static_cast<std::size_t>(base + i * sy)] = s.d[i];
    });

    // pass along Z: lines indexed by (x,y)
    parallel_for_chunks(static_cast<std::int64_t>(dims[0]) * dims[1], [&](std::int64_t line) {
        thread_local Dt1dScratch s;
        s.resize(dims[2]);
        const std::int64_t base = line;
        for (int i = 0; i < dims[2]; ++i) s.f[i] = dist[static_cast<std::size_t>(base + i * sz)];
        dt1d(dims[2], sp[2] * sp[2], s.f.data(), s.d.data(), s.v.data(), s.z.data());
        for (int i = 0; i < dims[2]; ++i) dist[static_cast<std::size_t>(base + i * sz)] = s.d[i];
    });

    return dist;
}

BinaryMask dilate(const BinaryMask& mask, double radius_mm) {
    if (radius_mm < 0) throw Error(Errc::negative_radius, "radius_mm < 0");
    const std::vector<double> dist = squared_distance_to_true(mask);
    const double r2 = radius_mm * radius_mm;
    BinaryMask out;
    out.header = mask.header;
    out.voxels.resize(mask.voxels.size());
    const std::int64_t n = mask.size();
    TRIAGE_OMP_FOR
    for (std::int64_t i = 0; i < n; ++i)
        out.voxels[static_cast<std::size_t>(i)] = dist[static_cast<std::size_t>(i)] <= r2 ? 1 : 0;
    return out;
}

BinaryMask erode(const BinaryMask& mask, double radius_mm) {
    if (radius_mm < 0) throw Error(Errc::negative_radius, "radius_mm < 0");
    BinaryMask inverted;
    inverted.header = mask.header;
    inverted.voxels.resize(mask.voxels.size());
    const std::int64_t n = mask.size();
    TRIAGE_OMP_FOR
    for (std::int64_t i = 0; i < n; ++i)
        inverted.voxels[static_cast<std::size_t>(i)] = mask.voxels[static_cast<std::size_t>(i)] ? 0 : 1;
    const std::vector<double> dist = squared_distance_to_true(inverted);
    const double r2 = radius_mm * radius_mm;
    BinaryMask out;
    out.header = mask.header;
    out.voxels.resize(mask.voxels.size());
    TRIAGE_OMP_FOR
    for (std::int64_t i = 0; i < n; ++i)
        out.voxels[static_cast<std::size_t>(i)] =
            (mask.voxels[static_cast<std::size_t>(i)] && dist[static_cast<std::size_t>(i)] > r2) ? 1 : 0;
    return out;
}

// --- connected components ------------------------------------------------
//
// Two-pass raster scan with union-find. Provisional labels from the first
// pass are resolved, counted, and renumbered so that final ids run 1..k in
// order of decreasing voxel count (ties by smallest first linear index).

namespace {

struct UnionFind {
    std::vector<std::int32_t> parent;
    std::int32_t make() {
        parent.push_back(static_cast<std::int32_t>(parent.size()));
        return static_cast<std::int32_t>(parent.size()) - 1;
    }
    std::int32_t find(std::int32_t a) {
        std::int32_t root = a;
        while (parent[root] != root) root = parent[root];
        while (parent[a] != root) {
            const std::int32_t next = parent[a];
            parent[a] = root;
            a = next;
        }
        return root;
    }
    void unite(std::int32_t a, std::int32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) parent[b] = a; else parent[a] = b;
    }
};

void finalize_components(ComponentSet& cs, std::vector<std::int32_t>& prov, UnionFind& uf,
                         std::int64_t n) {
    // roots in first-encounter order
    std::vector<std::int32_t> root_of(static_cast<std::size_t>(uf.parent.size()));
    for (std::size_t i = 0; i < uf.parent.size(); ++i)
        root_of[i] = uf.find(static_cast<std::int32_t>(i));

    struct RootInfo {
        std::int64_t count = 0;
        std::int64_t first = -1;
        std::int32_t root = 0;
    };
    std::vector<std::int64_t> slot(uf.parent.size(), -1);
    std::vector<RootInfo> infos;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int32_t p = prov[static_cast<std::size_t>(i)];
        if (p < 0) continue;
        const std::int32_t r = root_of[static_cast<std::size_t>(p)];
        if (slot[static_cast<std::size_t>(r)] < 0) {
            slot[static_cast<std::size_t>(r)] = static_cast<std::int64_t>(infos.size());
            infos.push_back({0, i, r});
        }
        ++infos[static_cast<std::size_t>(slot[static_cast<std::size_t>(r)])].count;
    }

    std::vector<std::size_t> order(infos.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (infos[a].count != infos[b].count) return infos[a].count > infos[b].count;
        return infos[a].first < infos[b].first;
    });

    std::vector<std::int32_t> final_id(uf.parent.size(), 0);
    cs.count = static_cast<int>(infos.size());
    cs.voxel_counts.resize(infos.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        final_id[static_cast<std::size_t>(infos[order[rank]].root)] =
            static_cast<std::int32_t>(rank + 1);
        cs.voxel_counts[rank] = infos[order[rank]].count;
    }

    TRIAGE_OMP_FOR
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int32_t p = prov[static_cast<std::size_t>(i)];
        cs.labels.voxels[static_cast<std::size_t>(i)] =
            p < 0 ? 0 : final_id[static_cast<std::size_t>(root_of[static_cast<std::size_t>(p)])];
    }
}

} // namespace

ComponentSet connected_components(const BinaryMask& mask, int connectivity) {
    if (connectivity != 6 && connectivity != 26)
        throw Error(Errc::usage_error, "connectivity must be 6 or 26");
    const auto& dims = mask.header.dims;
    const std::int64_t n = mask.header.voxel_count();

    ComponentSet cs;
    cs.labels.header = mask.header;
    cs.labels.voxels.assign(static_cast<std::size_t>(n), 0);

    // prior-neighbor offsets (negative linear index only)
    std::vector<std::array<int, 3>> nbrs;
    if (connectivity == 6) {
        nbrs = {{-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
    } else {
        for (int dz = -1; dz <= 0; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
                    nbrs.push_back({dx, dy, dz});
                }
    }

    std::vector<std::int32_t> prov(static_cast<std::size_t>(n), -1);
    UnionFind uf;
    std::int64_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i) {
                if (!mask.voxels[static_cast<std::size_t>(i)]) continue;
                std::int32_t label = -1;
                for (const auto& d : nbrs) {
                    const int nx2 = x + d[0], ny2 = y + d[1], nz2 = z + d[2];
                    if (nx2 < 0 || ny2 < 0 || nz2 < 0 || nx2 >= dims[0] || ny2 >= dims[1]) continue;
                    const std::int64_t ni = mask.index(nx2, ny2, nz2);
                    const std::int32_t nl = prov[static_cast<std::size_t>(ni)];
                    if (nl < 0) continue;
                    if (label < 0) label = nl; else uf.unite(label, nl);
                }
                if (label < 0) label = uf.make();
                prov[static_cast<std::size_t>(i)] = label;
            }

    finalize_components(cs, prov, uf, n);
    return cs;
}

std::vector<std::vector<std::int64_t>> component_voxel_lists(const ComponentSet& comps) {
    std::vector<std::vector<std::int64_t>> lists(static_cast<std::size_t>(comps.count));
    for (std::size_t c = 0; c < lists.size(); ++c)
        lists[c].reserve(static_cast<std::size_t>(comps.voxel_counts[c]));
    const std::int64_t n = comps.labels.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int32_t id = comps.labels.voxels[static_cast<std::size_t>(i)];
        if (id > 0) lists[static_cast<std::size_t>(id - 1)].push_back(i);
    }
    return lists;
}

// --- peripheral shell ----------------------------------------------------

static void exclude_hilar_cylinder(BinaryMask& shell, const BinaryMask& lungs) {
    const auto& dims = lungs.header.dims;
    const auto& sp = lungs.header.spacing_mm;
    std::int64_t sum_x = 0, sum_y = 0, count = 0;
    std::int64_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i)
                if (lungs.voxels[static_cast<std::size_t>(i)]) {
                    sum_x += x;
                    sum_y += y;
                    ++count;
                }
    if (count == 0) return;
    const double cx = static_cast<double>(sum_x) / static_cast<double>(count) * sp[0];
    const double cy = static_cast<double>(sum_y) / static_cast<double>(count) * sp[1];
    const double r2 = kHilarProxyRadiusMm * kHilarProxyRadiusMm;
    parallel_for_chunks(dims[2], [&](std::int64_t z) {
        std::int64_t idx = z * dims[0] * dims[1];
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++idx) {
                const double dx = x * sp[0] - cx;
                const double dy = y * sp[1] - cy;
                if (dx * dx + dy * dy <= r2) shell.voxels[static_cast<std::size_t>(idx)] = 0;
            }
    });
}

BinaryMask peripheral_shell(const BinaryMask& lungs, double depth_mm, const BinaryMask* bronchial,
                            double bronchial_margin_mm) {
    if (depth_mm <= 0) throw Error(Errc::negative_radius, "depth_mm must be > 0");
    bool any = false;
    for (std::uint8_t v : lungs.voxels)
        if (v) { any = true; break; }
    if (!any) throw Error(Errc::empty_lungs, "peripheral_shell");

    const BinaryMask inner = erode(lungs, depth_mm);
    BinaryMask shell;
    shell.header = lungs.header;
    shell.voxels.resize(lungs.voxels.size());
    const std::int64_t n = lungs.size();
    TRIAGE_OMP_FOR
    for (std::int64_t i = 0; i < n; ++i)
        shell.voxels[static_cast<std::size_t>(i)] =
            (lungs.voxels[static_cast<std::size_t>(i)] && !inner.voxels[static_cast<std::size_t>(i)]) ? 1 : 0;

    if (bronchial) {
        const BinaryMask excl = dilate(*bronchial, bronchial_margin_mm);
        TRIAGE_OMP_FOR
        for (std::int64_t i = 0; i < n; ++i)
            if (excl.voxels[static_cast<std::size_t>(i)]) shell.voxels[static_cast<std::size_t>(i)] = 0;
    } else {
        exclude_hilar_cylinder(shell, lungs);
    }
    return shell;
}

// --- shape descriptors ---------------------------------------------------

double max_axial_diameter(const std::vector<std::int64_t>& component, const VolumeHeader& header) {
    if (component.empty()) throw Error(Errc::empty_component, "max_axial_diameter");
    const auto& dims = header.dims;
    const auto& sp = header.spacing_mm;
    const std::int64_t plane = static_cast<std::int64_t>(dims[0]) * dims[1];

    // bucket by slice
    std::vector<std::vector<std::array<int, 2>>> slices;
    std::vector<int> slice_z;
    {
        std::int64_t cur_z = -1;
        for (std::int64_t idx : component) {
            const int z = static_cast<int>(idx / plane);
            const std::int64_t rem = idx % plane;
            const int y = static_cast<int>(rem / dims[0]);
            const int x = static_cast<int>(rem % dims[0]);
            if (z != cur_z) {
                slices.emplace_back();
                slice_z.push_back(z);
                cur_z = z;
            }
            slices.back().push_back({x, y});
        }
    }

    std::vector<double> slice_max(slices.size(), 0.0);
    parallel_for_chunks(static_cast<std::int64_t>(slices.size()), [&](std::int64_t s) {
        const auto& pts = slices[static_cast<std::size_t>(s)];
        double best = 0.0;
        for (std::size_t a = 0; a < pts.size(); ++a)
            for (std::size_t b = a + 1; b < pts.size(); ++b) {
                const double dx = (pts[a][0] - pts[b][0]) * sp[0];
                const double dy = (pts[a][1] - pts[b][1]) * sp[1];
                const double d2 = dx * dx + dy * dy;
                if (d2 > best) best = d2;
            }
        slice_max[static_cast<std::size_t>(s)] = best;
    });

    double best = 0.0;
    for (double d2 : slice_max) best = std::max(best, d2);
    return std::sqrt(best) + std::sqrt(sp[0] * sp[0] + sp[1] * sp[1]);
}

std::array<double, 3> symmetric3_eigenvalues(const std::array<std::array<double, 3>, 3>& m) {
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

double roundedness(const std::vector<std::int64_t>& component, const VolumeHeader& header) {
    if (component.empty()) throw Error(Errc::empty_component, "roundedness");
    const auto& dims = header.dims;
    const auto& sp = header.spacing_mm;
    const std::int64_t plane = static_cast<std::int64_t>(dims[0]) * dims[1];
    const double n = static_cast<double>(component.size());

    double mean[3] = {0, 0, 0};
    for (std::int64_t idx : component) {
        const int z = static_cast<int>(idx / plane);
        const std::int64_t rem = idx % plane;
        mean[0] += (rem % dims[0]) * sp[0];
        mean[1] += (rem / dims[0]) * sp[1];
        mean[2] += z * sp[2];
    }
    for (double& m : mean) m /= n;

    std::array<std::array<double, 3>, 3> cov{};
    for (std::int64_t idx : component) {
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

    std::array<double, 3> eig = symmetric3_eigenvalues(cov);
    std::array<double, 3> floors = {sp[0] / 2.0, sp[1] / 2.0, sp[2] / 2.0};
    std::sort(floors.begin(), floors.end(), std::greater<double>());
    double semi_max = 0.0, semi_min = 0.0;
    for (int i = 0; i < 3; ++i) {
        // uniform-ellipsoid relation: covariance eigenvalue = semi_axis^2 / 5
        const double semi = std::max(std::sqrt(5.0 * std::max(eig[i], 0.0)), floors[i]);
        if (i == 0) semi_max = semi;
        if (i == 2) semi_min = semi;
    }
    return semi_min / semi_max;
}

// --- serial reference kernels --------------------------------------------

namespace reference {

BinaryMask dilate(const BinaryMask& mask, double radius_mm) {
    if (radius_mm < 0) throw Error(Errc::negative_radius, "radius_mm < 0");
    const auto& dims = mask.header.dims;
    const StructuringElement se = make_structuring_element(radius_mm, mask.header.spacing_mm);
    BinaryMask out;
    out.header = mask.header;
    out.voxels.assign(mask.voxels.size(), 0);
    std::int64_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i) {
                if (!mask.voxels[static_cast<std::size_t>(i)]) continue;
                for (const auto& o : se.offsets) {
                    const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] || ny >= dims[1] || nz >= dims[2])
                        continue;
                    out.at(nx, ny, nz) = 1;
                }
            }
    return out;
}

BinaryMask erode(const BinaryMask& mask, double radius_mm) {
    if (radius_mm < 0) throw Error(Errc::negative_radius, "radius_mm < 0");
    const auto& dims = mask.header.dims;
    const StructuringElement se = make_structuring_element(radius_mm, mask.header.spacing_mm);
    BinaryMask out;
    out.header = mask.header;
    out.voxels.assign(mask.voxels.size(), 0);
    std::int64_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i) {
                if (!mask.voxels[static_cast<std::size_t>(i)]) continue;
                bool keep = true;
                for (const auto& o : se.offsets) {
                    const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] || ny >= dims[1] || nz >= dims[2])
                        continue;  // outside the grid there are no voxels to fail on
                    if (!mask.at(nx, ny, nz)) { keep = false; break; }
                }
                if (keep) out.voxels[static_cast<std::size_t>(i)] = 1;
            }
    return out;
}

ComponentSet connected_components(const BinaryMask& mask, int connectivity) {
    if (connectivity != 6 && connectivity != 26)
        throw Error(Errc::usage_error, "connectivity must be 6 or 26");
    const auto& dims = mask.header.dims;
    const std::int64_t n = mask.header.voxel_count();

    std::vector<std::array<int, 3>> nbrs;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0 && dz == 0) continue;
                if (connectivity == 6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1) continue;
                nbrs.push_back({dx, dy, dz});
            }

    ComponentSet cs;
    cs.labels.header = mask.header;
    cs.labels.voxels.assign(static_cast<std::size_t>(n), 0);

    struct Blob {
        std::int64_t count;
        std::int64_t first;
        std::int32_t id;
    };
    std::vector<Blob> blobs;
    std::vector<std::int32_t> tmp(static_cast<std::size_t>(n), 0);
    std::vector<std::int64_t> stack;
    std::int32_t next = 0;
    for (std::int64_t seed = 0; seed < n; ++seed) {
        if (!mask.voxels[static_cast<std::size_t>(seed)] || tmp[static_cast<std::size_t>(seed)]) continue;
        ++next;
        std::int64_t count = 0;
        stack.assign(1, seed);
        tmp[static_cast<std::size_t>(seed)] = next;
        while (!stack.empty()) {
            const std::int64_t cur = stack.back();
            stack.pop_back();
            ++count;
            const int z = static_cast<int>(cur / (static_cast<std::int64_t>(dims[0]) * dims[1]));
            const std::int64_t rem = cur % (static_cast<std::int64_t>(dims[0]) * dims[1]);
            const int y = static_cast<int>(rem / dims[0]);
            const int x = static_cast<int>(rem % dims[0]);
            for (const auto& d : nbrs) {
                const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
                if (nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] || ny >= dims[1] || nz >= dims[2])
                    continue;
                const std::int64_t ni = mask.index(nx, ny, nz);
                if (mask.voxels[static_cast<std::size_t>(ni)] && !tmp[static_cast<std::size_t>(ni)]) {
                    tmp[static_cast<std::size_t>(ni)] = next;
                    stack.push_back(ni);
                }
            }
        }
        blobs.push_back({count, seed, next});
    }

    std::sort(blobs.begin(), blobs.end(), [](const Blob& a, const Blob& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.first < b.first;
    });
    std::vector<std::int32_t> remap(static_cast<std::size_t>(next) + 1, 0);
    cs.count = static_cast<int>(blobs.size());
    cs.voxel_counts.resize(blobs.size());
    for (std::size_t rank = 0; rank < blobs.size(); ++rank) {
        remap[static_cast<std::size_t>(blobs[rank].id)] = static_cast<std::int32_t>(rank + 1);
        cs.voxel_counts[rank] = blobs[rank].count;
    }
    for (std::int64_t i = 0; i < n; ++i)
        cs.labels.voxels[static_cast<std::size_t>(i)] = remap[static_cast<std::size_t>(tmp[static_cast<std::size_t>(i)])];
    return cs;
}

BinaryMask peripheral_shell(const BinaryMask& lungs, double depth_mm, const BinaryMask* bronchial,
                            double bronchial_margin_mm) {
    if (depth_mm <= 0) throw Error(Errc::negative_radius, "depth_mm must be > 0");
    bool any = false;
    for (std::uint8_t v : lungs.voxels)
        if (v) { any = true; break; }
    if (!any) throw Error(Errc::empty_lungs, "peripheral_shell");

    const BinaryMask inner = reference::erode(lungs, depth_mm);
    BinaryMask shell;
    shell.header = lungs.header;
    shell.voxels.resize(lungs.voxels.size());
    for (std::size_t i = 0; i < lungs.voxels.size(); ++i)
        shell.voxels[i] = (lungs.voxels[i] && !inner.voxels[i]) ? 1 : 0;

    if (bronchial) {
        const BinaryMask excl = reference::dilate(*bronchial, bronchial_margin_mm);
        for (std::size_t i = 0; i < shell.voxels.size(); ++i)
            if (excl.voxels[i]) shell.voxels[i] = 0;
    } else {
        exclude_hilar_cylinder(shell, lungs);
    }
    return shell;
}

} // namespace reference

} // namespace triage
