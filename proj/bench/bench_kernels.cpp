// Timing harness for the parallel kernels against their serial reference
// implementations. Each kernel runs on the same generated case; the fastest
// of three repetitions is reported, and outputs are cross-checked so a
// benchmark run doubles as an equivalence smoke test.
//
//   bench_kernels [--jobs N] [--scale S]
//
// --jobs 0 (default) uses all workers; --scale multiplies the case dimensions
// (default 2, i.e. 96x96x80 voxels).

#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <string>

#include "triage/features.hpp"
#include "triage/morphology.hpp"
#include "triage/parallel.hpp"
#include "triage/phantom.hpp"

using namespace triage;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kRepeats = 3;

template <typename Fn>
double best_ms(Fn&& fn) {
    double best = 1e300;
    for (int r = 0; r < kRepeats; ++r) {
        const auto t0 = Clock::now();
        fn();
        const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        if (ms < best) best = ms;
    }
    return best;
}

void row(const std::string& name, double ref_ms, double par_ms, bool match) {
    std::cout << std::left << std::setw(28) << name << std::right << std::fixed
              << std::setprecision(1) << std::setw(10) << ref_ms << " ms" << std::setw(10)
              << par_ms << " ms" << std::setprecision(2) << std::setw(9) << ref_ms / par_ms
              << "x  " << (match ? "ok" : "MISMATCH") << "\n";
}

} // namespace

int main(int argc, char** argv) {
    int jobs = 0;
    int scale = 2;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--jobs" && i + 1 < argc) jobs = std::atoi(argv[++i]);
        else if (arg == "--scale" && i + 1 < argc) scale = std::atoi(argv[++i]);
        else {
            std::cerr << "usage: bench_kernels [--jobs N] [--scale S]\n";
            return 2;
        }
    }
    if (scale < 1) scale = 1;
    set_jobs(jobs);

    // Same physical geometry as the default case, rasterized at scale× finer
    // grid so the kernels have real work to chew on.
    PhantomSpec spec = default_phantom_spec(CaseLabel::covid, 7);
    for (int a = 0; a < 3; ++a) {
        spec.dims[a] *= scale;
        spec.spacing_mm[a] /= scale;
    }
    const auto [bundle, gt] = generate_case(spec);

    BinaryMask lungs;
    lungs.header = bundle.lungs.header;
    lungs.voxels.resize(bundle.lungs.voxels.size());
    for (std::size_t i = 0; i < lungs.voxels.size(); ++i)
        lungs.voxels[i] = bundle.lungs.voxels[i] != 0;
    BinaryMask abn = bundle.abnormality;

    std::cout << "case " << lungs.header.dims[0] << "x" << lungs.header.dims[1] << "x"
              << lungs.header.dims[2] << " voxels, jobs " << effective_jobs() << "\n\n";
    std::cout << std::left << std::setw(28) << "kernel" << std::right << std::setw(13)
              << "reference" << std::setw(13) << "parallel" << std::setw(10) << "speedup"
              << "\n";

    {
        BinaryMask a, b;
        const double r = 10.0;
        const double ref = best_ms([&] { a = reference::dilate(lungs, r); });
        const double par = best_ms([&] { b = dilate(lungs, r); });
        row("dilate r=10mm", ref, par, a.voxels == b.voxels);
    }
    {
        BinaryMask a, b;
        const double r = 10.0;
        const double ref = best_ms([&] { a = reference::erode(lungs, r); });
        const double par = best_ms([&] { b = erode(lungs, r); });
        row("erode r=10mm", ref, par, a.voxels == b.voxels);
    }
    {
        ComponentSet a, b;
        const double ref = best_ms([&] { a = reference::connected_components(abn, 26); });
        const double par = best_ms([&] { b = connected_components(abn, 26); });
        row("connected components", ref, par,
            a.labels == b.labels && a.voxel_counts == b.voxel_counts);
    }
    {
        BinaryMask a, b;
        const double ref = best_ms([&] { a = reference::peripheral_shell(lungs, 15.0); });
        const double par = best_ms([&] { b = peripheral_shell(lungs, 15.0); });
        row("peripheral shell d=15mm", ref, par, a.voxels == b.voxels);
    }
    {
        FeatureVector a, b;
        const double ref =
            best_ms([&] { a = reference::extract_features(bundle, ExtractConfig{}); });
        const double par = best_ms([&] { b = extract_features(bundle, ExtractConfig{}); });
        row("feature extraction", ref, par, a.values == b.values);
    }
    return 0;
}
