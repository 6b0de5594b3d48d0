// Serial vs OpenMP throughput for the hot kernels: the batched MLP matmuls,
// full-image rendering, and Monte-Carlo perturbation draws.

#include <chrono>
#include <cstdio>
#include <vector>

#include "mirf/jacobian.hpp"
#include "mirf/kernels.hpp"
#include "mirf/mi.hpp"
#include "mirf/render.hpp"
#include "mirf/rng.hpp"
#include "mirf/scene.hpp"

using namespace mirf;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class F>
double time_best_of(int reps, F&& f) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

}  // namespace

int main() {
    std::printf("threads: %d\n\n", kernels::max_threads());

    {
        const int64_t N = 8192, K = 64, M = 64;
        std::vector<double> a(N * K), b(K * M), c(N * M);
        Rng rng(7);
        for (double& x : a) x = rng.normal();
        for (double& x : b) x = rng.normal();
        const double flops = 2.0 * N * K * M;
        double ts = time_best_of(5, [&] { kernels::matmul_serial(a.data(), b.data(), c.data(), N, K, M); });
        double tp = time_best_of(5, [&] { kernels::matmul(a.data(), b.data(), c.data(), N, K, M); });
        std::printf("matmul %lldx%lldx%lld      serial %7.2f ms (%6.2f GFLOP/s)   omp %7.2f ms (%6.2f GFLOP/s)   speedup %.2fx\n",
                    (long long)N, (long long)K, (long long)M, ts * 1e3, flops / ts * 1e-9, tp * 1e3,
                    flops / tp * 1e-9, ts / tp);
    }

    SceneSpec scene = generate_scene(4, 1);
    Dataset ds = make_dataset(scene, 2, 1, 1);
    FieldParams params = FieldParams::init(FieldConfig{}, 1);

    {
        const Camera& cam = ds.train_cams[0];
        double ts = time_best_of(3, [&] { render_image(params, cam, 32, 9, nullptr, false); });
        double tp = time_best_of(3, [&] { render_image(params, cam, 32, 9, nullptr, true); });
        std::printf("render %dx%d x32 samples  serial %7.2f ms                    omp %7.2f ms                    speedup %.2fx\n",
                    cam.width, cam.height, ts * 1e3, tp * 1e3, ts / tp);
    }

    {
        const Ray ray = pixel_ray(ds.train_cams[0], 24, 24, 0.1, 6.0);
        RenderOutput ro = render_pixel(params, ray, 32, 11);
        const int hidden = params.config().hidden;
        const int64_t draws = 20000;
        const int64_t d = 3 * hidden;
        std::vector<double> out(draws);
        auto run = [&](bool parallel) {
            kernels::for_each_index(draws, parallel, [&](int64_t k) {
                Rng rng(mix_seed(3, static_cast<uint64_t>(k)));
                std::vector<double> dir = sample_sphere_direction(d, rng);
                out[static_cast<size_t>(k)] = perturbed_gray_from_cache(ro, dir, 1e-3, hidden);
            });
        };
        double ts = time_best_of(3, [&] { run(false); });
        double tp = time_best_of(3, [&] { run(true); });
        std::printf("mc draws %lld             serial %7.2f ms                    omp %7.2f ms                    speedup %.2fx\n",
                    (long long)draws, ts * 1e3, tp * 1e3, ts / tp);
    }
    return 0;
}
