// Timing comparison between the serial reference kernels and the OpenMP
// ones, plus an end-to-end task-evaluation throughput check at different
// worker counts. Results also cross-check bit-equality between the paths.

#include <chrono>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fewtrans/hpe.hpp"
#include "fewtrans/matrix.hpp"
#include "fewtrans/rng.hpp"
#include "fewtrans/sampler.hpp"

using namespace fewtrans;

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    TaskRng rng(seed, rows * 31 + cols, RngPurpose::kTest);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

void bench_matmul(std::size_t n, int reps) {
    const Matrix a = random_matrix(n, n, 1);
    const Matrix b = random_matrix(n, n, 2);

    Matrix ref = serial::matmul(a, b);
    double t0 = now_ms();
    for (int r = 0; r < reps; ++r) ref = serial::matmul(a, b);
    const double serial_ms = (now_ms() - t0) / reps;

    Matrix par = matmul(a, b);
    t0 = now_ms();
    for (int r = 0; r < reps; ++r) par = matmul(a, b);
    const double parallel_ms = (now_ms() - t0) / reps;

    const bool identical = ref == par;
    std::printf("matmul %4zux%-4zu  serial %9.3f ms   openmp %9.3f ms   speedup %5.2fx   %s\n", n,
                n, serial_ms, parallel_ms, serial_ms / parallel_ms,
                identical ? "bit-identical" : "MISMATCH");
}

void bench_hpe(int threads, int n_tasks) {
    DatasetRegistry registry;
    SyntheticSpec spec;
    spec.name = "bench";
    spec.n_classes = 12;
    spec.items_per_class = 40;
    spec.dim = 16;
    spec.separation = 3.0;
    auto handle = generate_synthetic_dataset(registry, spec, 7);
    auto backbone = frozen_embedding_backbone(handle->embeddings());

    ConfigGrid grid = build_grid(HyperConfig{1e-3, 1e-2, 20, ""}, GridShape::Cube3x3x3, 5.0);
    TaskStreamSpec stream;
    stream.run_seed = 11;
    stream.n_tasks = n_tasks;
    const ClassSplit split = whole_dataset_split(handle);

#ifdef _OPENMP
    omp_set_num_threads(threads);
#endif
    const double t0 = now_ms();
    double acc_sum = 0.0;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) reduction(+ : acc_sum)
#endif
    for (int i = 0; i < n_tasks; ++i) {
        const Task task = sample_task(handle, split, stream, i);
        FitOptions options;
        options.seed = mix64(stream.run_seed ^ static_cast<std::uint64_t>(i));
        const HPEResult result =
            run_hpe(Method::LinearProbe, *backbone, *handle, task, grid, options);
        acc_sum += result.hpe_accuracy;
    }
    const double elapsed = now_ms() - t0;
    std::printf("hpe loop  threads %d   %3d tasks   %9.1f ms total   %7.1f ms/task   mean acc %.4f\n",
                threads, n_tasks, elapsed, elapsed / n_tasks, acc_sum / n_tasks);
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 3;
    if (argc > 1) reps = std::stoi(argv[1]);

    std::printf("— kernel comparison (serial reference vs OpenMP) —\n");
    for (std::size_t n : {64, 128, 256, 512}) bench_matmul(n, reps);

    std::printf("\n— task evaluation throughput —\n");
    for (int threads : {1, 2, 4}) bench_hpe(threads, 24);
    return 0;
}
