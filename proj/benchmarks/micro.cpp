#include <benchmark/benchmark.h>

#include "apap/arap.hpp"
#include "apap/operators.hpp"
#include "apap/poisson.hpp"
#include "apap/render.hpp"

namespace {

// n x n vertex grid over the unit square, two triangles per cell.
apap::TexturedMesh grid(int n) {
  apap::TexturedMesh mesh;
  mesh.vertices.resize(n * n, 3);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      mesh.vertices.row(y * n + x) << double(x) / (n - 1), double(y) / (n - 1), 0.0;
  mesh.faces.resize(2 * (n - 1) * (n - 1), 3);
  int f = 0;
  for (int y = 0; y + 1 < n; ++y)
    for (int x = 0; x + 1 < n; ++x) {
      const int a = y * n + x, b = a + 1, c = a + n, d = c + 1;
      mesh.faces.row(f++) << a, b, d;
      mesh.faces.row(f++) << a, d, c;
    }
  mesh.uvs.resize(3 * mesh.num_faces(), 2);
  for (int i = 0; i < mesh.num_faces(); ++i)
    for (int k = 0; k < 3; ++k)
      mesh.uvs.row(3 * i + k) = mesh.vertices.row(mesh.faces(i, k)).head<2>();
  mesh.is_planar = true;
  return mesh;
}

void BM_BuildSystem(benchmark::State& state) {
  const auto mesh = grid(static_cast<int>(state.range(0)));
  const auto ops = apap::build_operators(mesh);
  for (auto _ : state) benchmark::DoNotOptimize(apap::build_system(ops, {0}));
  state.SetLabel(std::to_string(mesh.num_vertices()) + " vertices");
}
BENCHMARK(BM_BuildSystem)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Solve(benchmark::State& state) {
  const auto mesh = grid(static_cast<int>(state.range(0)));
  const auto ops = apap::build_operators(mesh);
  const auto system = apap::build_system(ops, {0});
  const auto jac = apap::jacobian_field(mesh);
  const apap::Vertices anchors = mesh.vertices.topRows(1);
  for (auto _ : state) benchmark::DoNotOptimize(apap::solve(system, jac, anchors));
}
BENCHMARK(BM_Solve)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Adjoint(benchmark::State& state) {
  const auto mesh = grid(static_cast<int>(state.range(0)));
  const auto system = apap::build_system(apap::build_operators(mesh), {0});
  const apap::Vertices upstream = apap::Vertices::Ones(mesh.num_vertices(), 3);
  for (auto _ : state) benchmark::DoNotOptimize(apap::solve_adjoint(system, upstream));
}
BENCHMARK(BM_Adjoint)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Rasterize(benchmark::State& state) {
  const auto mesh = grid(32);
  const int resolution = static_cast<int>(state.range(0));
  const auto camera = apap::canonical_cameras(apap::CameraRig::kPlanar, resolution).front();
  for (auto _ : state) benchmark::DoNotOptimize(apap::rasterize(mesh, camera));
}
BENCHMARK(BM_Rasterize)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_RasterizeBackward(benchmark::State& state) {
  const auto mesh = grid(32);
  const auto camera = apap::canonical_cameras(apap::CameraRig::kPlanar, 256).front();
  const auto output = apap::rasterize(mesh, camera);
  const apap::Image upstream(256, 256, 3, 1.0f);
  for (auto _ : state)
    benchmark::DoNotOptimize(apap::rasterize_backward(output, mesh, camera, upstream));
}
BENCHMARK(BM_RasterizeBackward)->Unit(benchmark::kMillisecond);

void BM_Arap(benchmark::State& state) {
  const auto mesh = grid(24);
  apap::ArapConstraints constraints;
  const int corner = mesh.num_vertices() - 1;
  constraints.constrained_indices = {0, corner};
  constraints.target_positions.resize(2, 3);
  constraints.target_positions.row(0) = mesh.vertices.row(0);
  constraints.target_positions.row(1) = mesh.vertices.row(corner) + Eigen::RowVector3d(0.2, 0.1, 0);
  constraints.max_iterations = 20;
  for (auto _ : state) benchmark::DoNotOptimize(apap::arap_deform(mesh, constraints));
}
BENCHMARK(BM_Arap)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
