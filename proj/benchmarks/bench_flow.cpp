#include <benchmark/benchmark.h>

#include "grassflow/integrators.hpp"
#include "grassflow/oracle.hpp"

using namespace grassflow;

namespace {

Operator shifted_laplacian(Index m) {
  const Operator L = build_laplacian_1d(m, 1.0);
  return shift_operator(L, default_shift(L));
}

FlowState initial_state(const Operator& H, Index N) {
  FlowState s;
  s.U = random_admissible_initial(H, N, 7, InitMode::sub_stiefel).matrix();
  return s;
}

}  // namespace

static void BM_OperatorApply(benchmark::State& st) {
  const Operator H = shifted_laplacian(st.range(0));
  const Matrix X = Matrix::Random(H.dim(), 4);
  for (auto _ : st) benchmark::DoNotOptimize(H.apply(X));
  st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_OperatorApply)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void BM_DenseApply(benchmark::State& st) {
  const Operator H = build_dense(shifted_laplacian(st.range(0)).to_dense());
  const Matrix X = Matrix::Random(H.dim(), 4);
  for (auto _ : st) benchmark::DoNotOptimize(H.apply(X));
}
BENCHMARK(BM_DenseApply)->RangeMultiplier(4)->Range(64, 1024);

static void BM_StepRk4(benchmark::State& st) {
  const Operator H = shifted_laplacian(st.range(0));
  const FlowState s = initial_state(H, 4);
  for (auto _ : st) benchmark::DoNotOptimize(step_rk4(H, s, 1e-6));
}
BENCHMARK(BM_StepRk4)->Arg(64)->Arg(256)->Arg(1024);

static void BM_StepRk4GramConsistent(benchmark::State& st) {
  const Operator H = shifted_laplacian(st.range(0));
  const FlowState s = initial_state(H, 4);
  for (auto _ : st) benchmark::DoNotOptimize(step_rk4_gram_consistent(H, s, 1e-6));
}
BENCHMARK(BM_StepRk4GramConsistent)->Arg(64)->Arg(256)->Arg(1024);

static void BM_StepRk4Adaptive(benchmark::State& st) {
  const Operator H = shifted_laplacian(st.range(0));
  const FlowState s = initial_state(H, 4);
  const SolverConfig c;
  for (auto _ : st) benchmark::DoNotOptimize(step_rk4_adaptive(H, s, 1e-6, c));
}
BENCHMARK(BM_StepRk4Adaptive)->Arg(64)->Arg(256);

static void BM_Jacobi(benchmark::State& st) {
  const Matrix A = shifted_laplacian(st.range(0)).to_dense();
  for (auto _ : st) benchmark::DoNotOptimize(jacobi_eigensolver(A));
}
BENCHMARK(BM_Jacobi)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_AnalyticFlow(benchmark::State& st) {
  const Operator H = shifted_laplacian(st.range(0));
  const FrameBlock U0 = random_admissible_initial(H, 4, 7, InitMode::sub_stiefel);
  const AnalyticFlow flow(H.to_dense(), U0);
  for (auto _ : st) benchmark::DoNotOptimize(flow.at(1e-3));
}
BENCHMARK(BM_AnalyticFlow)->Arg(16)->Arg(64);

// End-to-end solve on the reference problem.
static void BM_RunFlow(benchmark::State& st) {
  const Operator H = shifted_laplacian(st.range(0));
  const FrameBlock U0 = random_admissible_initial(H, 4, 42, InitMode::sub_stiefel);
  SolverConfig c;
  c.rtol = 1e-8;
  std::int64_t steps = 0;
  for (auto _ : st) {
    const Trajectory traj = run_flow(H, U0, c);
    steps = traj.accepted_steps;
    benchmark::DoNotOptimize(traj.final_state.U.data());
  }
  st.counters["accepted_steps"] = static_cast<double>(steps);
}
BENCHMARK(BM_RunFlow)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
