// Optimize K kernel points in the hyperbolic plane and print them on the Poincare disk.
#include "hkconv/hkconv.hpp"

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
  using namespace hkconv;
  const int K = argc > 1 ? std::atoi(argv[1]) : 4;
  SolverConfig solver;
  solver.max_iters = 10'000'000;
  ManifoldConfig mc;
  mc.dim = 2;
  const SolveResult r = solve_kernels(K, 2, solver, mc);
  std::printf("K=%d converged=%d iterations=%ld loss=%.10f\n", K, r.trace.converged ? 1 : 0, r.trace.iterations,
              r.trace.best_loss);
  for (const auto& p : r.kernels.points) {
    const Vec q = to_poincare(p);
    std::printf("  disk (%+.5f, %+.5f)  d(o, x) = %.5f\n", q[0], q[1], distance(origin(mc), p));
  }
  return r.trace.converged ? 0 : 1;
}
