"""
Global versus query-weighted bases on a mass-spring chain
=========================================================

A cantilever chain is sampled at a handful of stiffness designs. For a new
design we build two reduced bases from the same snapshots and compare the
reduced trajectories against the full-order solve.
"""

import numpy as np

from wpod.basis import build_basis
from wpod.bound import bound_surrogate
from wpod.hdm import ChainProblem, solve_hdm
from wpod.rom import relative_error, solve_rom
from wpod.snapshots import SnapshotStore
from wpod.weighting import cubic_weights, distance_profile, uniform_weights

rng = np.random.default_rng(0)
problem = ChainProblem()
print(f"{problem.n_e} elements, {problem.n_x} states, {problem.n_t} steps")

# Snapshots at thickness designs scattered around the uniform one.
store = SnapshotStore(problem.n_x, problem.n_t, problem.dt, problem.E)
designs = np.clip(0.1 + 0.03 * rng.standard_normal((8, problem.n_p)), 0.03, 0.19)
for mu in designs:
    store.append_snapshot(mu, solve_hdm(problem, mu).trajectory)

# A query close to the first sample but not on it.
query = store.points[0] + 0.005 * rng.standard_normal(problem.n_p)
reference = solve_hdm(problem, query)

schemes = {
    "global": uniform_weights(store.n_s),
    "weighted": cubic_weights(distance_profile(store.points, query, c=0.8)),
}
print("weights near the query:", np.round(schemes["weighted"].weights, 3))

for n_r in (4, 8, 16):
    line = [f"n_r={n_r:2d}"]
    for name, weights in schemes.items():
        basis = build_basis(store, weights, n_r)
        rom = solve_rom(problem, query, basis.phi)
        err = relative_error(reference, rom, store.time_weights, problem.E)
        bound = bound_surrogate(store, weights, n_r, query, basis.singular_values)
        line.append(f"{name}: error {err:.2e} (surrogate {bound.total:.1e})")
    print("  ".join(line))
