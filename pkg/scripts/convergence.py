"""Mesh-refinement studies for the plane-wave Maxwell-GLM and Taylor-Green tests.

    python3 scripts/convergence.py glm            # all degrees, acceptance levels
    python3 scripts/convergence.py glm --n1-long  # N=1 on 20, 40, 60, 80
    python3 scripts/convergence.py euler --degrees 1 2

Tables are printed and written as CSV under --out.
"""
import argparse
import os
import time

from compatdg.cli import convergence_sweep

# degree: (levels, cfl, cfl scaled by h)
GLM = {0: ((20, 40), 1.0, False), 1: ((20, 40), 1.0, False), 2: ((10, 20), 0.1, False), 3: ((5, 10), 1.0, True)}
EULER = {1: ((20, 40), 0.5, False), 2: ((20, 40), 0.5, False), 3: ((10, 20), 0.1, False)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("problem", choices=("glm", "euler"))
    ap.add_argument("--degrees", type=int, nargs="*")
    ap.add_argument("--n1-long", action="store_true", help="GLM N=1 on N_x = 20, 40, 60, 80")
    ap.add_argument("--mesh-kind", default="unstructured", choices=("structured", "unstructured"))
    ap.add_argument("--out", default="results")
    a = ap.parse_args()
    table = GLM if a.problem == "glm" else EULER
    system = "maxwellglm" if a.problem == "glm" else "euler"
    if a.n1_long:
        table = {1: ((20, 40, 60, 80), 1.0, False)}
    os.makedirs(a.out, exist_ok=True)
    for N in a.degrees if a.degrees else sorted(table):
        levels, cfl, scale_h = table[N]
        t0 = time.perf_counter()
        tab = convergence_sweep(system, N, levels, cfl=cfl, cfl_scale_h=scale_h, mesh_kind=a.mesh_kind,
                                log_fn=lambda nx, s: print(f"  N_x={nx}: {s.n_steps} steps, {s.wall_time:.1f} s",
                                                           flush=True))
        print(f"{system} N={N} ({time.perf_counter() - t0:.0f} s)")
        print(tab.format(), flush=True)
        suffix = "_long" if a.n1_long else ""
        tab.to_csv(os.path.join(a.out, f"{system}_N{N}{suffix}.csv"))


if __name__ == "__main__":
    main()
