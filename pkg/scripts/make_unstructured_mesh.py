"""Write a jittered periodic Delaunay mesh in the plain-text mesh format.

    python3 scripts/make_unstructured_mesh.py tests/data/unstructured_12.mesh --nx 12 --seed 1709
"""
import argparse

from compatdg.mesh import perturbed_delaunay, quality, write_mesh


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("path")
    ap.add_argument("--nx", type=int, default=12)
    ap.add_argument("--ny", type=int, default=None)
    ap.add_argument("--box", type=float, nargs=4, default=(0.0, 1.0, 0.0, 1.0))
    ap.add_argument("--jitter", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=1709)
    a = ap.parse_args()
    mesh = perturbed_delaunay(a.nx, a.ny or a.nx, tuple(a.box), a.jitter, a.seed)
    write_mesh(mesh, a.path)
    q = quality(mesh)
    print(f"{a.path}: {q.n_e} triangles, {q.n_v} vertices, h in [{q.h_min:.4f}, {q.h_max:.4f}]")


if __name__ == "__main__":
    main()
