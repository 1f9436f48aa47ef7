"""Compatible DG / continuous FEM discretizations of hyperbolic systems with
curl-free or divergence-free constraints on periodic triangle meshes."""

__version__ = "0.1.0"
