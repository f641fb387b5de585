"""Discounted weak-KAM solvers on the flat torus."""
