"""Fully discrete forward solver for the semilinear subdiffusion problem.

Time stepping couples the CQ-BE discrete Caputo derivative with the P1
stiffness matrix; the nonlinear term is lagged one step (linearized
scheme), so each step is a single SPD solve with the fixed matrix
tau^-alpha M + K.  The homogeneous terminal map v -> U^N is the discrete
solution operator applied matrix-free by one N-step solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.sparse.linalg import splu

from fracback.cq import cq_weights
from fracback.fem import FemSystem, GridFunction, NumericalFailure, load_nonlinear


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise source term f(u) with an optional Lipschitz hint."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    lipschitz_hint: float = 0.0

    def __call__(self, u):
        return self.f(u)

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


_REGISTRY: dict[str, Callable[[float], Nonlinearity]] = {
    "zero": lambda L: Nonlinearity("zero", lambda u: np.zeros_like(u), 0.0),
    "identity": lambda L: Nonlinearity("identity", lambda u: u, 1.0),
    "sqrt1pu2": lambda L: Nonlinearity("sqrt1pu2", lambda u: np.sqrt(1.0 + u * u), 1.0),
    "one_minus_u3": lambda L: Nonlinearity("one_minus_u3", lambda u: 1.0 - u ** 3, 0.0),
    "L_sqrt1pu2": lambda L: Nonlinearity(
        f"L_sqrt1pu2:{L:g}", lambda u: L * np.sqrt(1.0 + u * u), abs(L)),
    "allen_cahn": lambda L: Nonlinearity("allen_cahn", lambda u: u - u ** 3, 1.0),
}


def get_nonlinearity(name: str, L: float = 1.0) -> Nonlinearity:
    """Look up a registered nonlinearity.

    A scale for the Lipschitz family may be given either as the ``L``
    argument or inline, e.g. ``"L_sqrt1pu2:0.5"``.
    """
    base = name
    if ":" in name:
        base, _, suffix = name.partition(":")
        L = float(suffix)
    if base not in _REGISTRY:
        raise ValueError(f"unknown nonlinearity {name!r}; "
                         f"registered: {sorted(_REGISTRY)}")
    return _REGISTRY[base](L)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [0, T] with N steps and fractional order alpha."""

    T: float
    N: int
    alpha: float

    def __post_init__(self):
        if self.T <= 0.0:
            raise ValueError(f"terminal time must be positive, got {self.T}")
        if self.N < 1:
            raise ValueError(f"need at least one time step, got {self.N}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"fractional order must lie in (0,1), got {self.alpha}")

    @property
    def tau(self) -> float:
        return self.T / self.N


@dataclass
class Trajectory:
    """States U^0..U^N of one forward solve (terminal-only keeps just U^N)."""

    grid: TimeGrid
    states: list
    terminal: GridFunction


class _StepWorkspace:
    """Factored step matrix and CQ weights reused across solves on one grid."""

    def __init__(self, sys: FemSystem, grid: TimeGrid):
        self.sys = sys
        self.grid = grid
        tau_a = grid.tau ** (-grid.alpha)
        self.tau_a = tau_a
        mat = (tau_a * sys.M + sys.K).tocsc()
        self.solver = splu(mat)
        wts = cq_weights(grid.alpha, grid.N)
        self.w = wts.w
        self.s = wts.partial_sums()


_WORKSPACE_CACHE: dict[tuple, _StepWorkspace] = {}
_WORKSPACE_CACHE_MAX = 8


def _workspace(sys: FemSystem, grid: TimeGrid) -> _StepWorkspace:
    key = (id(sys), grid.T, grid.N, grid.alpha)
    ws = _WORKSPACE_CACHE.get(key)
    if ws is None or ws.sys is not sys:
        if len(_WORKSPACE_CACHE) >= _WORKSPACE_CACHE_MAX:
            _WORKSPACE_CACHE.pop(next(iter(_WORKSPACE_CACHE)))
        ws = _StepWorkspace(sys, grid)
        _WORKSPACE_CACHE[key] = ws
    return ws


def solve_forward(sys: FemSystem, grid: TimeGrid, u0: GridFunction,
                  f: Nonlinearity, *, keep_states: bool = True) -> Trajectory:
    """March the linearized fully discrete scheme from U^0 = u0 to U^N.

    Step n solves (tau^-a M + K) U^n = M f(U^{n-1})
                                       - tau^-a M [sum_j w_j U^{n-j} - s_n U^0].
    """
    if u0.system is not sys:
        raise ValueError("initial data defined on a different system")
    ws = _workspace(sys, grid)
    N, d = grid.N, sys.num_dofs
    hist = np.empty((N + 1, d))
    hist[0] = u0.values
    homogeneous = f.is_zero
    for n in range(1, N + 1):
        conv = ws.w[n:0:-1] @ hist[:n] - ws.s[n] * hist[0]
        rhs = -ws.tau_a * (sys.M @ conv)
        if not homogeneous:
            rhs = rhs + load_nonlinear(sys, GridFunction(sys, hist[n - 1]), f)
        hist[n] = ws.solver.solve(rhs)
        if not np.all(np.isfinite(hist[n])):
            raise NumericalFailure(f"forward step {n} produced non-finite values")
    terminal = GridFunction(sys, hist[N].copy())
    states = [GridFunction(sys, hist[n].copy()) for n in range(N + 1)] if keep_states else []
    return Trajectory(grid=grid, states=states, terminal=terminal)


def apply_F(sys: FemSystem, grid: TimeGrid, v: GridFunction) -> GridFunction:
    """Discrete homogeneous solution operator: terminal state with f = 0."""
    traj = solve_forward(sys, grid, v, get_nonlinearity("zero"), keep_states=False)
    return traj.terminal


def apply_S(sys: FemSystem, grid: TimeGrid, v: GridFunction,
            f: Nonlinearity) -> GridFunction:
    """Discrete semilinear solution operator: terminal state of the full scheme."""
    traj = solve_forward(sys, grid, v, f, keep_states=False)
    return traj.terminal


def dump_trajectory(traj: Trajectory, indices, directory, prefix="state"):
    """Write selected time slices as CSV files, return the file names."""
    from fracback.fem import write_field_csv

    out = []
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for n in indices:
        path = directory / f"{prefix}_{n:05d}.csv"
        write_field_csv(traj.states[n], path)
        out.append(str(path))
    return out
