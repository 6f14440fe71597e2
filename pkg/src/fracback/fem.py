"""P1 finite element machinery on the meshes from :mod:`fracback.grid`.

Assembles mass/stiffness matrices with homogeneous Dirichlet dofs
eliminated, computes L2 projections and nonlinear load vectors, and
provides the discrete L2 and negative-order norms.  The discrete
Laplacian is never formed explicitly; it lives in the pencil (K, M).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp


class NumericalFailure(RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class UnsupportedSize(ValueError):
    """Dense-path operation requested above the configured dof threshold."""


def conjugate_gradient(apply_op, b, *, tol=1e-12, maxiter=1000, dot=None,
                       precond=None, context=""):
    """Conjugate gradients for an SPD operator given as a callable.

    ``dot`` replaces the Euclidean inner product (used with the mass
    inner product, in which the regularized propagator is self-adjoint).
    Stops when ||r|| <= tol * ||b|| in the induced norm.  Returns
    ``(x, iterations)``; raises :class:`NumericalFailure` on stagnation.
    """
    if dot is None:
        dot = np.dot
    b = np.asarray(b, dtype=np.float64)
    norm_b = np.sqrt(dot(b, b))
    x = np.zeros_like(b)
    if norm_b == 0.0:
        return x, 0
    r = b.copy()
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = dot(r, z)
    for k in range(1, maxiter + 1):
        Ap = apply_op(p)
        alpha = rz / dot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.sqrt(dot(r, r)) <= tol * norm_b:
            return x, k
        z = precond(r) if precond is not None else r
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.sqrt(dot(r, r)) / norm_b
    raise NumericalFailure(
        f"CG did not converge{' in ' + context if context else ''}: "
        f"relative residual {res:.3e} after {maxiter} iterations")


# ---------------------------------------------------------------------------
# assembly

def _local_matrices_1d(h):
    m = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    k = 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return m, k


def assemble_full(mesh):
    """Full (all-node) mass and stiffness matrices in CSR format."""
    nn = mesh.num_nodes
    if mesh.dim == 1:
        h = mesh.h
        m_loc, k_loc = _local_matrices_1d(h)
        conn = mesh.elements
        ne, nv = conn.shape
        m_vals = np.tile(m_loc.ravel(), ne)
        k_vals = np.tile(k_loc.ravel(), ne)
    else:
        conn = mesh.elements
        ne, nv = conn.shape
        pts = mesh.nodes[conn]            # (ne, 3, 2)
        a, b, c = pts[:, 0], pts[:, 1], pts[:, 2]
        area = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
        # grad phi_i = rotated opposite edge / (2 area)
        g = np.empty((ne, 3, 2))
        g[:, 0, 0] = b[:, 1] - c[:, 1]
        g[:, 0, 1] = c[:, 0] - b[:, 0]
        g[:, 1, 0] = c[:, 1] - a[:, 1]
        g[:, 1, 1] = a[:, 0] - c[:, 0]
        g[:, 2, 0] = a[:, 1] - b[:, 1]
        g[:, 2, 1] = b[:, 0] - a[:, 0]
        g /= (2.0 * area)[:, None, None]
        k_loc = np.einsum("eid,ejd->eij", g, g) * area[:, None, None]
        m_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        m_loc = m_ref[None, :, :] * area[:, None, None]
        m_vals = m_loc.ravel()
        k_vals = k_loc.ravel()
    rows = np.repeat(conn, nv, axis=1).ravel()
    cols = np.tile(conn, (1, nv)).ravel()
    M = sp.coo_matrix((m_vals, (rows, cols)), shape=(nn, nn)).tocsr()
    K = sp.coo_matrix((k_vals, (rows, cols)), shape=(nn, nn)).tocsr()
    # enforce exact symmetry (assembly is symmetric up to ordering only)
    M = (M + M.T) * 0.5
    K = (K + K.T) * 0.5
    return M, K


class FemSystem:
    """Assembled P1 system: interior mass M and stiffness K of a mesh.

    ``m_coupling`` keeps the interior rows of the full mass matrix so
    that loads of functions with nonzero boundary trace (e.g. f(0) != 0
    in the nonlinear term) pick up the boundary-adjacent contributions.
    """

    def __init__(self, mesh, M, K, m_coupling, interior_ids):
        self.mesh = mesh
        self.M = M
        self.K = K
        self.m_coupling = m_coupling
        self.interior_ids = interior_ids
        self._eig = None

    @property
    def num_dofs(self) -> int:
        return self.M.shape[0]

    def interior_coords(self):
        return self.mesh.nodes[self.interior_ids]

    def full_values(self, values):
        """Extend an interior dof vector by the boundary zeros."""
        out = np.zeros(self.mesh.num_nodes)
        out[self.interior_ids] = values
        return out

    def eigenpairs(self, dense_threshold=4096):
        """Generalized eigenpairs of (K, M), eigenvectors M-orthonormal.

        Backed by a dense solve; refuses systems above the threshold.
        Cached after the first call.
        """
        if self.num_dofs > dense_threshold:
            raise UnsupportedSize(
                f"dense eigendecomposition capped at {dense_threshold} dofs, "
                f"system has {self.num_dofs}")
        if self._eig is None:
            lam, phi = scipy.linalg.eigh(self.K.toarray(), self.M.toarray())
            self._eig = (lam, phi)
        return self._eig


def assemble(mesh) -> FemSystem:
    """Assemble interior mass/stiffness matrices for a mesh."""
    M_full, K_full = assemble_full(mesh)
    interior_ids = np.flatnonzero(~mesh.boundary_mask)
    M = M_full[interior_ids][:, interior_ids].tocsr()
    K = K_full[interior_ids][:, interior_ids].tocsr()
    m_coupling = M_full[interior_ids].tocsr()
    M.sort_indices()
    K.sort_indices()
    m_coupling.sort_indices()
    return FemSystem(mesh, M, K, m_coupling, interior_ids)


@dataclass
class GridFunction:
    """Coefficients of a P1 function over interior dofs (boundary = 0)."""

    system: FemSystem
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.system.num_dofs,):
            raise ValueError(
                f"expected {self.system.num_dofs} interior values, "
                f"got shape {self.values.shape}")

    def full_values(self) -> np.ndarray:
        return self.system.full_values(self.values)

    def copy(self) -> "GridFunction":
        return GridFunction(self.system, self.values.copy())


def zero_function(sys: FemSystem) -> GridFunction:
    return GridFunction(sys, np.zeros(sys.num_dofs))


# ---------------------------------------------------------------------------
# quadrature rules in barycentric form: (weights summing to 1, bary coords)

_SIMPSON_1D = (np.array([1.0, 4.0, 1.0]) / 6.0,
               np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]))
_MIDEDGE_2D = (np.full(3, 1.0 / 3.0),
               np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]))


def _subdivided_rule(dim, s=4):
    """Composite midpoint/centroid rule on an s-fold uniform refinement."""
    if dim == 1:
        mids = (np.arange(s * s) + 0.5) / (s * s)
        bary = np.column_stack([1.0 - mids, mids])
        w = np.full(s * s, 1.0 / (s * s))
        return w, bary
    pts = []
    for i in range(s):
        for j in range(s - i):
            pts.append(((i + i + i + 1) / (3.0 * s), (j + j + j + 1) / (3.0 * s)))
            if i + j < s - 1:
                pts.append(((i + i + 1 + 1) / (3.0 * s), (j + j + 1 + 1) / (3.0 * s)))
    xi = np.array(pts)
    bary = np.column_stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]])
    w = np.full(len(pts), 1.0 / (s * s))
    return w, bary


def _load_vector(mesh, f, rule):
    """Assemble (f, phi_i) over all nodes with the given barycentric rule."""
    w, bary = rule
    conn = mesh.elements
    pts = mesh.nodes[conn]                       # (ne, nv, dim)
    measures = mesh.element_measures()
    xq = np.einsum("qv,evd->eqd", bary, pts)     # (ne, nq, dim)
    if mesh.dim == 1:
        fvals = f(xq[:, :, 0])
    else:
        fvals = f(xq[:, :, 0], xq[:, :, 1])
    fvals = np.broadcast_to(np.asarray(fvals, dtype=np.float64), xq.shape[:2])
    # contribution of quad point q to local vertex v: w_q * f_q * bary[q, v]
    loc = np.einsum("eq,q,qv->ev", fvals, w, bary) * measures[:, None]
    out = np.zeros(mesh.num_nodes)
    np.add.at(out, conn.ravel(), loc.ravel())
    return out


def l2_project(sys: FemSystem, f, *, subdivide=False) -> GridFunction:
    """L2 projection of a pointwise function onto the interior P1 space.

    The load is integrated with a rule exact for quadratics (Simpson in
    1D, edge midpoints in 2D); ``subdivide`` switches to a 16-cell
    composite midpoint rule per element for discontinuous data.
    """
    if subdivide:
        rule = _subdivided_rule(sys.mesh.dim)
    else:
        rule = _SIMPSON_1D if sys.mesh.dim == 1 else _MIDEDGE_2D
    load = _load_vector(sys.mesh, f, rule)[sys.interior_ids]
    diag = sys.M.diagonal()
    x, _ = conjugate_gradient(
        lambda v: sys.M @ v, load, tol=1e-12, maxiter=400,
        precond=lambda r: r / diag, context="l2_project mass solve")
    return GridFunction(sys, x)


def load_nonlinear(sys: FemSystem, u: GridFunction, f) -> np.ndarray:
    """Product-approximation load M * f(u): nodal interpolation of f(u_h).

    f is evaluated on all nodes (boundary values are zero, so f(0)
    enters through the coupling rows) and multiplied by the mass matrix.
    """
    if u.system is not sys:
        raise ValueError("grid function defined on a different system")
    fu = f(u.full_values())
    return sys.m_coupling @ fu


# ---------------------------------------------------------------------------
# norms

def l2_norm(sys: FemSystem, u: GridFunction) -> float:
    return float(np.sqrt(u.values @ (sys.M @ u.values)))


def l2_error(sys: FemSystem, u: GridFunction, ref: GridFunction, *, relative=False) -> float:
    d = u.values - ref.values
    err = float(np.sqrt(d @ (sys.M @ d)))
    if not relative:
        return err
    denom = l2_norm(sys, ref)
    if denom == 0.0:
        raise ValueError("relative error against a zero reference")
    return err / denom


def neg_norm(sys: FemSystem, u: GridFunction, mu: float, *, dense_threshold=4096) -> float:
    """Negative-order norm ||A_h^{-mu/2} u|| via the dense (K, M) eigenbases."""
    if not 0.0 < mu <= 1.0:
        raise ValueError(f"mu must lie in (0, 1], got {mu}")
    lam, phi = sys.eigenpairs(dense_threshold)
    coeff = phi.T @ (sys.M @ u.values)
    return float(np.sqrt(np.sum(lam ** (-mu) * coeff ** 2)))


# ---------------------------------------------------------------------------
# field output

def write_field_csv(gf: GridFunction, path):
    """Dump nodal values (boundary zeros included) as x[,y],value CSV."""
    mesh = gf.system.mesh
    vals = gf.full_values()
    with open(path, "w", encoding="utf-8") as fh:
        if mesh.dim == 1:
            fh.write("x,value\n")
            for x, v in zip(mesh.nodes[:, 0], vals):
                fh.write(f"{x:.12e},{v:.12e}\n")
        else:
            fh.write("x,y,value\n")
            for (x, y), v in zip(mesh.nodes, vals):
                fh.write(f"{x:.12e},{y:.12e},{v:.12e}\n")
