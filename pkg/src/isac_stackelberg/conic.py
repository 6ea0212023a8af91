"""Solver-agnostic conic programs.

A program is ``min c^T x`` subject to a list of affine maps ``G x + h``
constrained to lie in cones.  Supported cones:

* ``zero``, ``nonnegative``
* ``second_order``: ``(t, z)`` with ``t >= ||z||``
* ``rotated_second_order``: ``(t, y, z)`` with ``2 t y >= ||z||^2``, ``t, y >= 0``
* ``exponential``: ``(x, y, z)`` with ``y exp(x / y) <= z``, ``y > 0``
* ``psd_triangle``: ``svec`` of a symmetric ``m x m`` matrix (upper triangle,
  column major, off-diagonals scaled by sqrt(2)) that must be PSD

Complex Hermitian PSD variables are hosted through the real embedding
``X -> [[Re X, -Im X], [Im X, Re X]]`` (:class:`HermitianEmbedding`).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SQRT2 = math.sqrt(2.0)
KINDS = ("zero", "nonnegative", "second_order", "rotated_second_order", "exponential", "psd_triangle")
REDUCED_FEAS_TOL = 1e-6
REDUCED_GAP_TOL = 1e-5
STATUSES = ("Optimal", "Infeasible", "Unbounded", "NumericalTrouble", "IterationLimit")


class BackendUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class ConeSpec:
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cone {self.kind!r}")
        if self.kind == "exponential" and self.dim != 3:
            raise ValueError("exponential cone blocks have dimension 3")
        if self.kind == "rotated_second_order" and self.dim < 2:
            raise ValueError("rotated second-order cone needs dim >= 2")
        if self.kind == "psd_triangle" and psd_order(self.dim) is None:
            raise ValueError(f"{self.dim} is not a triangular number")

    @property
    def order(self) -> int:
        """Matrix order for PSD blocks."""
        return psd_order(self.dim)


def psd_order(dim: int) -> int | None:
    m = int(round((math.sqrt(8 * dim + 1) - 1) / 2))
    return m if m * (m + 1) // 2 == dim else None


@dataclass
class Constraint:
    G: sp.csr_matrix
    h: np.ndarray
    cone: ConeSpec
    name: str = ""


@dataclass
class ConicSolution:
    status: str
    primal: np.ndarray | None
    objective_value: float | None
    iterations: int = 0
    solve_time: float = 0.0
    raw_status: str = ""

    def __post_init__(self):
        assert (self.primal is not None) == (self.status == "Optimal")


class ConicProgram:
    """Incrementally built conic program (single owner while building)."""

    def __init__(self):
        self.n_vars = 0
        self.var_names: list[str] = []
        self.var_roles: dict[str, str] = {}
        self._blocks: dict[str, np.ndarray] = {}
        self._c: list[float] = []
        self.constraints: list[Constraint] = []

    # variables -----------------------------------------------------------
    def add_variable(self, name: str, size: int = 1, role: str = "") -> np.ndarray:
        """Append ``size`` scalar variables; returns their column indices."""
        if name in self._blocks:
            raise ValueError(f"duplicate variable block {name!r}")
        idx = np.arange(self.n_vars, self.n_vars + size)
        self.n_vars += size
        self.var_names += [f"{name}[{i}]" for i in range(size)]
        self._c += [0.0] * size
        self._blocks[name] = idx
        self.var_roles[name] = role
        return idx

    def block(self, name: str) -> np.ndarray:
        return self._blocks[name]

    @property
    def objective(self) -> np.ndarray:
        return np.asarray(self._c, dtype=float)

    def set_objective(self, c) -> None:
        c = np.asarray(c, dtype=float).ravel()
        if c.size > self.n_vars:
            raise ValueError("objective longer than variable vector")
        self._c = list(np.pad(c, (0, self.n_vars - c.size)))

    # constraints ---------------------------------------------------------
    def add_constraint(self, G, h, cone: ConeSpec, name: str = "") -> int:
        """Constrain ``G x + h`` to ``cone``; returns the constraint id.

        ``G`` may have fewer columns than ``n_vars`` (trailing zeros implied).
        """
        G = sp.csr_matrix(G, dtype=float)
        h = np.asarray(h, dtype=float).ravel()
        if G.shape[1] < self.n_vars:
            G = sp.hstack([G, sp.csr_matrix((G.shape[0], self.n_vars - G.shape[1]))], format="csr")
        if G.shape[1] != self.n_vars:
            raise ValueError("affine map has more columns than variables")
        if G.shape[0] != cone.dim or h.size != cone.dim:
            raise ValueError(f"affine map has {G.shape[0]} rows for a {cone.kind} cone of dim {cone.dim}")
        self.constraints.append(Constraint(G, h, cone, name))
        return len(self.constraints) - 1

    def add_rows(self, rows: list[dict[int, float]], h, kind: str, name: str = "") -> int:
        """Sparse-dict convenience: ``rows[i]`` maps column index -> coefficient."""
        data, ri, ci = [], [], []
        for r, row in enumerate(rows):
            for j, v in row.items():
                ri.append(r)
                ci.append(int(j))
                data.append(float(v))
        G = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), self.n_vars))
        return self.add_constraint(G, h, ConeSpec(kind, len(rows)), name)

    def count(self, kind: str) -> int:
        return sum(1 for c in self.constraints if c.cone.kind == kind)

    def stacked(self) -> tuple[sp.csr_matrix, np.ndarray, list[ConeSpec]]:
        n = self.n_vars
        Gs = [sp.csr_matrix((c.G.shape[0], n)) if c.G.shape[1] < n else c.G for c in self.constraints]
        for i, c in enumerate(self.constraints):
            if c.G.shape[1] < n:
                Gs[i] = sp.hstack([c.G, sp.csr_matrix((c.G.shape[0], n - c.G.shape[1]))], format="csr")
        G = sp.vstack(Gs, format="csr") if Gs else sp.csr_matrix((0, n))
        h = np.concatenate([c.h for c in self.constraints]) if self.constraints else np.zeros(0)
        return G, h, [c.cone for c in self.constraints]


# ------------------------------------------------------------------ cones

def cone_violation(kind: str, v: np.ndarray, tol: float = 0.0) -> float:
    """Nonnegative violation measure of ``v`` against ``kind`` (0 means inside).

    Relative measures are used where the cone is homogeneous so that the
    check is meaningful at any scale.
    """
    v = np.asarray(v, dtype=float)
    scale = max(1.0, float(np.max(np.abs(v)))) if v.size else 1.0
    if kind == "zero":
        return float(np.max(np.abs(v))) / scale if v.size else 0.0
    if kind == "nonnegative":
        return float(max(0.0, -np.min(v))) / scale if v.size else 0.0
    if kind == "second_order":
        return max(0.0, float(np.linalg.norm(v[1:]) - v[0])) / scale
    if kind == "rotated_second_order":
        t, y, z = v[0], v[1], v[2:]
        lhs = 2.0 * t * y
        return max(0.0, -t / scale, -y / scale, float(z @ z - lhs) / scale ** 2)
    if kind == "exponential":
        x, y, z = v
        if not y > 0:
            return math.inf
        val = y * math.exp(min(x / y, 700.0))
        return max(0.0, val - z * (1.0 + tol)) / max(1.0, abs(z))
    if kind == "psd_triangle":
        M = smat(v)
        return max(0.0, -float(np.linalg.eigvalsh(M)[0])) / scale
    raise ValueError(kind)


def in_cone(kind: str, v, tol: float = 1e-8) -> bool:
    if kind == "exponential":
        # tol already enters as the relative factor on z
        return cone_violation(kind, v, tol) == 0.0
    return cone_violation(kind, v, tol) <= tol


def svec(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    out = []
    for j in range(n):
        for i in range(j + 1):
            out.append(M[i, j] if i == j else SQRT2 * M[i, j])
    return np.asarray(out, dtype=float)


def smat(v: np.ndarray) -> np.ndarray:
    n = psd_order(len(v))
    M = np.zeros((n, n))
    k = 0
    for j in range(n):
        for i in range(j + 1):
            if i == j:
                M[i, i] = v[k]
            else:
                M[i, j] = M[j, i] = v[k] / SQRT2
            k += 1
    return M


# ------------------------------------------------------------------ Hermitian embedding

class HermitianEmbedding:
    """Real parametrisation of an ``m x m`` complex Hermitian matrix.

    Parameters are ``m^2`` reals: the diagonal, then ``Re X_ij`` and
    ``Im X_ij`` for ``i < j``.  ``svec_map`` sends them to the svec of the
    real symmetric ``2m x 2m`` embedding, which is PSD iff ``X`` is.
    """

    def __init__(self, m: int):
        if m < 1:
            raise ValueError("m >= 1")
        self.m = m
        self.upper = [(i, j) for i in range(m) for j in range(i + 1, m)]
        self.n_params = m * m
        self.svec_dim = 2 * m * (2 * m + 1) // 2
        self.svec_map = self._build_map()

    def to_params(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        re = [X[i, j].real for i, j in self.upper]
        im = [X[i, j].imag for i, j in self.upper]
        return np.concatenate([np.real(np.diag(X)), re, im])

    def from_params(self, x: np.ndarray) -> np.ndarray:
        m = self.m
        X = np.diag(np.asarray(x[:m], dtype=complex))
        nu = len(self.upper)
        for k, (i, j) in enumerate(self.upper):
            X[i, j] = x[m + k] + 1j * x[m + nu + k]
            X[j, i] = np.conj(X[i, j])
        return X

    @staticmethod
    def embed(X: np.ndarray) -> np.ndarray:
        A, B = np.real(X), np.imag(X)
        return np.block([[A, -B], [B, A]])

    @staticmethod
    def extract(M: np.ndarray) -> np.ndarray:
        m = M.shape[0] // 2
        return 0.5 * (M[:m, :m] + M[m:, m:]) + 0.5j * (M[m:, :m] - M[:m, m:])

    def _build_map(self) -> np.ndarray:
        # columns: image of each unit parameter vector
        E = np.zeros((self.svec_dim, self.n_params))
        for k in range(self.n_params):
            e = np.zeros(self.n_params)
            e[k] = 1.0
            E[:, k] = svec(self.embed(self.from_params(e)))
        return E

    def trace_coeffs(self, H: np.ndarray) -> np.ndarray:
        """Vector ``c`` with ``Re tr(H X) = c @ params(X)`` for Hermitian ``H``."""
        m = self.m
        d = np.real(np.diag(H))
        re = [2.0 * H[i, j].real for i, j in self.upper]
        im = [2.0 * H[i, j].imag for i, j in self.upper]
        return np.concatenate([d, re, im])


def hermitian_embed(m: int) -> HermitianEmbedding:
    return HermitianEmbedding(m)


# ------------------------------------------------------------------ solving

def _clarabel_solve(prog: ConicProgram, tol: float, max_iter: int, verbose: bool,
                    gap_tol: float = REDUCED_GAP_TOL) -> ConicSolution:
    import clarabel

    G, h, cones = prog.stacked()
    rows_A, rows_b, cl_cones = [], [], []
    offset = 0
    for cone in cones:
        Gi = G[offset:offset + cone.dim]
        hi = h[offset:offset + cone.dim]
        offset += cone.dim
        if cone.kind == "rotated_second_order":
            T = sp.lil_matrix((cone.dim, cone.dim))
            T[0, 0] = T[0, 1] = T[1, 0] = 1.0 / SQRT2
            T[1, 1] = -1.0 / SQRT2
            for r in range(2, cone.dim):
                T[r, r] = 1.0
            T = T.tocsr()
            Gi, hi = T @ Gi, T @ hi
            cl_cones.append(clarabel.SecondOrderConeT(cone.dim))
        elif cone.kind == "zero":
            cl_cones.append(clarabel.ZeroConeT(cone.dim))
        elif cone.kind == "nonnegative":
            cl_cones.append(clarabel.NonnegativeConeT(cone.dim))
        elif cone.kind == "second_order":
            cl_cones.append(clarabel.SecondOrderConeT(cone.dim))
        elif cone.kind == "exponential":
            cl_cones.append(clarabel.ExponentialConeT())
        elif cone.kind == "psd_triangle":
            cl_cones.append(clarabel.PSDTriangleConeT(cone.order))
        rows_A.append(-Gi)
        rows_b.append(hi)
    A = sp.vstack(rows_A, format="csc") if rows_A else sp.csc_matrix((0, prog.n_vars))
    b = np.concatenate(rows_b) if rows_b else np.zeros(0)
    n = prog.n_vars
    P = sp.csc_matrix((n, n))

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = min(1e-6, tol * 100)
    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, prog.objective, A, b, cl_cones, settings)
    res = solver.solve()
    elapsed = time.perf_counter() - t0
    raw = str(res.status)
    x = np.asarray(res.x, dtype=float)
    iters = int(getattr(res, "iterations", 0))

    if raw == "Solved":
        status = "Optimal"
    elif raw in ("AlmostSolved", "InsufficientProgress", "MaxIterations"):
        # reduced accuracy: keep the point only if it is primal feasible on
        # independent re-check and the duality gap is small
        pobj, dobj = float(res.obj_val), float(getattr(res, "obj_val_dual", res.obj_val))
        gap = abs(pobj - dobj) / max(1.0, abs(pobj))
        feas = np.all(np.isfinite(x)) and max(constraint_violations(prog, x), default=0.0) <= REDUCED_FEAS_TOL
        if feas and gap <= gap_tol:
            status = "Optimal"
        else:
            status = "IterationLimit" if raw == "MaxIterations" else "NumericalTrouble"
    elif raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = "Infeasible"
    elif raw in ("DualInfeasible", "AlmostDualInfeasible"):
        status = "Unbounded"
    else:
        status = "NumericalTrouble"
    if status != "Optimal":
        return ConicSolution(status, None, None, iters, elapsed, raw)
    return ConicSolution(status, x, float(prog.objective @ x), iters, elapsed, raw)


_BACKENDS = {"clarabel": _clarabel_solve}


def register_backend(name: str, fn) -> None:
    _BACKENDS[name] = fn


def available_backends() -> list[str]:
    out = []
    for name in _BACKENDS:
        if name == "clarabel":
            try:
                import clarabel  # noqa: F401
            except ImportError:
                continue
        out.append(name)
    return out


def solve(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 200,
          backend: str | None = None, verbose: bool = False,
          gap_tol: float = REDUCED_GAP_TOL) -> ConicSolution:
    """Solve ``prog``; returns an Optimal point or a definitive non-optimal status.

    ``gap_tol`` bounds the relative duality gap accepted when the solver
    stalls short of ``tol`` on a point that is still primal feasible.
    """
    names = available_backends()
    if not names or (backend is not None and backend not in names):
        raise BackendUnavailable(backend or "no conic backend registered")
    return _BACKENDS[backend or names[0]](prog, tol, max_iter, verbose, gap_tol)


def constraint_violations(prog: ConicProgram, x: np.ndarray) -> list[float]:
    """Independent re-evaluation of every cone membership at ``x``."""
    return [cone_violation(c.cone.kind, c.G @ x + c.h) for c in prog.constraints]


# ------------------------------------------------------------------ CBF export

_CBF_KIND = {"zero": "L=", "nonnegative": "L+", "second_order": "Q", "rotated_second_order": "QR"}


def write_cbf(prog: ConicProgram, path: str | Path) -> None:
    """Dump ``prog`` in the Conic Benchmark Format (version 3).

    Rotated cones map to CBF ``QR`` after halving the first coordinate
    (CBF uses ``2 x1 x2 >= ||x3:||^2`` with the same scaling as here, so the
    map is the identity).  Exponential triples are reversed, since CBF's
    ``EXP`` is ``x1 >= x2 exp(x3 / x2)``.  PSD blocks become ``PSDCON``.
    """
    lines = ["VER", "3", "", "OBJSENSE", "MIN", "", "VAR", f"{prog.n_vars} 1", f"F {prog.n_vars}", ""]
    scalar = [c for c in prog.constraints if c.cone.kind != "psd_triangle"]
    psd = [c for c in prog.constraints if c.cone.kind == "psd_triangle"]

    if psd:
        lines += ["PSDCON", str(len(psd))] + [str(c.cone.order) for c in psd] + [""]
    if scalar:
        total = sum(c.cone.dim for c in scalar)
        lines += ["CON", f"{total} {len(scalar)}"]
        for c in scalar:
            lines.append(f"{_CBF_KIND.get(c.cone.kind, 'EXP')} {c.cone.dim}")
        lines.append("")

    obj = [(j, v) for j, v in enumerate(prog.objective) if v != 0.0]
    lines += ["OBJACOORD", str(len(obj))] + [f"{j} {float(v)!r}" for j, v in obj] + [""]

    acoord, bcoord = [], []
    row = 0
    for c in scalar:
        G, h = c.G.tocoo(), c.h
        perm = [2, 1, 0] if c.cone.kind == "exponential" else list(range(c.cone.dim))
        inv = {src: dst for dst, src in enumerate(perm)}
        for i, j, v in zip(G.row, G.col, G.data):
            if v != 0.0:
                acoord.append(f"{row + inv[i]} {j} {float(v)!r}")
        for i, v in enumerate(h):
            if v != 0.0:
                bcoord.append(f"{row + inv[i]} {float(v)!r}")
        row += c.cone.dim
    if acoord:
        lines += ["ACOORD", str(len(acoord))] + acoord + [""]
    if bcoord:
        lines += ["BCOORD", str(len(bcoord))] + bcoord + [""]

    hcoord, dcoord = [], []
    for k, c in enumerate(psd):
        pairs = [(i, j) for j in range(c.cone.order) for i in range(j + 1)]
        G, h = c.G.tocoo(), c.h
        for r, var, v in zip(G.row, G.col, G.data):
            i, j = pairs[r]
            coef = v if i == j else v / SQRT2
            if coef != 0.0:
                hcoord.append(f"{k} {var} {j} {i} {float(coef)!r}")
        for r, v in enumerate(h):
            i, j = pairs[r]
            coef = v if i == j else v / SQRT2
            if coef != 0.0:
                dcoord.append(f"{k} {j} {i} {float(coef)!r}")
    if hcoord:
        lines += ["HCOORD", str(len(hcoord))] + hcoord + [""]
    if dcoord:
        lines += ["DCOORD", str(len(dcoord))] + dcoord + [""]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cbf(path: str | Path) -> ConicProgram:
    """Parse the subset of CBF produced by :func:`write_cbf`."""
    toks = [ln.strip() for ln in Path(path).read_text().splitlines()]
    toks = [t for t in toks if t and not t.startswith("#")]
    i = 0
    n = 0
    cons: list[tuple[str, int]] = []
    psd_orders: list[int] = []
    obj: dict[int, float] = {}
    acoord, bcoord, hcoord, dcoord = [], [], [], []
    rev = {v: k for k, v in _CBF_KIND.items()}
    rev["EXP"] = "exponential"
    while i < len(toks):
        key = toks[i]
        i += 1
        if key in ("VER", "OBJSENSE"):
            i += 1
        elif key == "VAR":
            n = int(toks[i].split()[0])
            i += 2
        elif key == "PSDCON":
            cnt = int(toks[i]); i += 1
            psd_orders = [int(toks[i + k]) for k in range(cnt)]
            i += cnt
        elif key == "CON":
            cnt = int(toks[i].split()[1]); i += 1
            for k in range(cnt):
                kind, dim = toks[i + k].split()
                cons.append((rev[kind], int(dim)))
            i += cnt
        else:
            cnt = int(toks[i]); i += 1
            body = [toks[i + k].split() for k in range(cnt)]
            i += cnt
            if key == "OBJACOORD":
                obj = {int(a): float(b) for a, b in body}
            elif key == "ACOORD":
                acoord = body
            elif key == "BCOORD":
                bcoord = body
            elif key == "HCOORD":
                hcoord = body
            elif key == "DCOORD":
                dcoord = body
    prog = ConicProgram()
    prog.add_variable("x", n)
    c = np.zeros(n)
    for j, v in obj.items():
        c[j] = v
    prog.set_objective(c)

    total = sum(d for _, d in cons)
    G = np.zeros((total, n))
    h = np.zeros(total)
    for r, j, v in acoord:
        G[int(r), int(j)] = float(v)
    for r, v in bcoord:
        h[int(r)] = float(v)
    row = 0
    for kind, dim in cons:
        Gi, hi = G[row:row + dim].copy(), h[row:row + dim].copy()
        if kind == "exponential":
            Gi, hi = Gi[::-1], hi[::-1]
        prog.add_constraint(Gi, hi, ConeSpec(kind, dim))
        row += dim
    for k, m in enumerate(psd_orders):
        pairs = {(i, j): r for r, (i, j) in enumerate((i, j) for j in range(m) for i in range(j + 1))}
        dim = m * (m + 1) // 2
        Gk, hk = np.zeros((dim, n)), np.zeros(dim)
        for kk, var, a, b, v in hcoord:
            if int(kk) == k:
                i, j = int(b), int(a)
                Gk[pairs[(i, j)], int(var)] = float(v) * (1.0 if i == j else SQRT2)
        for kk, a, b, v in dcoord:
            if int(kk) == k:
                i, j = int(b), int(a)
                hk[pairs[(i, j)]] = float(v) * (1.0 if i == j else SQRT2)
        prog.add_constraint(Gk, hk, ConeSpec("psd_triangle", dim))
    return prog
