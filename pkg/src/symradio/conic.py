"""Solver-agnostic conic programs and the utilities the convexification needs.

A :class:`ConicProgram` is a linear objective over real variables together with
a list of :class:`ConeBlock` constraints.  Each block is a list of affine rows
``a_k . x + b_k`` that must lie, jointly, in one cone:

``zero``     every row equals 0
``nonneg``   every row is >= 0
``soc``      ``row[0] >= ||row[1:]||``
``rsoc``     ``2 row[0] row[1] >= ||row[2:]||^2`` with ``row[0], row[1] >= 0``
``psd``      the rows are the ``n*n`` entries (row-major) of a symmetric
             matrix that must be positive semidefinite

Quadratic terms are never stored natively; they are lowered to SOC epigraphs
by the callers (see :func:`square_le`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

CONE_KINDS = ("zero", "nonneg", "soc", "rsoc", "psd")


class ConicError(ValueError):
    """Raised for malformed programs or inputs violating a precondition."""


class Affine:
    """Sparse affine expression ``sum_k coef_k * x[k] + const``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict[int, float] | None = None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @classmethod
    def var(cls, index: int) -> "Affine":
        return cls({index: 1.0})

    @staticmethod
    def lift(other) -> "Affine":
        if isinstance(other, Affine):
            return other
        return Affine(const=float(other))

    def copy(self) -> "Affine":
        return Affine(self.terms, self.const)

    def __add__(self, other):
        other = Affine.lift(other)
        out = self.copy()
        for k, v in other.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        out.const += other.const
        return out

    __radd__ = __add__

    def __neg__(self):
        return Affine({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) + (-self)

    def __mul__(self, scalar):
        if isinstance(scalar, Affine):
            raise TypeError("Affine * Affine is not affine")
        s = float(scalar)
        return Affine({k: s * v for k, v in self.terms.items()}, s * self.const)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[k] for k, v in self.terms.items())

    def __repr__(self):
        body = " + ".join(f"{v:.6g}*x{k}" for k, v in sorted(self.terms.items()))
        return f"Affine({body or '0'} + {self.const:.6g})"


def affine_sum(items: Iterable) -> Affine:
    out = Affine()
    for it in items:
        out = out + it
    return out


@dataclass
class ConeBlock:
    kind: str
    rows: list[Affine]
    order: int = 0  # matrix order for psd blocks
    label: str = ""

    def __post_init__(self):
        if self.kind not in CONE_KINDS:
            raise ConicError(f"unknown cone kind {self.kind!r}")
        self.rows = [Affine.lift(r) for r in self.rows]
        n = len(self.rows)
        if n == 0:
            raise ConicError("empty cone block")
        if self.kind == "soc" and n < 2:
            raise ConicError("second-order cone needs at least 2 rows")
        if self.kind == "rsoc" and n < 3:
            raise ConicError("rotated cone needs at least 3 rows")
        if self.kind == "psd":
            if self.order <= 0:
                self.order = math.isqrt(n)
            if self.order * self.order != n:
                raise ConicError(f"psd block of order {self.order} needs {self.order ** 2} rows, got {n}")

    @property
    def dim(self) -> int:
        return len(self.rows)

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.array([r.value(x) for r in self.rows])

    def violation(self, x: np.ndarray) -> float:
        """Distance-like membership violation, scaled by ``1 + |entries|``."""
        v = self.values(x)
        scale = 1.0 + np.max(np.abs(v))
        if self.kind == "zero":
            return float(np.max(np.abs(v))) / scale
        if self.kind == "nonneg":
            return max(0.0, float(-np.min(v))) / scale
        if self.kind == "soc":
            return max(0.0, float(np.linalg.norm(v[1:]) - v[0])) / scale
        if self.kind == "rsoc":
            t = (v[0] + v[1]) / math.sqrt(2.0)
            s = (v[0] - v[1]) / math.sqrt(2.0)
            gap = math.hypot(s, float(np.linalg.norm(v[2:]))) - t
            return max(0.0, gap) / scale
        mat = v.reshape(self.order, self.order)
        mat = 0.5 * (mat + mat.T)
        return max(0.0, float(-np.linalg.eigvalsh(mat)[0])) / scale


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class ConicProgram:
    """Linear objective plus cone blocks over a growing set of real variables."""

    names: list[str] = field(default_factory=list)
    objective: Affine = field(default_factory=Affine)
    blocks: list[ConeBlock] = field(default_factory=list)

    @property
    def variable_count(self) -> int:
        return len(self.names)

    def add_variable(self, name: str) -> Affine:
        self.names.append(name)
        return Affine.var(len(self.names) - 1)

    def add_variables(self, name: str, count: int) -> list[Affine]:
        return [self.add_variable(f"{name}[{k}]") for k in range(count)]

    def add_hermitian(self, name: str, n: int) -> "HermitianVar":
        return HermitianVar(self, name, n)

    def add(self, block: ConeBlock) -> ConeBlock:
        self.blocks.append(block)
        return block

    def extend(self, blocks: Iterable[ConeBlock]) -> None:
        for b in blocks:
            self.add(b)

    def minimize(self, expr) -> None:
        self.objective = self.objective + expr

    def count(self, kind: str) -> int:
        return sum(1 for b in self.blocks if b.kind == kind)

    def max_violation(self, x: np.ndarray) -> float:
        return max((b.violation(x) for b in self.blocks), default=0.0)

    def to_text(self) -> str:
        """Plain-text standard form, one cone block per line."""

        def fmt(a: Affine) -> str:
            parts = [f"{v:+.12g}*{self.names[k]}" for k, v in sorted(a.terms.items())]
            if a.const or not parts:
                parts.append(f"{a.const:+.12g}")
            return " ".join(parts)

        lines = [f"variables {self.variable_count}", f"minimize {fmt(self.objective)}"]
        for b in self.blocks:
            tag = f"{b.kind}({b.order})" if b.kind == "psd" else f"{b.kind}({b.dim})"
            label = f" #{b.label}" if b.label else ""
            lines.append(f"{tag}{label}: " + " ; ".join(fmt(r) for r in b.rows))
        return "\n".join(lines) + "\n"


class HermitianVar:
    """Complex Hermitian ``n x n`` matrix variable stored as ``n^2`` reals."""

    def __init__(self, prog: ConicProgram, name: str, n: int):
        self.n = n
        self.re = [[None] * n for _ in range(n)]
        self.im = [[None] * n for _ in range(n)]
        for a in range(n):
            self.re[a][a] = prog.add_variable(f"{name}.re[{a},{a}]")
            self.im[a][a] = Affine()
            for b in range(a + 1, n):
                self.re[a][b] = prog.add_variable(f"{name}.re[{a},{b}]")
                self.im[a][b] = prog.add_variable(f"{name}.im[{a},{b}]")
                self.re[b][a] = self.re[a][b]
                self.im[b][a] = -self.im[a][b]

    def indices(self) -> list[int]:
        out = []
        for a in range(self.n):
            out.extend(self.re[a][a].terms)
            for b in range(a + 1, self.n):
                out.extend(self.re[a][b].terms)
                out.extend(self.im[a][b].terms)
        return out

    def trace(self) -> Affine:
        return affine_sum(self.re[a][a] for a in range(self.n))

    def inner(self, H: np.ndarray) -> Affine:
        """``Tr(X H)`` for Hermitian ``H`` (real-valued)."""
        H = np.asarray(H, dtype=complex)
        out = Affine()
        for a in range(self.n):
            out = out + self.re[a][a] * H[a, a].real
            for b in range(a + 1, self.n):
                out = out + self.re[a][b] * (2.0 * H[a, b].real) + self.im[a][b] * (2.0 * H[a, b].imag)
        return out

    def quad(self, v: np.ndarray) -> Affine:
        """``v^H X v``."""
        v = np.asarray(v, dtype=complex).reshape(-1)
        return self.inner(np.outer(v, v.conj()))

    def embedded_rows(self) -> list[Affine]:
        """Row-major entries of the real ``2n x 2n`` embedding ``[[Re, -Im], [Im, Re]]``."""
        n = self.n
        rows = []
        for r in range(2 * n):
            for c in range(2 * n):
                a, b = r % n, c % n
                if (r < n) == (c < n):
                    rows.append(self.re[a][b])
                elif r < n:
                    rows.append(-self.im[a][b])
                else:
                    rows.append(self.im[a][b])
        return rows

    def psd_block(self, label: str = "") -> ConeBlock:
        return ConeBlock("psd", self.embedded_rows(), order=2 * self.n, label=label)

    def equal_to(self, other: "HermitianVar", label: str = "") -> ConeBlock:
        rows = []
        for a in range(self.n):
            for b in range(a, self.n):
                rows.append(self.re[a][b] - other.re[a][b])
                if b > a:
                    rows.append(self.im[a][b] - other.im[a][b])
        return ConeBlock("zero", rows, label=label)

    def value(self, x: np.ndarray) -> np.ndarray:
        out = np.empty((self.n, self.n), dtype=complex)
        for a in range(self.n):
            for b in range(self.n):
                out[a, b] = self.re[a][b].value(x) + 1j * self.im[a][b].value(x)
        return out

    def assign(self, x: np.ndarray, X: np.ndarray) -> None:
        """Write a Hermitian matrix into the variable vector ``x`` (in place)."""
        for a in range(self.n):
            (k,) = self.re[a][a].terms
            x[k] = X[a, a].real
            for b in range(a + 1, self.n):
                (k,) = self.re[a][b].terms
                x[k] = X[a, b].real
                (k,) = self.im[a][b].terms
                x[k] = X[a, b].imag


# ---------------------------------------------------------------------------
# cone helpers used by the constructors


def square_le(u: Sequence, w, label: str = "") -> ConeBlock:
    """SOC block encoding ``||u||^2 <= w`` as ``w + 1 >= ||[w - 1, 2u]||``."""
    w = Affine.lift(w)
    rows = [w + 1.0, w - 1.0] + [2.0 * Affine.lift(ui) for ui in u]
    return ConeBlock("soc", rows, label=label)


def ge_square(a, w, label: str = "") -> ConeBlock:
    """SOC block ``1 + a >= ||[1 - a, 2w]||``, i.e. ``a >= w^2``."""
    a = Affine.lift(a)
    return ConeBlock("soc", [1.0 + a, 1.0 - a, 2.0 * Affine.lift(w)], label=label)


# ---------------------------------------------------------------------------
# Hermitian utilities


def _check_hermitian(A: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConicError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - A.conj().T), initial=0.0) > tol * scale:
        raise ConicError("matrix is not Hermitian")
    return A


def hermitian_to_real_psd(H: np.ndarray) -> np.ndarray:
    """Real symmetric embedding ``[[Re H, -Im H], [Im H, Re H]]``.

    PSD-ness is preserved and ``Tr(X H) = Tr(E(X) E(H)) / 2``.
    """
    H = _check_hermitian(H)
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


def max_eigpair(A: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and its unit eigenvector.

    The phase is fixed so that the first component with non-negligible
    magnitude is real and positive, which keeps linearization points
    reproducible.
    """
    A = _check_hermitian(A)
    A = 0.5 * (A + A.conj().T)
    w, V = np.linalg.eigh(A)
    lam = float(w[-1])
    v = V[:, -1]
    mags = np.abs(v)
    k = int(np.argmax(mags > 1e-8 * mags.max())) if mags.max() > 0 else 0
    if mags[k] > 0:
        v = v * (abs(v[k]) / v[k])
    return lam, v / np.linalg.norm(v)


def rank_residual(X: np.ndarray) -> float:
    """``(Tr X - lambda_max(X)) / Tr X``, zero for rank-one or null matrices."""
    X = np.asarray(X, dtype=complex)
    tr = float(np.trace(X).real)
    if tr <= 1e-300:
        return 0.0
    lam = float(np.linalg.eigvalsh(0.5 * (X + X.conj().T))[-1])
    return min(1.0, max(0.0, (tr - lam) / tr))


# ---------------------------------------------------------------------------
# exponential inequality via a chain of squaring cones


def exp_soc_chain(prog: ConicProgram, z, xi, M: int, label: str = "exp", z_ref: float = 0.0,
                  center: bool = False) -> tuple[list[Affine], list[ConeBlock]]:
    """Add the cone chain approximating ``1 + xi >= exp(z)``.

    Fresh auxiliaries ``zeta_1 .. zeta_{M+4}`` are created.  With
    ``x = z / 2^M`` the chain enforces

    * ``zeta_1 >= (1 + x)^2`` and ``zeta_2 >= (5/6 + x/2)^2``
    * ``zeta_3 >= zeta_1^2``
    * ``zeta_4 >= zeta_2 + zeta_3/24 + 19/72`` (so ``zeta_4`` bounds the
      degree-4 Taylor polynomial of ``exp(x)``)
    * ``zeta_q >= zeta_{q-1}^2`` for ``q = 5 .. M+4`` (``M`` squarings)
    * ``1 + xi >= zeta_{M+4}``

    ``z_ref`` only changes units: ``zeta_q`` for ``q >= 4`` is stored as
    ``c_q * w_q`` with ``c_q = exp(z_ref 2^(q-4) / 2^M)``.  Since
    ``c_q = c_{q-1}^2`` the squaring rows keep their form in ``w``, so the
    feasible set is unchanged while ``w`` stays of order one near
    ``z = z_ref``.  Without it the last squarings of a large ``z`` compare
    numbers of order ``exp(2 z)`` and the solver loses precision.

    ``center`` changes the approximation itself: the chain is applied to
    ``z - z_ref`` and the result multiplied by ``exp(z_ref)``.  The Taylor
    stage then works near zero, so the error stays small for large ``z``
    instead of growing like ``(z / 2^M)^5``.

    Returns the auxiliaries (as affine expressions in the original units)
    and the blocks (already added to ``prog``).
    """
    if M < 1:
        raise ConicError("approximation coefficient M must be >= 1")
    y = Affine.lift(z) - z_ref if center else Affine.lift(z)
    raw = prog.add_variables(f"{label}.zeta", M + 4)
    c = [1.0, 1.0, 1.0] + [math.exp(z_ref * 2.0 ** (k - M)) for k in range(M + 1)]
    zeta = raw[:3] + [ck * w for ck, w in zip(c[3:], raw[3:])]
    blocks = [
        ConeBlock("soc", [1.0 + raw[0], 1.0 - raw[0], 2.0 + 2.0 ** (1 - M) * y], label=f"{label}.b"),
        ConeBlock("soc", [1.0 + raw[1], 1.0 - raw[1], 5.0 / 3.0 + 2.0 ** (-M) * y], label=f"{label}.c"),
        ge_square(raw[2], raw[0], label=f"{label}.d"),
        ConeBlock("nonneg", [raw[3] - (raw[1] + raw[2] / 24.0 + 19.0 / 72.0) * (1.0 if center else 1.0 / c[3])],
                  label=f"{label}.e"),
    ]
    for q in range(4, M + 4):
        blocks.append(ge_square(raw[q], raw[q - 1], label=f"{label}.f{q + 1}"))
    blocks.append(ConeBlock("nonneg", [(1.0 + Affine.lift(xi)) * (1.0 / c[M + 3]) - raw[M + 3]], label=f"{label}.a"))
    prog.extend(blocks)
    return zeta, blocks


def exp_chain_value(z: float, M: int) -> float:
    """Smallest ``zeta_{M+4}`` the chain admits for a given ``z >= 0``."""
    if M < 1:
        raise ConicError("approximation coefficient M must be >= 1")
    x = z / 2.0**M
    zeta1 = (1.0 + x) ** 2
    zeta2 = (5.0 / 6.0 + 0.5 * x) ** 2
    zeta = zeta2 + zeta1**2 / 24.0 + 19.0 / 72.0
    for _ in range(M):
        zeta = zeta * zeta
    return zeta


# ---------------------------------------------------------------------------
# backend


def _svec_indices(n: int) -> list[tuple[int, int, float]]:
    """(row, col, scale) of the upper triangle in column-major order."""
    out = []
    s2 = math.sqrt(2.0)
    for c in range(n):
        for r in range(c + 1):
            out.append((r, c, 1.0 if r == c else s2))
    return out


def _lower(prog: ConicProgram):
    """Translate to clarabel's ``A x + s = b, s in K`` data."""
    import clarabel

    rows: list[Affine] = []
    cones = []
    for b in prog.blocks:
        if b.kind == "zero":
            rows.extend(b.rows)
            cones.append(clarabel.ZeroConeT(b.dim))
        elif b.kind == "nonneg":
            rows.extend(b.rows)
            cones.append(clarabel.NonnegativeConeT(b.dim))
        elif b.kind == "soc":
            rows.extend(b.rows)
            cones.append(clarabel.SecondOrderConeT(b.dim))
        elif b.kind == "rsoc":
            u, v = b.rows[0], b.rows[1]
            s2 = math.sqrt(2.0)
            rows.extend([(u + v) / s2, (u - v) / s2] + b.rows[2:])
            cones.append(clarabel.SecondOrderConeT(b.dim))
        else:
            n = b.order
            for r, c, s in _svec_indices(n):
                # symmetrize so slightly asymmetric encodings still map to svec
                rows.append(0.5 * s * (b.rows[r * n + c] + b.rows[c * n + r]))
            cones.append(clarabel.PSDTriangleConeT(n))
    ri, ci, vals = [], [], []
    bvec = np.empty(len(rows))
    for k, r in enumerate(rows):
        for j, v in r.terms.items():
            if v != 0.0:
                ri.append(k)
                ci.append(j)
                vals.append(-v)
        bvec[k] = r.const
    A = sp.csc_matrix((vals, (ri, ci)), shape=(len(rows), prog.variable_count))
    return A, bvec, cones


# Settings tried in order when the backend stalls on a poorly scaled program.
_FALLBACKS = (
    {},
    {"equilibrate_min_scaling": 1e-8, "equilibrate_max_scaling": 1e8, "equilibrate_max_iter": 50},
    {"direct_solve_method": "qdldl", "iterative_refinement_max_iter": 50, "static_regularization_constant": 1e-7},
)


def solve(program: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve a conic program with the clarabel interior-point backend.

    ``status == "optimal"`` is only reported when the backend converged and an
    independent re-check of every cone block holds within ``10 * tol``;
    anything else is reported as ``max_iter`` rather than returned silently.
    """
    import clarabel

    n = program.variable_count
    if n == 0:
        raise ConicError("program has no variables")
    if not program.blocks and not program.objective.terms:
        raise ConicError("program has neither objective nor constraints")
    A, b, cones = _lower(program)
    q = np.zeros(n)
    for k, v in program.objective.terms.items():
        q[k] += v
    P = sp.csc_matrix((n, n))
    # the backend runs tighter than the contract so the independent re-check has headroom
    inner = max(tol * 1e-2, 1e-12)
    status, x, pres, dres, iters = "max_iter", np.zeros(n), np.nan, np.nan, 0
    for extra in _FALLBACKS:
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = int(max_iter)
        settings.tol_gap_abs = inner
        settings.tol_gap_rel = inner
        settings.tol_feas = inner
        settings.tol_ktratio = min(1e-6, inner * 1e2)
        settings.presolve_enable = False
        for key, value in extra.items():
            setattr(settings, key, value)
        res = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
        x = np.asarray(res.x, dtype=float)
        status_name = str(res.status).split(".")[-1]
        iters += int(res.iterations)
        pres = float(getattr(res, "r_prim", np.nan))
        dres = float(getattr(res, "r_dual", np.nan))
        if status_name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            status = "infeasible"
        elif status_name in ("DualInfeasible", "AlmostDualInfeasible"):
            status = "unbounded"
        elif status_name in ("Solved", "AlmostSolved"):
            viol = program.max_violation(x)
            status = "optimal" if viol <= 10.0 * tol else "max_iter"
            pres = max(pres, viol) if np.isfinite(pres) else viol
        else:
            status = "max_iter"
        if status != "max_iter":
            break
    obj = program.objective.value(x) if x.size == n else float("nan")
    return ConicSolution(status, x, obj, pres, dres, iters)
