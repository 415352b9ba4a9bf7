"""Reduced-order morphing: snapshot POD offline, explicit reduced iteration online.

Displacement snapshots psi_i = phi_i - Id live on the reference mesh as
interleaved nodal vectors. The online iteration only touches boundary nodes:
a reduced morphing with coordinates alpha moves the reference boundary to
``X0_b + Z_b^T alpha`` and the matching residual is tested against the
boundary traces of the modes. No sparse system is assembled or factorised.
"""

from __future__ import annotations

import base64
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import distfield
from .distfield import build_index, check_tags
from .fem import (assemble_boundary_mass, assemble_mass, assemble_normal_penalty, assemble_rhs_lines,
                  assemble_rhs_points, edge_geometry)
from .mesh import Mesh2D, mesh_from_json, mesh_to_json_text, signed_areas
from .morph import MorphConfig, final_correction, point_targets, run
from .regress import GprModel, fit_feature_basis, gpr_train, shape_features

log = logging.getLogger(__name__)

MODEL_VERSION = 1
STATUSES = ("converged", "max_iter_gradient_large", "out_of_distribution")


class RomError(RuntimeError):
    pass


# -- POD ------------------------------------------------------------------

@dataclass
class PodBasis:
    """Mass-orthonormal modes of a snapshot family.

    ``modes`` is ``(n_modes, n_dof)``; ``eigenvalues`` holds all ``n``
    correlation eigenvalues in non-increasing order; ``coords[i, j]`` is the
    mass inner product of snapshot ``i`` with mode ``j``.
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    coords: np.ndarray

    @property
    def n_modes(self):
        return len(self.modes)

    def truncated(self, r):
        return PodBasis(self.modes[:r], self.eigenvalues, self.coords[:, :r])

    def project(self, fields, M):
        return np.atleast_2d(fields) @ (M @ self.modes.T)

    def reconstruct(self, alpha):
        return np.asarray(alpha) @ self.modes


def _mgram_schmidt(S, M):
    """M-orthonormal Q and upper-triangular R with S = R^T Q (classical
    Gram-Schmidt, each vector orthogonalised twice)."""
    n = len(S)
    Q = np.zeros_like(S)
    R = np.zeros((n, n))
    for i in range(n):
        v = S[i].copy()
        for _ in range(2):
            h = Q[:i] @ (M @ v)
            v -= h @ Q[:i]
            R[:i, i] += h
        nrm2 = v @ (M @ v)
        ref2 = S[i] @ (M @ S[i])
        if nrm2 > (1e-15) ** 2 * ref2 and nrm2 > 0:
            R[i, i] = np.sqrt(nrm2)
            Q[i] = v / R[i, i]
    return Q, R


def snapshot_pod(snapshots, M, rel_cutoff=1e-14):
    """Method of snapshots: eigenvalues and eigenvectors of C = S M S^T.

    C is factored as R^T R through an M-weighted QR of the snapshots and the
    spectrum is taken from the SVD of R. This keeps small eigenvalues accurate
    relative to sqrt(lambda_1 lambda_j) instead of lambda_1.
    """
    S = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if not np.any(S):
        raise RomError("all snapshots are zero")
    Q, R = _mgram_schmidt(S, M)
    U, sig, Wt = np.linalg.svd(R.T)
    lam = sig ** 2
    keep = lam > lam[0] * rel_cutoff
    Z = Wt[keep] @ Q
    # fix the sign of each mode for reproducibility
    sign = np.sign(Z[np.arange(len(Z)), np.argmax(np.abs(Z), axis=1)])
    Z *= sign[:, None]
    return PodBasis(Z, lam, S @ (M @ Z.T))


def orthonormality_error(basis, M):
    G = basis.modes @ (M @ basis.modes.T)
    return float(np.abs(G - np.eye(basis.n_modes)).max())


def truncation_error(snapshots, basis, M, r):
    """Sum over snapshots of the squared mass norm of the rank-r projection residual."""
    S = np.atleast_2d(snapshots)
    R = S - basis.coords[:, :r] @ basis.modes[:r]
    return float(np.sum(R * (M @ R.T).T))


def energy_r(eigenvalues, delta, rel_cutoff=1e-14):
    """Smallest r with (sum_{j>r} lambda_j) / (sum_j lambda_j) <= delta.

    Eigenvalues below ``rel_cutoff * lambda_1`` count as zero. Tail sums are
    accumulated directly instead of as one minus a partial sum.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    lam = np.where(lam > lam[0] * rel_cutoff, lam, 0.0)
    total = lam.sum()
    tail = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])  # tail[r] = sum_{j>r}
    for r in range(1, len(lam) + 1):
        if tail[r] <= delta * total:
            return r
    return len(lam)


def reconstructions_positive(reference, basis, r):
    X0 = reference.vertices
    for a in basis.coords[:, :r]:
        X = X0 + (a @ basis.modes[:r]).reshape(-1, 2)
        if not np.all(signed_areas(X, reference.triangles) > 0):
            return False
    return True


def select_r(basis, reference, mode="geometric", delta=5e-4, indices=None):
    """Smallest mode count meeting the energy or geometric criterion whose
    reconstructions of all training snapshots keep every triangle positive.

    Returns ``(r, errors)`` where ``errors[r-1]`` is the criterion value for r
    modes (geometric: max Delta2 over training targets; energy: tail ratio).
    """
    n = basis.n_modes
    errors = []
    if mode == "energy":
        r = energy_r(basis.eigenvalues, delta)
        r = min(r, n)
        while r < n and not reconstructions_positive(reference, basis, r):
            r += 1
        lam = basis.eigenvalues
        errors = [float(lam[k:].sum() / lam.sum()) for k in range(1, n + 1)]
        return r, errors
    if mode != "geometric":
        raise ValueError(f"unknown selection mode {mode!r}")
    if indices is None:
        raise ValueError("geometric selection needs the training targets")
    X0 = reference.vertices
    chosen = None
    for r in range(1, n + 1):
        worst = 0.0
        positive = True
        for a, idx in zip(basis.coords[:, :r], indices):
            X = X0 + (a @ basis.modes[:r]).reshape(-1, 2)
            if not np.all(signed_areas(X, reference.triangles) > 0):
                positive = False
            worst = max(worst, distfield.delta2(idx, reference.with_vertices(X)))
        errors.append(worst)
        if chosen is None and positive and worst < delta:
            chosen = r
            break
    if chosen is None:
        raise RomError(f"no mode count reaches the geometric tolerance {delta:g}")
    return chosen, errors


# -- reduced functional ---------------------------------------------------

class BoundaryView:
    """Boundary-only stand-in for a mesh: local node numbering of the boundary."""

    def __init__(self, reference, positions_b=None):
        nodes = reference.boundary_vertices
        local = -np.ones(reference.n_vertices, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        self.nodes = nodes
        self.boundary_edges = local[reference.boundary_edges]
        self.edge_tags = reference.edge_tags
        self.tag_names = reference.tag_names
        self.tracked_points = {k: int(local[v]) for k, v in reference.tracked_points.items()}
        self.vertices = reference.vertices[nodes] if positions_b is None else positions_b

    @property
    def n_vertices(self):
        return len(self.vertices)

    def moved(self, positions_b):
        new = object.__new__(BoundaryView)
        new.__dict__.update(self.__dict__)
        new.vertices = positions_b
        return new


def boundary_dofs(nodes):
    return np.stack([2 * nodes, 2 * nodes + 1], axis=1).ravel()


@dataclass
class ReducedModel:
    reference: Mesh2D
    modes: np.ndarray  # (r, 2N)
    eigenvalues: np.ndarray
    alpha_train: np.ndarray  # (n, r)
    feature_theta: np.ndarray  # (q, 2N)
    feature_coords: np.ndarray  # (n, q)
    initializer: Optional[GprModel]
    delta_geo: float
    delta_grad: float
    gamma_online: float
    max_iter_online: int
    beta1: float
    beta2: float
    line_form: str = "normal"
    scalar_model: Optional[GprModel] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._view = BoundaryView(self.reference)
        self._Zb = self.modes[:, boundary_dofs(self._view.nodes)]
        self._Mb = None

    @property
    def r(self):
        return len(self.modes)

    @property
    def q(self):
        return len(self.feature_theta)

    def boundary_positions(self, alpha):
        return self._view.vertices + (np.asarray(alpha) @ self._Zb).reshape(-1, 2)

    def positions(self, alpha):
        return self.reference.vertices + (np.asarray(alpha) @ self.modes).reshape(-1, 2)

    def is_valid(self, alpha):
        return bool(np.all(signed_areas(self.positions(alpha), self.reference.triangles) > 0))

    def features(self, target):
        """Feature coordinates d of a target boundary."""
        if self.q == 0:
            return np.zeros(0)
        if self._Mb is None:
            self._Mb = assemble_boundary_mass(self.reference, vector=True)
        D = shape_features(self.reference, target)
        return self.feature_theta @ (self._Mb @ D)

    def initial_alpha(self, target):
        if self.initializer is None:
            return np.zeros(self.r)
        return self.initializer.predict(self.features(target)[None, :])[0]


def _reduced_terms(model, alpha, index, targets):
    """B(alpha) and the boundary view at alpha."""
    view = model._view.moved(model.boundary_positions(alpha))
    D_edge = distfield.edge_vector_distance(index, view)
    b = assemble_rhs_lines(view, D_edge, model.beta2, model.line_form)
    if model.beta1 > 0 and targets:
        b = b + assemble_rhs_points(view, targets, model.beta1)
    # sign chosen so that alpha <- alpha - gamma B decreases the mismatch
    return -(model._Zb @ b), view


def reduced_functional_B(alpha, model, target):
    index = target if isinstance(target, distfield.BoundaryIndex) else build_index(target)
    targets = point_targets(model.reference, index)
    return _reduced_terms(model, np.asarray(alpha, dtype=float), index, targets)[0]


def online_iterate(alpha, model, target, gamma=None):
    """One explicit update alpha - gamma B(alpha)."""
    gamma = model.gamma_online if gamma is None else gamma
    return np.asarray(alpha, dtype=float) - gamma * reduced_functional_B(alpha, model, target)


def reduced_hessian(model):
    """Gauss-Newton matrix of the reduced matching residual at the reference."""
    v = model._view
    if model.line_form == "full":
        P = assemble_boundary_mass_view(v)
    else:
        P = assemble_normal_penalty(v.vertices, v.boundary_edges, 1.0)
    H = model.beta2 * (model._Zb @ (P @ model._Zb.T))
    if model.beta1 > 0:
        L, _ = edge_geometry(v.vertices, v.boundary_edges)
        for k in v.tracked_points.values():
            w = L[np.any(v.boundary_edges == k, axis=1)].sum() / 2
            z = model._Zb[:, [2 * k, 2 * k + 1]]
            H += model.beta1 * w * (z @ z.T)
    return 0.5 * (H + H.T)


def assemble_boundary_mass_view(view):
    L, _ = edge_geometry(view.vertices, view.boundary_edges)
    e = view.boundary_edges
    from .fem import EDGE_MASS

    Me = L[:, None, None] * EDGE_MASS[None]
    n = view.n_vertices
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return sp.kron(M, sp.identity(2), format="csr")


def auto_gamma(model):
    lam = np.linalg.eigvalsh(reduced_hessian(model))
    return float(1.0 / lam[-1])


@dataclass
class OnlineReport:
    alpha0: np.ndarray
    alpha: np.ndarray
    iterations: int
    initial_delta2: float
    delta2: float
    status: str
    grad_norm: float
    delta_grad: float
    history: list
    wall_time: float = 0.0

    def to_dict(self):
        return {"alpha0": self.alpha0.tolist(), "alpha": self.alpha.tolist(),
                "iterations": self.iterations, "initial_delta2": self.initial_delta2,
                "delta2": self.delta2, "status": self.status, "grad_norm": self.grad_norm,
                "delta_grad": self.delta_grad, "history": self.history,
                "recommendation": RECOMMENDATIONS[self.status]}


RECOMMENDATIONS = {
    "converged": "none",
    "max_iter_gradient_large": "increase the online iteration budget",
    "out_of_distribution": "increase r or fall back to a high-fidelity morphing and enrich the basis",
}


def online_solve(model, target, alpha0=None, delta_geo=None, delta_grad=None, max_iter=None,
                 gamma=None, max_halvings=12):
    """Explicit reduced iteration until Delta2 < delta_geo, then classify.

    At the iteration cap the reduced gradient norm eta decides between
    ``max_iter_gradient_large`` (eta >= delta_grad) and ``out_of_distribution``.
    """
    t0 = time.perf_counter()
    index = target if isinstance(target, distfield.BoundaryIndex) else build_index(target)
    check_tags(model.reference, index)
    delta_geo = model.delta_geo if delta_geo is None else delta_geo
    delta_grad = model.delta_grad if delta_grad is None else delta_grad
    max_iter = model.max_iter_online if max_iter is None else max_iter
    gamma = model.gamma_online if gamma is None else gamma
    targets = point_targets(model.reference, index)
    alpha = model.initial_alpha(index) if alpha0 is None else np.asarray(alpha0, dtype=float)
    alpha_init = alpha.copy()
    if not model.is_valid(alpha):
        log.warning("initial reduced morphing inverts elements; starting from alpha = 0")
        alpha = np.zeros(model.r)
    B, view = _reduced_terms(model, alpha, index, targets)
    d2 = distfield.delta2(index, view)
    history = [d2]
    m = 0
    while d2 >= delta_geo and m < max_iter:
        g = gamma
        for _ in range(max_halvings + 1):
            trial = alpha - g * B
            if model.is_valid(trial):
                break
            g *= 0.5
        else:
            log.warning("reduced update inverts elements at every step size; stopping at %d", m)
            break
        alpha = trial
        m += 1
        B, view = _reduced_terms(model, alpha, index, targets)
        d2 = distfield.delta2(index, view)
        history.append(d2)
    eta = float(np.linalg.norm(B))
    if d2 < delta_geo:
        status = "converged"
    elif eta >= delta_grad:
        status = "max_iter_gradient_large"
    else:
        status = "out_of_distribution"
    return OnlineReport(alpha_init, alpha, m, history[0], d2, status, eta, delta_grad, history,
                        time.perf_counter() - t0)


# -- offline workflow -----------------------------------------------------

@dataclass(frozen=True)
class OfflineConfig:
    morph: MorphConfig = field(default_factory=MorphConfig)
    correction: bool = True
    r_mode: str = "geometric"
    delta_geo: float = 5e-4
    delta_pod: float = 1e-6
    r: Optional[int] = None
    q: int = 5
    gamma_online: Optional[float] = None
    max_iter_online: int = 300
    gpr_restarts: int = 5
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.r_mode not in ("geometric", "energy"):
            raise ValueError("r_mode must be 'geometric' or 'energy'")
        if not self.delta_geo > 0:
            raise ValueError("delta_geo must be positive")
        if self.q < 0:
            raise ValueError("q must be non-negative")
        if self.max_iter_online < 0:
            raise ValueError("max_iter_online must be non-negative")
        if self.gamma_online is not None and not self.gamma_online > 0:
            raise ValueError("gamma_online must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        m = d.pop("morph", None)
        return cls(morph=MorphConfig.from_dict(m) if m is not None else MorphConfig(), **d)


@dataclass
class OfflineReport:
    results: list
    basis: PodBasis
    r: int
    r_errors: list
    morph_times: list
    iterations: list
    snapshots: np.ndarray = field(repr=False, default=None)


def _morph_one(args):
    reference, target, cfg, correction = args
    t0 = time.perf_counter()
    res = run(reference, target, cfg.morph)
    if res.converged and correction:
        res = final_correction(res, target, cfg.morph)
    return res, time.perf_counter() - t0


def offline_workflow(reference, targets, cfg=OfflineConfig()):
    """Morph every training target, build the POD basis, the feature basis,
    the GP initialiser and the gradient threshold."""
    if len(targets) == 0:
        raise RomError("no training targets")
    indices = [t if isinstance(t, distfield.BoundaryIndex) else build_index(t) for t in targets]
    jobs = [(reference, idx.target, cfg, cfg.correction) for idx in indices]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            outs = list(ex.map(_morph_one, jobs))
    else:
        outs = [_morph_one(j) for j in jobs]
    results, times = [], []
    for i, (res, dt) in enumerate(outs):
        if not res.converged:
            raise RomError(f"training target {i} did not converge ({res.status}, "
                           f"delta2={res.delta2:.3g})")
        results.append(res)
        times.append(dt)
    S = np.stack([r.displacement.ravel() for r in results])
    M = assemble_mass(reference, vector=True)
    basis = snapshot_pod(S, M)
    if cfg.r is not None:
        r, r_err = min(cfg.r, basis.n_modes), []
    elif cfg.r_mode == "geometric":
        r, r_err = select_r(basis, reference, "geometric", cfg.delta_geo, indices)
    else:
        r, r_err = select_r(basis, reference, "energy", cfg.delta_pod)
    alpha = basis.coords[:, :r]
    Mb = assemble_boundary_mass(reference, vector=True)
    feats = np.stack([shape_features(reference, idx) for idx in indices])
    fb = fit_feature_basis(feats, Mb, cfg.q)
    init = gpr_train(fb.coords, alpha, cfg.gpr_restarts, cfg.seed) if fb.q > 0 else None
    el = cfg.morph.elastic
    model = ReducedModel(reference, basis.modes[:r], basis.eigenvalues, alpha, fb.theta, fb.coords,
                         init, cfg.delta_geo, 0.0, 1.0, cfg.max_iter_online, el.beta1, el.beta2,
                         el.line_form, meta={"config": cfg.to_dict()})
    gamma = cfg.gamma_online if cfg.gamma_online is not None else auto_gamma(model)
    grads = []
    for a, idx in zip(alpha, indices):
        grads.append(np.linalg.norm(reduced_functional_B(a, model, idx)))
    model = replace(model, gamma_online=gamma, delta_grad=float(np.mean(grads)))
    report = OfflineReport(results, basis, r, r_err, times, [res.iterations for res in results], S)
    return model, report


# -- persistence ----------------------------------------------------------

def _enc(a):
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    return {"__ndarray__": base64.b64encode(a.tobytes()).decode("ascii"), "shape": list(a.shape)}


def _dec(d):
    raw = base64.b64decode(d["__ndarray__"])
    return np.frombuffer(raw, dtype=np.float64).reshape(d["shape"]).copy()


def _gpr_doc(g):
    return None if g is None else {k: _enc(v) for k, v in g.to_arrays().items()}


def _gpr_load(d):
    return None if d is None else GprModel.from_arrays({k: _dec(v) for k, v in d.items()})


def model_to_json(model):
    doc = {
        "version": MODEL_VERSION,
        "reference": json.loads(mesh_to_json_text(model.reference)),
        "modes": _enc(model.modes),
        "eigenvalues": _enc(model.eigenvalues),
        "alpha_train": _enc(model.alpha_train),
        "feature_theta": _enc(model.feature_theta),
        "feature_coords": _enc(model.feature_coords),
        "initializer": _gpr_doc(model.initializer),
        "scalar_model": _gpr_doc(model.scalar_model),
        "delta_geo": model.delta_geo,
        "delta_grad": model.delta_grad,
        "gamma_online": model.gamma_online,
        "max_iter_online": model.max_iter_online,
        "beta1": model.beta1,
        "beta2": model.beta2,
        "line_form": model.line_form,
        "meta": model.meta,
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_model(model, path):
    Path(path).write_text(model_to_json(model))


def load_model(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MODEL_VERSION:
        raise RomError(f"unsupported model version {doc.get('version')!r}")
    return ReducedModel(
        mesh_from_json(doc["reference"]), _dec(doc["modes"]), _dec(doc["eigenvalues"]),
        _dec(doc["alpha_train"]), _dec(doc["feature_theta"]), _dec(doc["feature_coords"]),
        _gpr_load(doc["initializer"]), doc["delta_geo"], doc["delta_grad"], doc["gamma_online"],
        doc["max_iter_online"], doc["beta1"], doc["beta2"], doc["line_form"],
        _gpr_load(doc["scalar_model"]), doc["meta"])
