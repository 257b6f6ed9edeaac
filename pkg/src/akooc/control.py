"""LQR synthesis on the identified lifted model, with stability diagnostics.

The lifted state is ``χ = [Δθ; ΔV; sinΔθ; cosΔθ; Δω]`` (blocks of ``n_der``)
and the input is ``u = [ΔP*; ΔQ*]``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AkoocError,
    DegenerateWindow,
    InsufficientHistory,
    NegativeDiscriminant,
    NonFiniteUpdate,
    RiccatiDivergence,
    SingularInnerMatrix,
)
from .koopman import (
    PINV_RTOL,
    EnsembleLearner,
    LearnerParams,
    assemble_window,
    embed,
    fit_full_no_ensemble,
)

DARE_TOL = 1e-10
DARE_MAX_ITER = 10_000
DARE_BLOWUP = 1e12
DARE_STALL = 64
DARE_STALL_TOL = np.sqrt(np.finfo(float).eps)

AKOOC = "akooc"
KOOPMAN_LINEAR = "koopman-linear"
KOOPMAN_FULL = "koopman-full-no-ensemble"
MODEL_KINDS = (AKOOC, KOOPMAN_LINEAR, KOOPMAN_FULL)


def solve_dare(A, B, Q, R, tol: float = DARE_TOL, max_iter: int = DARE_MAX_ITER) -> np.ndarray:
    """Stabilizing solution of the discrete Riccati equation by fixed-point iteration.

    Iterates ``S ← Q + Aᵀ(S − S B (R + BᵀSB)⁻¹ BᵀS)A`` from ``S₀ = Q`` until the
    largest entrywise change drops below ``tol·max(1, ‖S‖_max)``.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, R))
    S = Q.copy()
    At, Bt = A.T, B.T
    scale = 1.0
    best, since_best = np.inf, 0
    for i in range(max_iter):
        BtS = Bt @ S
        try:
            G = np.linalg.solve(R + BtS @ B, BtS)
        except np.linalg.LinAlgError as exc:
            raise RiccatiDivergence(f"inner matrix became singular: {exc}") from exc
        S_new = Q + At @ ((S - BtS.T @ G) @ A)
        S_new += S_new.T
        S_new *= 0.5
        step = np.abs(S_new - S).max()
        S = S_new
        if not np.isfinite(step):
            raise RiccatiDivergence("Riccati iterates diverged")
        if step < tol or i % 8 == 0:
            size = np.abs(S).max()
            if size > DARE_BLOWUP:
                raise RiccatiDivergence("Riccati iterates diverged")
            # round-off in S is about eps·|S|, so large solutions need a scaled test
            scale = max(1.0, size)
        rel = step / scale
        if rel < tol:
            return S
        # a step stuck at the round-off floor stops improving; accept it there
        if rel < best:
            best, since_best = rel, 0
        else:
            since_best += 1
            if since_best >= DARE_STALL and best < DARE_STALL_TOL:
                return S
    raise RiccatiDivergence(f"Riccati iteration did not converge in {max_iter} steps")


def lqr_gain(A, B, S, R) -> np.ndarray:
    """``K = (R + BᵀSB)⁻¹ BᵀSA``."""
    A, B, S, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, S, R))
    inner = R + B.T @ S @ B
    if np.linalg.cond(inner) > 1e14:
        raise SingularInnerMatrix("R + BᵀSB is numerically singular")
    return np.linalg.solve(inner, B.T @ S @ A)


def compute_control(K, chi, u_lb, u_ub) -> np.ndarray:
    """Saturated state feedback ``clamp(−Kχ, u_lb, u_ub)``."""
    u = -np.asarray(K, dtype=float) @ np.asarray(chi, dtype=float)
    return np.clip(u, u_lb, u_ub)


def closed_loop_spectral_radius(A_C, B_C, K) -> float:
    M = np.atleast_2d(A_C) - np.atleast_2d(B_C) @ np.atleast_2d(K)
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass
class DiscMargins:
    """Per-channel gain margins; channels with a negative discriminant are NaN."""

    lower: np.ndarray
    upper: np.ndarray
    rho: float
    mu: float

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.lower) & np.isfinite(self.upper)

    def contains(self, m) -> bool:
        m = np.asarray(m, dtype=float)
        return bool(np.all(self.valid) and np.all((m > self.lower) & (m < self.upper)))


def disc_margins(Q, R, K, B_C, S, strict: bool = False) -> DiscMargins:
    """Gain margins ``G_L,i < m_i < G_U,i`` guaranteed by the Lyapunov disc argument.

    ``ρ = σ_min(Q)/σ_max(K)²``, ``μ = σ_max(B_CᵀSB_C)``. A channel whose
    discriminant is negative gets NaN bounds, or raises when ``strict``.
    """
    Q, R, K, B_C, S = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (Q, R, K, B_C, S))
    sq = np.linalg.svd(Q, compute_uv=False)
    sk = np.linalg.svd(K, compute_uv=False)
    mu = float(np.linalg.svd(B_C.T @ S @ B_C, compute_uv=False)[0])
    rho = float(sq[-1] / sk[0] ** 2) if sk[0] > 0 else np.inf
    r = np.diag(R)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = r / mu
        disc = (1 + ratio) ** 2 + (rho - r) / mu - 1
        neg = ~(disc >= 0)
        if strict and np.any(neg):
            raise NegativeDiscriminant(f"channels {np.flatnonzero(neg).tolist()} have no disc margin")
        root = np.sqrt(np.where(neg, np.nan, disc))
        return DiscMargins(ratio - root, ratio + root, rho, mu)


def cost_matrices(n_der: int, q_theta=1e-5, q_V=1.0, q_sin=0.0, q_cos=0.0, q_omega=1e-5,
                  r_P=1.0, r_Q=1.0, eps_Q: float = 0.0):
    """Block-diagonal ``(Q, R)`` for ``χ = [Δθ; ΔV; sin; cos; Δω]`` and ``u = [ΔP*; ΔQ*]``."""
    q = np.concatenate([np.broadcast_to(np.asarray(v, dtype=float), (n_der,))
                        for v in (q_theta, q_V, q_sin, q_cos, q_omega)])
    r = np.concatenate([np.broadcast_to(np.asarray(v, dtype=float), (n_der,)) for v in (r_P, r_Q)])
    if np.any(q < 0) or np.any(r <= 0):
        raise ValueError("state costs must be non-negative and input costs positive")
    return np.diag(q) + eps_Q * np.eye(5 * n_der), np.diag(r)


@dataclass
class LqrDesign:
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    K: np.ndarray
    u_lb: np.ndarray
    u_ub: np.ndarray
    margins: DiscMargins = None


def design_lqr(A_C, B_C, Q, R, u_lb, u_ub, tol=DARE_TOL, max_iter=DARE_MAX_ITER) -> LqrDesign:
    S = solve_dare(A_C, B_C, Q, R, tol, max_iter)
    K = lqr_gain(A_C, B_C, S, R)
    if not np.all(np.isfinite(K)):
        raise RiccatiDivergence("gain has non-finite entries")
    return LqrDesign(Q, R, S, K, np.asarray(u_lb, float), np.asarray(u_ub, float),
                     disc_margins(Q, R, K, B_C, S))


@dataclass
class StepDiagnostics:
    status: str = "warmup"
    regression_error: float = float("nan")
    iterations: int = 0
    spectral_radius: float = float("nan")
    margins: DiscMargins = None
    wall_ms: float = 0.0
    # one-step predictions of the next state from each model, keyed by name
    predictions: dict = field(default_factory=dict)


class AkoocController:
    """Rolling identification plus LQR redesign at every secondary step.

    ``model_kind`` selects the identified model: the iterative ensemble
    (``akooc``), the ensemble with ``C_M ≡ 0`` (``koopman-linear``), or a
    single joint least-squares fit on ``χ`` (``koopman-full-no-ensemble``).
    With ``shadow=True`` every step also produces one-step predictions from
    all three model kinds fitted on the same window.
    """

    def __init__(self, B, n_der: int, T_s: float, params: LearnerParams, Q, R, u_lb, u_ub,
                 model_kind: str = AKOOC, dare_tol: float = DARE_TOL,
                 dare_max_iter: int = DARE_MAX_ITER, shadow: bool = False,
                 rel_tol: float | None = None):
        if model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {model_kind!r}")
        self.B = np.asarray(B, dtype=float)
        self.n_der = n_der
        self.T_s = T_s
        self.params = params
        self.Q, self.R = np.asarray(Q, float), np.asarray(R, float)
        nu = 2 * n_der
        self.u_lb = np.broadcast_to(np.asarray(u_lb, float), (nu,)).copy()
        self.u_ub = np.broadcast_to(np.asarray(u_ub, float), (nu,)).copy()
        self.model_kind = model_kind
        self.dare_tol, self.dare_max_iter = dare_tol, dare_max_iter
        self.shadow = shadow
        self.rel_tol = params.pinv_rtol if rel_tol is None else rel_tol
        self.learner = EnsembleLearner(params, self.B, linear_only=model_kind == KOOPMAN_LINEAR,
                                       rel_tol=self.rel_tol)
        if shadow:
            self._shadow_ens = EnsembleLearner(params, self.B, rel_tol=self.rel_tol)
            self._shadow_lin = EnsembleLearner(params, self.B, linear_only=True, rel_tol=self.rel_tol)
        self.xs: list = []
        self.us: list = []
        self.design: LqrDesign | None = None
        self.model = None

    def reset(self):
        self.learner.reset()
        self.xs, self.us = [], []
        self.design = None
        self.model = None

    def _history(self):
        keep = self.params.N + 2
        return (np.array(self.xs[-keep:]).T, np.array(self.us[-(keep - 1):]).T)

    def _identify(self, ds):
        if self.model_kind == KOOPMAN_FULL:
            m = fit_full_no_ensemble(ds, self.rel_tol)
            return m, m.A_C, m.B_C, float("nan"), 0
        m = self.learner.fit(ds)
        return m, m.A_C, m.B_C, m.regression_error, m.iterations_used

    def _shadow_predictions(self, ds, x_k, z_k, u_k, own):
        preds = {}
        for name, fit in ((AKOOC, self._shadow_ens.fit), (KOOPMAN_LINEAR, self._shadow_lin.fit),
                          (KOOPMAN_FULL, lambda d: fit_full_no_ensemble(d, self.rel_tol))):
            try:
                model = own if (name == self.model_kind and own is not None) else fit(ds)
                preds[name] = model.predict(x_k, z_k, u_k)
            except AkoocError:
                preds[name] = np.full(2 * self.n_der, np.nan)
        return preds

    def akooc_step(self, x_meas):
        """Consume the newest measured state and return ``(u_k, diagnostics)``."""
        x_meas = np.asarray(x_meas, dtype=float)
        self.xs.append(x_meas)
        diag = StepDiagnostics()
        u = np.zeros(2 * self.n_der)
        if len(self.xs) < self.params.N + 2:
            self.us.append(u)
            return u, diag

        t0 = time.perf_counter()
        xs, us = self._history()
        z_k = embed(x_meas, self.xs[-2], self.T_s)
        chi = np.concatenate([x_meas, z_k])
        model = None
        try:
            ds = assemble_window(xs, us, self.params.N, self.T_s)
            model, A_C, B_C, err, iters = self._identify(ds)
            design = design_lqr(A_C, B_C, self.Q, self.R, self.u_lb, self.u_ub,
                                self.dare_tol, self.dare_max_iter)
            diag.status = "ok"
            diag.regression_error, diag.iterations = err, iters
            diag.spectral_radius = closed_loop_spectral_radius(A_C, B_C, design.K)
            diag.margins = design.margins
            self.design, self.model = design, model
        except (RiccatiDivergence, SingularInnerMatrix, NonFiniteUpdate, DegenerateWindow,
                InsufficientHistory, np.linalg.LinAlgError):
            diag.status = "fallback"
        if self.design is not None:
            u = compute_control(self.design.K, chi, self.u_lb, self.u_ub)
        if not np.all(np.isfinite(u)):
            u = np.zeros_like(u)
            diag.status = "fallback"
        diag.wall_ms = 1e3 * (time.perf_counter() - t0)
        if self.shadow and model is not None:
            diag.predictions = self._shadow_predictions(ds, x_meas, z_k, u, model)
        self.us.append(u)
        return u, diag

