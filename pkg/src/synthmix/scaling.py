"""Power-law scaling fits: L(N,D) = A/N^alpha + B/D^beta + E.

Three forms are supported: "data" (B, beta, E), "model" (A, alpha, E),
and "joint" (all five). The objective is the sum of squared residuals in
log-loss space, minimized by damped Gauss-Newton (Levenberg-Marquardt)
run from a grid of starts (alpha, beta in 0.1..1.0 step 0.1, E0 in
{0.5, 0.9} * min L). A, B, E are optimized as logs so they stay positive;
alpha and beta are clamped to [0, 2]. All starts are iterated in a single
vectorized batch; the winner is the lowest sse_log, ties broken by the
smallest alpha + beta.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

FORMS = ("data", "model", "joint")
STEP_TOL = 1e-10
MAX_ITER = 1000
ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))
E0_FACTORS = (0.5, 0.9)


class ScalingError(Exception):
    pass


@dataclass(frozen=True)
class RunRecord:
    mixture_id: str
    n_params: int
    d_tokens: int
    loss_nats: float

    def __post_init__(self):
        if self.n_params <= 0 or self.d_tokens <= 0 or self.loss_nats <= 0:
            raise ScalingError(f"RunRecord fields must be positive: {self}")


@dataclass
class PowerLawFit:
    form: str
    A: float
    alpha: float
    B: float
    beta: float
    E: float
    sse_log: float
    n_points: int
    converged: bool = True
    holdout_rmabe_percent: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "form": self.form,
            "A": self.A,
            "alpha": self.alpha,
            "B": self.B,
            "beta": self.beta,
            "E": self.E,
            "sse_log": self.sse_log,
            "n_points": self.n_points,
            "converged": self.converged,
            "rmabe": self.holdout_rmabe_percent,
        }


def predict(fit: PowerLawFit, n_params: float | None = None,
            d_tokens: float | None = None) -> float:
    """Predicted loss for the axes the form requires."""
    loss = fit.E
    if fit.form in ("model", "joint"):
        if n_params is None or n_params <= 0:
            raise ScalingError(f"{fit.form} form requires positive n_params")
        loss += fit.A / n_params ** fit.alpha
    if fit.form in ("data", "joint"):
        if d_tokens is None or d_tokens <= 0:
            raise ScalingError(f"{fit.form} form requires positive d_tokens")
        loss += fit.B / d_tokens ** fit.beta
    return loss


def rmabe(fit: PowerLawFit, holdout: Sequence[RunRecord]) -> float:
    """Relative mean absolute error over the holdout set, in percent."""
    if not holdout:
        raise ScalingError("empty holdout")
    errs = [
        abs(predict(fit, n_params=r.n_params, d_tokens=r.d_tokens) - r.loss_nats)
        / r.loss_nats
        for r in holdout
    ]
    return 100.0 * sum(errs) / len(errs)


def _design(records: Sequence[RunRecord], form: str):
    N = np.array([r.n_params for r in records], dtype=float)
    D = np.array([r.d_tokens for r in records], dtype=float)
    L = np.array([r.loss_nats for r in records], dtype=float)
    return N, D, L


def _model_terms(theta: np.ndarray, lnN: np.ndarray, lnD: np.ndarray, form: str):
    """Per-start predicted loss and its components.

    theta layout: data -> [lnB, beta, lnE]; model -> [lnA, alpha, lnE];
    joint -> [lnA, alpha, lnB, beta, lnE]. Shapes: theta (S,P), lnN/lnD (n,).
    Returns terms of shape (S, n).
    """
    S = theta.shape[0]
    zeros = np.zeros((S, lnN.size))
    if form == "data":
        termA = zeros
        termB = np.exp(theta[:, [0]] - theta[:, [1]] * lnD[None, :])
        E = np.exp(theta[:, [2]])
    elif form == "model":
        termA = np.exp(theta[:, [0]] - theta[:, [1]] * lnN[None, :])
        termB = zeros
        E = np.exp(theta[:, [2]])
    else:
        termA = np.exp(theta[:, [0]] - theta[:, [1]] * lnN[None, :])
        termB = np.exp(theta[:, [2]] - theta[:, [3]] * lnD[None, :])
        E = np.exp(theta[:, [4]])
    return termA, termB, termA + termB + E


def _residual_jacobian(theta, lnN, lnD, lnL, form):
    termA, termB, pred = _model_terms(theta, lnN, lnD, form)
    r = np.log(pred) - lnL[None, :]
    inv = 1.0 / pred
    cols = []
    if form in ("model", "joint"):
        cols.append(termA * inv)            # d/d lnA
        cols.append(-termA * lnN[None, :] * inv)  # d/d alpha
    if form in ("data", "joint"):
        cols.append(termB * inv)            # d/d lnB
        cols.append(-termB * lnD[None, :] * inv)  # d/d beta
    E = pred - termA - termB
    cols.append(E * inv)                    # d/d lnE
    J = np.stack(cols, axis=-1)             # (S, n, P)
    return r, J


def _exponent_indices(form: str) -> List[int]:
    return [1] if form in ("data", "model") else [1, 3]


def _initial_starts(N, D, L, form) -> np.ndarray:
    """Grid of starts; linear least squares for the amplitudes given the
    candidate exponents and E0."""
    minL = float(L.min())
    tiny = 1e-12
    if form != "joint":
        starts = []
        axis = D if form == "data" else N
        for a in ALPHA_GRID:
            x = axis ** (-a)
            for f in E0_FACTORS:
                E0 = f * minL
                y = np.maximum(L - E0, tiny)
                amp = max(float(x @ y / (x @ x)), tiny)
                starts.append([math.log(amp), a, math.log(E0)])
        return np.array(starts, dtype=float)

    # joint: batched 2x2 normal equations across the full exponent grid
    g = np.asarray(ALPHA_GRID)
    a = np.repeat(g, g.size)
    b = np.tile(g, g.size)
    Xn = N[None, :] ** (-a[:, None])  # (K, n)
    Xd = D[None, :] ** (-b[:, None])
    g11 = np.einsum("kn,kn->k", Xn, Xn)
    g12 = np.einsum("kn,kn->k", Xn, Xd)
    g22 = np.einsum("kn,kn->k", Xd, Xd)
    det = g11 * g22 - g12 * g12
    degenerate = det <= 1e-12 * g11 * g22  # collinear columns (a == b axes)
    det_safe = np.where(degenerate, 1.0, det)
    per_factor = []
    for f in E0_FACTORS:
        y = np.maximum(L - f * minL, tiny)
        r1 = Xn @ y
        r2 = Xd @ y
        A0 = (g22 * r1 - g12 * r2) / det_safe
        B0 = (g11 * r2 - g12 * r1) / det_safe
        # split the shared amplitude when the two columns coincide
        A0 = np.where(degenerate, r1 / (2.0 * g11), A0)
        B0 = np.where(degenerate, r2 / (2.0 * g22), B0)
        theta = np.stack(
            [
                np.log(np.maximum(A0, tiny)), a,
                np.log(np.maximum(B0, tiny)), b,
                np.full(a.size, math.log(f * minL)),
            ],
            axis=1,
        )
        per_factor.append(theta)
    # interleave so ordering matches (a, b) outer / E0 inner enumeration
    return np.stack(per_factor, axis=1).reshape(-1, 5)


def fit(
    records: Sequence[RunRecord],
    form: str,
    fit_filter: Optional[Callable[[RunRecord], bool]] = None,
    holdout_filter: Optional[Callable[[RunRecord], bool]] = None,
) -> PowerLawFit:
    """Fit one scaling-law form; optionally score a disjoint holdout."""
    if form not in FORMS:
        raise ScalingError(f"unknown form {form!r}")
    fit_records = [r for r in records if fit_filter(r)] if fit_filter else list(records)
    holdout = [r for r in records if holdout_filter(r)] if holdout_filter else []
    if holdout:
        overlap = set((r.n_params, r.d_tokens) for r in fit_records) & set(
            (r.n_params, r.d_tokens) for r in holdout
        )
        if overlap:
            raise ScalingError(f"holdout overlaps fit set: {sorted(overlap)[:3]}")
    if len({r.mixture_id for r in fit_records}) > 1:
        raise ScalingError("fit points must share a mixture_id")
    min_points = 6 if form == "joint" else 4
    if len(fit_records) < min_points:
        raise ScalingError(
            f"{form} form needs >= {min_points} fit points, got {len(fit_records)}"
        )
    N, D, L = _design(fit_records, form)
    if np.ptp(L) == 0.0:
        raise ScalingError("degenerate: all losses identical")

    lnN, lnD, lnL = np.log(N), np.log(D), np.log(L)
    theta = _initial_starts(N, D, L, form)
    S, P = theta.shape
    exp_idx = _exponent_indices(form)

    _, _, pred = _model_terms(theta, lnN, lnD, form)
    sse = np.sum((np.log(pred) - lnL[None, :]) ** 2, axis=1)
    converged = np.zeros(S, dtype=bool)

    def _lm_phase(idx: np.ndarray, max_iter: int) -> None:
        """Batched Levenberg-Marquardt on the starts in idx (in place)."""
        lam = np.full(idx.size, 1e-3)
        active = np.ones(idx.size, dtype=bool)
        eye = np.eye(P)
        for _ in range(max_iter):
            # an effectively-zero objective cannot be beaten by another
            # start; the polish phase finishes the winner
            if not active.any() or sse[idx].min() < 1e-22:
                break
            sub = np.flatnonzero(active)
            rows = idx[sub]
            th = theta[rows]
            r, J = _residual_jacobian(th, lnN, lnD, lnL, form)
            JTJ = np.einsum("snp,snq->spq", J, J)
            JTr = np.einsum("snp,sn->sp", J, r)
            A_mat = JTJ + lam[sub][:, None, None] * eye[None, :, :]
            try:
                step = -np.linalg.solve(A_mat, JTr[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                step = -np.stack(
                    [np.linalg.lstsq(a, b, rcond=None)[0] for a, b in zip(A_mat, JTr)]
                )
            cand = th + step
            cand[:, exp_idx] = np.clip(cand[:, exp_idx], 0.0, 2.0)
            _, _, pred_c = _model_terms(cand, lnN, lnD, form)
            sse_c = np.sum((np.log(pred_c) - lnL[None, :]) ** 2, axis=1)
            better = sse_c < sse[rows]
            theta[rows[better]] = cand[better]
            sse[rows[better]] = sse_c[better]
            lam[sub[better]] = np.maximum(lam[sub[better]] / 3.0, 1e-14)
            lam[sub[~better]] *= 10.0
            # proposed-step convergence; a stalled damping factor means the
            # quadratic model cannot improve the point either
            small = np.abs(step).max(axis=1) < STEP_TOL
            converged[rows[small]] = True
            active[sub[small | (lam[sub] > 1e14)]] = False

    # phase 1: a bounded number of iterations on the full start grid;
    # phase 2: the most promising candidates run to full convergence
    all_idx = np.arange(S)
    phase1 = min(40, MAX_ITER)
    _lm_phase(all_idx, phase1)
    exp_sum = theta[:, exp_idx].sum(axis=1)
    top = np.lexsort((exp_sum, sse))[: min(6, S)]
    _lm_phase(top, MAX_ITER - phase1)

    # lowest sse wins; ties by smallest alpha+beta
    exp_sum = theta[:, exp_idx].sum(axis=1)
    order = np.lexsort((exp_sum, sse))
    best = order[0]

    # Gauss-Newton polish of the winner, solving the step by QR on the
    # Jacobian itself (better conditioned than the normal equations) with
    # a backtracking line search
    for _ in range(200):
        r, J = _residual_jacobian(theta[best][None, :], lnN, lnD, lnL, form)
        full_step = -np.linalg.lstsq(J[0], r[0], rcond=None)[0]
        if np.abs(full_step).max() < STEP_TOL:
            converged[best] = True
            break
        improved = False
        scale = 1.0
        for _halving in range(25):
            cand = theta[best] + scale * full_step
            cand[exp_idx] = np.clip(cand[exp_idx], 0.0, 2.0)
            _, _, pred_c = _model_terms(cand[None, :], lnN, lnD, form)
            sse_c = float(np.sum((np.log(pred_c[0]) - lnL) ** 2))
            if sse_c < sse[best]:
                theta[best] = cand
                sse[best] = sse_c
                improved = True
                break
            scale *= 0.5
        if not improved:
            break

    th = theta[best]

    if form == "data":
        A, alpha = 0.0, 0.0
        B, beta, E = math.exp(th[0]), th[1], math.exp(th[2])
    elif form == "model":
        A, alpha = math.exp(th[0]), th[1]
        B, beta, E = 0.0, 0.0, math.exp(th[2])
    else:
        A, alpha = math.exp(th[0]), th[1]
        B, beta, E = math.exp(th[2]), th[3], math.exp(th[4])

    result = PowerLawFit(
        form=form,
        A=A,
        alpha=alpha,
        B=B,
        beta=beta,
        E=E,
        sse_log=float(sse[best]),
        n_points=len(fit_records),
        converged=bool(converged[best]),
    )
    if holdout:
        result.holdout_rmabe_percent = rmabe(result, holdout)
    return result


def irreducible_loss(fit_result: PowerLawFit) -> float:
    """E from a converged joint fit."""
    if fit_result.form != "joint":
        raise ScalingError("irreducible loss requires a joint-form fit")
    if not fit_result.converged:
        raise ScalingError("fit did not converge")
    return fit_result.E


def irreducible_table(fits: dict) -> List[Tuple[str, float]]:
    """(mixture_id, E) rows sorted ascending by E."""
    return sorted(
        ((mid, irreducible_loss(f)) for mid, f in fits.items()), key=lambda kv: kv[1]
    )


def tokens_to_reach(fit_result: PowerLawFit, target_loss: float) -> float:
    if fit_result.form != "data":
        raise ScalingError("closed-form token solve requires a data-form fit")
    if target_loss <= fit_result.E:
        raise ScalingError(
            f"target {target_loss} unreachable (irreducible loss {fit_result.E})"
        )
    return (fit_result.B / (target_loss - fit_result.E)) ** (1.0 / fit_result.beta)


def speedup_factor(
    fit_a: PowerLawFit, fit_b: PowerLawFit, target_loss: float
) -> float:
    """D_b / D_a at equal target loss; > 1 means fit_a needs fewer tokens."""
    return tokens_to_reach(fit_b, target_loss) / tokens_to_reach(fit_a, target_loss)


def load_records(path: str | Path) -> List[RunRecord]:
    """RunRecord CSV: mixture_id,n_params,d_tokens,loss_nats (header)."""
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(
            (ln for ln in fh if not ln.startswith("#"))
        ):
            records.append(
                RunRecord(
                    mixture_id=row["mixture_id"],
                    n_params=int(float(row["n_params"])),
                    d_tokens=int(float(row["d_tokens"])),
                    loss_nats=float(row["loss_nats"]),
                )
            )
    if not records:
        raise ScalingError(f"no records in {path}")
    return records


def save_records(records: Sequence[RunRecord], path: str | Path,
                 comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["mixture_id", "n_params", "d_tokens", "loss_nats"])
        for r in records:
            writer.writerow([r.mixture_id, r.n_params, r.d_tokens, repr(r.loss_nats)])


def save_fit(fit_result: PowerLawFit, path: str | Path, extra: dict | None = None) -> None:
    payload = fit_result.to_dict()
    payload["weighting"] = "uniform"
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
