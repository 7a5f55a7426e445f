"""Mode and state estimators for plants driven through lossy input links.

Three estimators share one recursive posterior over the previous step's
delivery mode. Each step they score every candidate mode by a Gaussian
likelihood of the newest output, fold the likelihoods into the posterior
through the mode chain, and pick the maximum-probability mode:

* ``Alg1Estimator`` predicts candidate outputs from the input-output
  (ARMA) recursion and uses a constant innovation covariance. Mode
  estimation runs without any Kalman filter; one can be attached when a
  state estimate is also wanted.
* ``Alg2Estimator`` predicts candidate outputs from a single Kalman
  filter's belief on the (possibly augmented) state-space form, so mode
  and state estimation are coupled.
* ``ImmEstimator`` is the interacting-multiple-model baseline: a bank of
  mode-matched Kalman filters with probabilistic mixing, whose model
  probabilities play the role of the mode posterior.

Likelihood handling is done in log-domain with max-subtraction. Two
robustness devices keep the recursions healthy on top of that:

* The input-output estimator validates its candidate predictions with a
  chi-square gate. When even the best candidate's squared Mahalanobis
  residual exceeds the gate, the Gaussian model is inconsistent with the
  data (its covariance is a fixed design value, so this happens during
  warm-up transients and after the hold reconstruction desynchronizes) and
  the likelihoods carry no usable mode information. The posterior then
  falls back to its one-step chain prediction, the step is flagged, and
  the hold-strategy recursion memory re-anchors to the issued inputs, the
  only signals the estimator knows exactly. Without the re-anchor a stale
  reconstruction is self-sustaining: every candidate looks impossible, so
  no decision ever refreshes it.
* Hold-strategy filters keep the variance of the held-input state
  components above a small floor (``DEFAULT_HELD_COV_FLOOR``). With no
  process noise those components otherwise collapse to exact certainty,
  and a single wrong mode decision then freezes a wrong held value
  forever; the floor keeps the gain on them alive so innovations can
  correct such errors.
"""

from __future__ import annotations

import math
import statistics
from collections import deque
from dataclasses import dataclass

import numpy as np

from .markov import TransitionMatrix, predict_prior
from .model import (
    ArmaModel,
    AugmentedModel,
    LossStrategy,
    ModeSpace,
)

__all__ = [
    "DEFAULT_HELD_COV_FLOOR",
    "DEFAULT_GATE_PVALUE",
    "NumericalError",
    "GaussianBelief",
    "ModePosterior",
    "StepResult",
    "kf_predict",
    "kf_update",
    "kf_step",
    "floor_held_cov",
    "chi2_upper_quantile",
    "gaussian_logpdf",
    "gaussian_pdf",
    "mode_posterior_update",
    "mode_posterior_update_log",
    "mode_argmax",
    "alg1_const_sigma",
    "alg1_predict_output",
    "alg2_predict",
    "Alg1Estimator",
    "Alg2Estimator",
    "ImmEstimator",
]

LOG_2PI = math.log(2.0 * math.pi)
POSTERIOR_TOL = 1e-12
COV_SYMMETRY_TOL = 1e-10
COV_EIG_TOL = -1e-9

# variance floor for held-input state components of hold-strategy filters
DEFAULT_HELD_COV_FLOOR = 4e-3

# tail probability for the input-output estimator's model-mismatch gate
DEFAULT_GATE_PVALUE = 1e-9


class NumericalError(ArithmeticError):
    """Raised when a filter step hits non-finite data or a singular covariance."""


@dataclass(frozen=True)
class GaussianBelief:
    """State estimate as a Gaussian: mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(
                f"covariance shape {cov.shape} does not match mean length {mean.shape[0]}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def validate(self) -> None:
        """Check symmetry and near-PSD of the covariance."""
        if not np.all(np.isfinite(self.mean)) or not np.all(np.isfinite(self.cov)):
            raise NumericalError("belief contains non-finite values")
        if np.max(np.abs(self.cov - self.cov.T), initial=0.0) > COV_SYMMETRY_TOL:
            raise NumericalError("covariance lost symmetry")
        if self.cov.size and np.linalg.eigvalsh(self.cov).min() < COV_EIG_TOL:
            raise NumericalError("covariance lost positive semidefiniteness")


@dataclass(frozen=True)
class ModePosterior:
    """Probability vector over the s mode values."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if probs.shape[0] < 1:
            raise ValueError("posterior must have at least one mode")
        if np.any(probs < 0.0):
            raise ValueError("posterior has negative entries")
        if abs(probs.sum() - 1.0) > POSTERIOR_TOL:
            raise ValueError(f"posterior sums to {probs.sum()!r}, expected 1")
        object.__setattr__(self, "probs", probs)

    @property
    def s(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class StepResult:
    """Per-step estimator diagnostics.

    mode is the 1-based estimate of the previous step's mode, state the
    filtered state mean (None for mode-only operation), posterior and
    loglik the full vectors behind the decision, and fallback marks steps
    where every weighted candidate's density underflowed to zero.
    """

    mode: int
    state: np.ndarray | None
    posterior: np.ndarray
    loglik: np.ndarray
    fallback: bool


def _require_finite(name: str, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in {name}")


def kf_predict(A, B, Q, belief: GaussianBelief, u_prev) -> GaussianBelief:
    """Time update: propagate mean and covariance one step."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
    _require_finite("kf_predict inputs", belief.mean, belief.cov, u_prev)
    mean = A @ belief.mean + B @ u_prev
    cov = A @ belief.cov @ A.T + Q
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def kf_update(C, R, belief: GaussianBelief, y) -> GaussianBelief:
    """Measurement update with gain K = P C^T (C P C^T + R)^(-1)."""
    C = np.asarray(C, dtype=float)
    R = np.asarray(R, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    _require_finite("kf_update inputs", belief.mean, belief.cov, y)
    pred_cov = belief.cov
    innov_cov = C @ pred_cov @ C.T + R
    try:
        gain = np.linalg.solve(innov_cov, C @ pred_cov).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is singular") from exc
    mean = belief.mean + gain @ (y - C @ belief.mean)
    cov = pred_cov - gain @ C @ pred_cov
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def kf_step(A, B, C, Q, R, belief: GaussianBelief, u_prev, y) -> GaussianBelief:
    """One full Kalman cycle (predict with u_prev, update with y)."""
    return kf_update(C, R, kf_predict(A, B, Q, belief, u_prev), y)


def floor_held_cov(belief: GaussianBelief, n_phys: int, floor: float) -> GaussianBelief:
    """Raise held-input variances (components beyond n_phys) to the floor."""
    if floor <= 0.0 or belief.mean.shape[0] <= n_phys:
        return belief
    diag = np.diag(belief.cov)[n_phys:]
    if diag.size == 0 or diag.min() >= floor:
        return belief
    cov = belief.cov.copy()
    for i in range(n_phys, cov.shape[0]):
        if cov[i, i] < floor:
            cov[i, i] = floor
    return GaussianBelief(belief.mean, cov)


def chi2_upper_quantile(dof: int, p: float) -> float:
    """Upper-tail chi-square quantile via the Wilson-Hilferty approximation.

    Accurate to a few percent, which is ample for mismatch gating.
    """
    if dof < 1 or not 0.0 < p < 1.0:
        raise ValueError("need dof >= 1 and 0 < p < 1")
    z = statistics.NormalDist().inv_cdf(1.0 - p)
    a = 2.0 / (9.0 * dof)
    return dof * (1.0 - a + z * math.sqrt(a)) ** 3


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is not positive definite") from exc


def _chol_logpdf(diff: np.ndarray, chol: np.ndarray, log_det_half: float) -> float:
    z = np.linalg.solve(chol, diff)
    return -0.5 * (diff.shape[0] * LOG_2PI + z @ z) - log_det_half


def gaussian_logpdf(y, yhat, sigma) -> float:
    """Log density of N(yhat, sigma) at y, via Cholesky (no explicit inverse)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    yhat = np.asarray(yhat, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float)
    _require_finite("gaussian_logpdf inputs", y, yhat, sigma)
    chol = _cholesky(sigma)
    return float(_chol_logpdf(y - yhat, chol, np.log(np.diag(chol)).sum()))


def gaussian_pdf(y, yhat, sigma) -> float:
    """Density of N(yhat, sigma) at y."""
    try:
        return math.exp(gaussian_logpdf(y, yhat, sigma))
    except OverflowError:
        return math.inf


def mode_posterior_update_log(probs_prev, loglik, transition) -> tuple[np.ndarray, bool]:
    """Recursive posterior update from log-likelihoods.

    Weights each candidate's likelihood by the chain-predicted prior and
    renormalizes (max-subtraction in log domain). Returns the updated
    probability vector and a fallback flag: when every weighted candidate
    is exactly zero, the predicted prior itself is returned and the step is
    flagged.
    """
    probs_prev = np.asarray(getattr(probs_prev, "probs", probs_prev), dtype=float)
    loglik = np.asarray(loglik, dtype=float).reshape(-1)
    if np.any(np.isnan(loglik)):
        raise NumericalError("NaN log-likelihood")
    prior = predict_prior(probs_prev, transition)
    if loglik.shape != prior.shape:
        raise ValueError(
            f"{loglik.shape[0]} likelihoods for {prior.shape[0]} modes"
        )
    with np.errstate(divide="ignore"):
        logw = loglik + np.log(prior)
    top = logw.max()
    if not np.isfinite(top):
        return prior.copy(), True
    weights = np.exp(logw - top)
    return weights / weights.sum(), False


def mode_posterior_update(posterior_prev, likelihoods, transition) -> tuple[ModePosterior, bool]:
    """Density-domain wrapper around :func:`mode_posterior_update_log`."""
    lik = np.asarray(likelihoods, dtype=float).reshape(-1)
    if np.any(lik < 0.0) or np.any(np.isnan(lik)):
        raise ValueError("likelihoods must be nonnegative")
    with np.errstate(divide="ignore"):
        loglik = np.log(lik)
    probs, fallback = mode_posterior_update_log(posterior_prev, loglik, transition)
    return ModePosterior(probs), fallback


def mode_argmax(posterior) -> int:
    """Smallest 1-based mode index attaining the maximum probability."""
    probs = np.asarray(getattr(posterior, "probs", posterior), dtype=float)
    return int(np.argmax(probs)) + 1


def alg1_const_sigma(arma: ArmaModel) -> np.ndarray:
    """Constant output-prediction covariance (1 + sum_l c_l^2) lam.

    The input-output predictor drops every noise term, so the prediction
    error is the innovation plus its h lagged copies; independence across
    steps makes the covariance this fixed multiple of lam.
    """
    return (1.0 + float(np.dot(arma.c, arma.c))) * arma.lam


def alg1_predict_output(
    arma: ArmaModel,
    strategy: LossStrategy,
    space: ModeSpace,
    j: int,
    y_hist,
    u_hist,
    uhat_hist,
    mode_hist,
) -> np.ndarray:
    """Candidate output prediction from the input-output recursion.

    Histories are newest-first: ``y_hist[i]`` is the output i+1 steps back,
    ``u_hist[i]`` the issued input i+1 steps back, ``uhat_hist[i]`` the
    reconstructed applied input i+2 steps back (hold only) and
    ``mode_hist[i]`` the mode estimate i+2 steps back. The candidate j
    stands in for the mode one step back; older modes come from the history.
    """
    space.check(j)
    yhat = np.zeros(arma.m)
    for i in range(arma.n_ar):
        yhat -= arma.a[i] * y_hist[i]
    hold = strategy is LossStrategy.HOLD
    for lag in range(1, arma.p + 1):
        mode_l = j if lag == 1 else mode_hist[lag - 2]
        alpha = space.decode(mode_l)
        coeff = arma.b[lag - 1]
        yhat += coeff @ (alpha * u_hist[lag - 1])
        if hold:
            yhat += coeff @ ((1.0 - alpha) * uhat_hist[lag - 1])
    return yhat


def alg2_predict(
    aug: AugmentedModel, belief: GaussianBelief, u_prev, j: int
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate output prediction and its covariance from the filter belief.

    yhat_j = C A(j) mean + C B(j) u_prev
    sigma_j = C A(j) P A(j)^T C^T + C Q C^T + R
    """
    u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
    a_mat = aug.A_of(j)
    b_mat = aug.B_of(j)
    c_mat = aug.C
    ca = c_mat @ a_mat
    yhat = ca @ belief.mean + (c_mat @ b_mat) @ u_prev
    sigma = ca @ belief.cov @ ca.T + c_mat @ aug.Q @ c_mat.T + aug.R
    return yhat, 0.5 * (sigma + sigma.T)


def _transition_array(transition, s: int) -> np.ndarray:
    mat = transition.P if isinstance(transition, TransitionMatrix) else np.asarray(transition, dtype=float)
    if mat.shape != (s, s):
        raise ValueError(f"transition matrix shape {mat.shape} does not match {s} modes")
    return mat


def _initial_probs(prior, s: int) -> np.ndarray:
    if prior is None:
        return np.full(s, 1.0 / s)
    probs = np.asarray(getattr(prior, "probs", prior), dtype=float).reshape(-1)
    if probs.shape[0] != s:
        raise ValueError(f"prior length {probs.shape[0]} does not match {s} modes")
    return ModePosterior(probs).probs.copy()


class Alg1Estimator:
    """Loss-mode estimator driven by the plant's input-output recursion.

    Needs only the issued inputs and measured outputs; the posterior update
    uses a constant innovation covariance, so no Kalman filter runs unless a
    state estimate is requested via ``kf_model``.

    Warm-up: signal histories are zero-padded and the mode history starts at
    the all-deliver mode, matching a zero-initialized filter state. The
    reconstructed applied input advances with the newest decided mode right
    after each decision (one step behind the raw recursion, which is the
    causal choice).

    Every step the best candidate's squared Mahalanobis residual is checked
    against a chi-square gate (tail probability ``gate_pvalue``). A gated
    step means the fixed-covariance Gaussian model is inconsistent with the
    data; the posterior falls back to its chain prediction (flagged) and
    the hold-strategy memory re-anchors to the issued inputs, discarding
    reconstructions the data just contradicted.
    """

    key = "alg1"

    def __init__(
        self,
        arma: ArmaModel,
        strategy: LossStrategy,
        transition,
        prior=None,
        kf_model: AugmentedModel | None = None,
        kf_x0=None,
        kf_P0=None,
        held_cov_floor: float = DEFAULT_HELD_COV_FLOOR,
        gate_pvalue: float | None = DEFAULT_GATE_PVALUE,
    ):
        self.arma = arma
        self.strategy = strategy
        self.space = ModeSpace(arma.r)
        self._P = _transition_array(transition, self.space.s)
        self._probs = _initial_probs(prior, self.space.s)
        self._alphas = [self.space.decode(j) for j in self.space.modes()]
        self._held_cov_floor = held_cov_floor
        self._gate_d2 = (
            math.inf if gate_pvalue is None else chi2_upper_quantile(arma.m, gate_pvalue)
        )

        sigma = alg1_const_sigma(arma)
        self._chol = _cholesky(sigma)
        self._log_det_half = float(np.log(np.diag(self._chol)).sum())
        self._sigma = sigma

        n, p, m, r = arma.n_ar, arma.p, arma.m, arma.r
        self._y_hist: deque = deque([np.zeros(m)] * n, maxlen=max(n, 1))
        self._u_hist: deque = deque([np.zeros(r)] * p, maxlen=max(p, 1))
        self._uhat_hist: deque = deque([np.zeros(r)] * p, maxlen=max(p, 1))
        self._mode_hist: deque = deque([self.space.s] * (p - 1), maxlen=max(p - 1, 1))

        self._kf = kf_model
        self._belief: GaussianBelief | None = None
        if kf_model is not None:
            if kf_model.strategy is not strategy:
                raise ValueError("kf_model strategy does not match the estimator")
            dim = kf_model.state_dim
            mean = np.zeros(dim) if kf_x0 is None else np.asarray(kf_x0, dtype=float)
            cov = np.eye(dim) if kf_P0 is None else np.asarray(kf_P0, dtype=float)
            self._belief = GaussianBelief(mean, cov)

    @property
    def posterior(self) -> np.ndarray:
        return self._probs.copy()

    @property
    def belief(self) -> GaussianBelief | None:
        return self._belief

    def start(self, u0, y0) -> None:
        """Record the step-0 signals before the first estimation step."""
        self._u_hist.appendleft(np.asarray(u0, dtype=float).reshape(-1))
        self._y_hist.appendleft(np.asarray(y0, dtype=float).reshape(-1))

    def step(self, u, y, force_mode: int | None = None) -> StepResult:
        """Estimate the previous step's mode from the newest output.

        ``u`` is the input issued at the current step (consumed one step
        later), ``y`` the current measurement. ``force_mode`` substitutes an
        externally known mode for the argmax decision (diagnostics).
        """
        u = np.asarray(u, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        _require_finite("alg1 step inputs", u, y)

        loglik = np.empty(self.space.s)
        for j in self.space.modes():
            yhat = alg1_predict_output(
                self.arma, self.strategy, self.space, j,
                self._y_hist, self._u_hist, self._uhat_hist, self._mode_hist,
            )
            loglik[j - 1] = _chol_logpdf(y - yhat, self._chol, self._log_det_half)

        best_d2 = -2.0 * (loglik.max() + self._log_det_half) - self.arma.m * LOG_2PI
        if best_d2 > self._gate_d2:
            self._probs, fallback = predict_prior(self._probs, self._P), True
        else:
            self._probs, fallback = mode_posterior_update_log(self._probs, loglik, self._P)
        mode = mode_argmax(self._probs) if force_mode is None else force_mode

        # memory entries: the decided mode normally; the delivery anchor on
        # gated steps, whose signals (the issued inputs) are known exactly
        memory_mode = self.space.s if fallback else mode
        if self.strategy is LossStrategy.HOLD:
            if fallback:
                uhat = self._u_hist[0].copy()
            else:
                alpha = self._alphas[memory_mode - 1]
                uhat = alpha * self._u_hist[0] + (1.0 - alpha) * self._uhat_hist[0]
            self._uhat_hist.appendleft(uhat)
        if self.arma.p > 1:
            self._mode_hist.appendleft(memory_mode)

        state = None
        if self._kf is not None:
            a_list, b_list = self._kf.mode_tables
            belief = kf_step(
                a_list[mode - 1], b_list[mode - 1], self._kf.C, self._kf.Q, self._kf.R,
                self._belief, self._u_hist[0], y,
            )
            self._belief = floor_held_cov(belief, self._kf.plant.n, self._held_cov_floor)
            state = self._belief.mean

        self._y_hist.appendleft(y)
        self._u_hist.appendleft(u)
        return StepResult(mode, state, self._probs.copy(), loglik, fallback)


class Alg2Estimator:
    """Joint loss-mode and state estimator on the state-space form.

    Candidate output predictions come from a single Kalman filter's belief,
    and the decided mode selects the system matrices for that filter's next
    cycle, so mode and state estimates are produced together and cannot be
    separated.
    """

    key = "alg2"

    def __init__(
        self,
        aug: AugmentedModel,
        transition,
        prior=None,
        x0=None,
        P0=None,
        held_cov_floor: float = DEFAULT_HELD_COV_FLOOR,
    ):
        self.aug = aug
        self.space = aug.space
        self._P = _transition_array(transition, self.space.s)
        self._probs = _initial_probs(prior, self.space.s)
        self._held_cov_floor = held_cov_floor
        dim = aug.state_dim
        mean = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
        cov = np.eye(dim) if P0 is None else np.asarray(P0, dtype=float)
        self._belief = GaussianBelief(mean, cov)
        self._last_u: np.ndarray | None = None

    @property
    def posterior(self) -> np.ndarray:
        return self._probs.copy()

    @property
    def belief(self) -> GaussianBelief:
        return self._belief

    def start(self, u0, y0) -> None:
        self._last_u = np.asarray(u0, dtype=float).reshape(-1)

    def step(self, u, y, force_mode: int | None = None) -> StepResult:
        if self._last_u is None:
            raise RuntimeError("call start() with the step-0 signals first")
        u = np.asarray(u, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        _require_finite("alg2 step inputs", u, y)

        loglik = np.empty(self.space.s)
        for j in self.space.modes():
            yhat, sigma = alg2_predict(self.aug, self._belief, self._last_u, j)
            chol = _cholesky(sigma)
            loglik[j - 1] = _chol_logpdf(y - yhat, chol, np.log(np.diag(chol)).sum())

        self._probs, fallback = mode_posterior_update_log(self._probs, loglik, self._P)
        mode = mode_argmax(self._probs) if force_mode is None else force_mode

        a_list, b_list = self.aug.mode_tables
        belief = kf_step(
            a_list[mode - 1], b_list[mode - 1], self.aug.C, self.aug.Q, self.aug.R,
            self._belief, self._last_u, y,
        )
        self._belief = floor_held_cov(belief, self.aug.plant.n, self._held_cov_floor)
        self._last_u = u
        return StepResult(mode, self._belief.mean, self._probs.copy(), loglik, fallback)


class ImmEstimator:
    """Interacting-multiple-model baseline over the mode set.

    One Kalman filter per mode. Each cycle mixes the filters through the
    mode chain, runs every filter on the newest measurement, reweights the
    model probabilities by the innovation likelihoods, and moment-matches a
    combined Gaussian. The model probabilities stand in for the mode
    posterior; the state output is the combined mean.
    """

    key = "imm"

    def __init__(
        self,
        aug: AugmentedModel,
        transition,
        prior=None,
        x0=None,
        P0=None,
        held_cov_floor: float = DEFAULT_HELD_COV_FLOOR,
    ):
        self.aug = aug
        self.space = aug.space
        self._P = _transition_array(transition, self.space.s)
        self._mu = _initial_probs(prior, self.space.s)
        self._held_cov_floor = held_cov_floor
        dim = aug.state_dim
        mean = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
        cov = np.eye(dim) if P0 is None else np.asarray(P0, dtype=float)
        self._beliefs = [GaussianBelief(mean.copy(), cov.copy()) for _ in range(self.space.s)]
        self._combined: GaussianBelief | None = None
        self._last_u: np.ndarray | None = None

    @property
    def posterior(self) -> np.ndarray:
        return self._mu.copy()

    @property
    def beliefs(self) -> list[GaussianBelief]:
        return list(self._beliefs)

    @property
    def combined_belief(self) -> GaussianBelief | None:
        """Moment-matched combination of the filter bank (after a step)."""
        return self._combined

    def start(self, u0, y0) -> None:
        self._last_u = np.asarray(u0, dtype=float).reshape(-1)

    def _mix(self) -> tuple[list[GaussianBelief], np.ndarray]:
        """Per-filter mixed initial conditions and predicted model weights."""
        s = self.space.s
        cbar = self._P.T @ self._mu
        mixed: list[GaussianBelief] = []
        for j in range(s):
            if cbar[j] > 0.0:
                w = self._P[:, j] * self._mu / cbar[j]
            else:
                # unreachable target mode: weights are irrelevant, keep own state
                w = np.zeros(s)
                w[j] = 1.0
            mean = np.zeros_like(self._beliefs[0].mean)
            for i in range(s):
                if w[i] != 0.0:
                    mean = mean + w[i] * self._beliefs[i].mean
            cov = np.zeros_like(self._beliefs[0].cov)
            for i in range(s):
                if w[i] != 0.0:
                    diff = self._beliefs[i].mean - mean
                    cov = cov + w[i] * (self._beliefs[i].cov + np.outer(diff, diff))
            mixed.append(GaussianBelief(mean, 0.5 * (cov + cov.T)))
        return mixed, cbar

    def step(self, u, y) -> StepResult:
        if self._last_u is None:
            raise RuntimeError("call start() with the step-0 signals first")
        u = np.asarray(u, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        _require_finite("imm step inputs", u, y)

        mixed, cbar = self._mix()
        a_list, b_list = self.aug.mode_tables
        c_mat, q_mat, r_mat = self.aug.C, self.aug.Q, self.aug.R
        n_phys = self.aug.plant.n

        s = self.space.s
        loglik = np.empty(s)
        for j in range(s):
            pred = kf_predict(a_list[j], b_list[j], q_mat, mixed[j], self._last_u)
            innov_cov = c_mat @ pred.cov @ c_mat.T + r_mat
            chol = _cholesky(0.5 * (innov_cov + innov_cov.T))
            loglik[j] = _chol_logpdf(
                y - c_mat @ pred.mean, chol, np.log(np.diag(chol)).sum()
            )
            self._beliefs[j] = floor_held_cov(
                kf_update(c_mat, r_mat, pred, y), n_phys, self._held_cov_floor
            )

        with np.errstate(divide="ignore"):
            logw = loglik + np.log(cbar)
        top = logw.max()
        if np.isfinite(top):
            weights = np.exp(logw - top)
            self._mu = weights / weights.sum()
            fallback = False
        else:
            self._mu = cbar / cbar.sum()
            fallback = True

        mean = np.zeros_like(self._beliefs[0].mean)
        for j in range(s):
            mean = mean + self._mu[j] * self._beliefs[j].mean
        cov = np.zeros_like(self._beliefs[0].cov)
        for j in range(s):
            diff = self._beliefs[j].mean - mean
            cov = cov + self._mu[j] * (self._beliefs[j].cov + np.outer(diff, diff))
        self._combined = GaussianBelief(mean, 0.5 * (cov + cov.T))

        mode = mode_argmax(self._mu)
        self._last_u = u
        return StepResult(mode, mean, self._mu.copy(), loglik, fallback)
