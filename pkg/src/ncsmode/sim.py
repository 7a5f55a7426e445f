"""Seeded closed-loop simulation of a plant driven through lossy links.

Each trial propagates the true plant with a sampled mode sequence, white
noise and white excitation inputs, and runs the selected estimators in
lockstep on exactly the signals a controller would see: the issued inputs
and the measured outputs. Truth and estimators never share anything else.

Randomness is fully determined by the trial seed. Four independent
sub-streams (mode sampling, process noise, measurement noise, inputs) are
spawned from a ``numpy.random.SeedSequence`` over the trial seed, so a
record is reproducible field-for-field regardless of which estimators run
or how trials are scheduled. Monte Carlo trial t uses seed
``base_seed XOR t`` (masked to 64 bits).
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .filters import (
    DEFAULT_HELD_COV_FLOOR,
    Alg1Estimator,
    Alg2Estimator,
    ImmEstimator,
    NumericalError,
)
from .markov import TransitionMatrix, sample_next, stationary_distribution
from .model import (
    ArmaModel,
    LossStrategy,
    PlantModel,
    build_augmented,
    ss_to_arma,
)

__all__ = [
    "ESTIMATOR_KEYS",
    "TrialConfig",
    "TrialRecord",
    "derive_trial_seed",
    "simulate_trial",
    "run_monte_carlo",
    "replay_estimators",
]

ESTIMATOR_KEYS = ("alg1", "alg2", "imm")

SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class TrialConfig:
    """Everything a single trial needs, with the RNG seed included.

    Exactly one of ``input_std`` (white-noise excitation, scalar or one std
    per channel) and ``input_sequence`` (fixed (steps+1, r) inputs) must be
    given. ``x0`` is the physical initial state; for the hold strategy
    ``u_init_applied`` is the input held from before step 0. The estimator
    initials (``est_x0``, ``est_P0``, ``est_prior``) live in the augmented
    state dimension. ``initial_mode`` overrides sampling the first mode from
    the chain's stationary distribution.
    """

    plant: PlantModel
    strategy: LossStrategy
    chain: TransitionMatrix
    steps: int
    x0: np.ndarray
    est_x0: np.ndarray
    est_P0: np.ndarray
    input_std: np.ndarray | None = None
    input_sequence: np.ndarray | None = None
    u_init_applied: np.ndarray | None = None
    est_prior: np.ndarray | None = None
    arma: ArmaModel | None = None
    initial_mode: int | None = None
    resample_x0: bool = False
    x0_std: float = 1.0
    held_cov_floor: float | None = None
    seed: int = 0

    def __post_init__(self):
        plant = self.plant
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.chain.s != 1 << plant.r:
            raise ValueError(
                f"chain has {self.chain.s} modes but the plant's {plant.r} links need {1 << plant.r}"
            )
        aug_dim = plant.n + (plant.r if self.strategy is LossStrategy.HOLD else 0)

        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape[0] != plant.n:
            raise ValueError(f"x0 has length {x0.shape[0]}, expected {plant.n}")
        est_x0 = np.asarray(self.est_x0, dtype=float).reshape(-1)
        if est_x0.shape[0] != aug_dim:
            raise ValueError(f"est_x0 has length {est_x0.shape[0]}, expected {aug_dim}")
        est_P0 = np.asarray(self.est_P0, dtype=float)
        if est_P0.shape != (aug_dim, aug_dim):
            raise ValueError(f"est_P0 must be {aug_dim}x{aug_dim}, got shape {est_P0.shape}")

        if (self.input_std is None) == (self.input_sequence is None):
            raise ValueError("give exactly one of input_std and input_sequence")
        input_std = None
        input_sequence = None
        if self.input_std is not None:
            input_std = np.broadcast_to(
                np.asarray(self.input_std, dtype=float), (plant.r,)
            ).copy()
            if np.any(input_std < 0.0):
                raise ValueError("input_std must be nonnegative")
        else:
            input_sequence = np.asarray(self.input_sequence, dtype=float)
            if input_sequence.shape != (self.steps + 1, plant.r):
                raise ValueError(
                    f"input_sequence must be ({self.steps + 1}, {plant.r}), "
                    f"got shape {input_sequence.shape}"
                )

        u_init = self.u_init_applied
        if u_init is not None:
            u_init = np.asarray(u_init, dtype=float).reshape(-1)
            if u_init.shape[0] != plant.r:
                raise ValueError(
                    f"u_init_applied has length {u_init.shape[0]}, expected {plant.r}"
                )
        prior = self.est_prior
        if prior is not None:
            prior = np.asarray(prior, dtype=float).reshape(-1)
            if prior.shape[0] != self.chain.s:
                raise ValueError(
                    f"est_prior has length {prior.shape[0]}, expected {self.chain.s}"
                )
        if self.initial_mode is not None and not 1 <= self.initial_mode <= self.chain.s:
            raise ValueError(f"initial_mode {self.initial_mode} outside 1..{self.chain.s}")
        if self.held_cov_floor is not None and self.held_cov_floor < 0.0:
            raise ValueError("held_cov_floor must be nonnegative")

        for name, val in (
            ("x0", x0), ("est_x0", est_x0), ("est_P0", est_P0),
            ("input_std", input_std), ("input_sequence", input_sequence),
            ("u_init_applied", u_init), ("est_prior", prior),
            ("seed", int(self.seed) & SEED_MASK),
        ):
            object.__setattr__(self, name, val)


@dataclass
class TrialRecord:
    """Per-step log of one trial.

    Mode-time alignment: ``true_modes[t]`` and ``est_modes[name][t]`` both
    refer to the mode active at step t (the estimate is produced one step
    later, from the step t+1 output). ``true_states`` holds x_0..x_N while
    the estimator states start at step 1, so ``true_states[k]`` aligns with
    ``est_states[name][k-1]``. Physical state components only.
    """

    steps: int
    estimators: tuple[str, ...]
    true_modes: np.ndarray
    est_modes: dict[str, np.ndarray]
    true_states: np.ndarray
    est_states: dict[str, np.ndarray]
    y: np.ndarray
    u: np.ndarray
    u_applied: np.ndarray
    fallbacks: dict[str, np.ndarray]
    seed: int = 0
    failed: bool = False
    fail_step: int | None = None
    fail_reason: str | None = None


def derive_trial_seed(base_seed: int, trial: int) -> int:
    """Seed for Monte Carlo trial ``trial``: base_seed XOR trial, 64-bit."""
    return (int(base_seed) ^ int(trial)) & SEED_MASK


def _psd_factor(mat: np.ndarray) -> np.ndarray | None:
    """Square root of a PSD matrix for noise draws; None when it is zero."""
    if not mat.size or not np.any(mat):
        return None
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)


def _build_estimators(cfg: TrialConfig, names) -> dict:
    aug = build_augmented(cfg.plant, cfg.strategy)
    floor = DEFAULT_HELD_COV_FLOOR if cfg.held_cov_floor is None else cfg.held_cov_floor
    est: dict = {}
    for name in names:
        if name == "alg1":
            arma = cfg.arma if cfg.arma is not None else ss_to_arma(cfg.plant)
            est[name] = Alg1Estimator(
                arma, cfg.strategy, cfg.chain, prior=cfg.est_prior,
                kf_model=aug, kf_x0=cfg.est_x0, kf_P0=cfg.est_P0,
                held_cov_floor=floor,
            )
        elif name == "alg2":
            est[name] = Alg2Estimator(
                aug, cfg.chain, prior=cfg.est_prior, x0=cfg.est_x0, P0=cfg.est_P0,
                held_cov_floor=floor,
            )
        elif name == "imm":
            est[name] = ImmEstimator(
                aug, cfg.chain, prior=cfg.est_prior, x0=cfg.est_x0, P0=cfg.est_P0,
                held_cov_floor=floor,
            )
        else:
            raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATOR_KEYS}")
    return est


def simulate_trial(cfg: TrialConfig, estimator_names=ESTIMATOR_KEYS) -> TrialRecord:
    """Run one seeded trial and return its record.

    The truth propagates through the mode-parameterized state-space model;
    estimators observe only (u_k, y_k). An estimator numerical failure marks
    the record failed with the step index instead of raising.
    """
    names = tuple(estimator_names)
    plant = cfg.plant
    aug = build_augmented(plant, cfg.strategy)
    n, m, r = plant.n, plant.m, plant.r
    nsteps = cfg.steps

    seq = np.random.SeedSequence(cfg.seed)
    mode_rng, w_rng, v_rng, u_rng = (np.random.default_rng(s) for s in seq.spawn(4))

    chol_q = _psd_factor(plant.Q)
    chol_r = _psd_factor(plant.R)

    def draw_u(k: int) -> np.ndarray:
        if cfg.input_sequence is not None:
            return cfg.input_sequence[k].copy()
        return cfg.input_std * u_rng.standard_normal(r)

    def draw_v() -> np.ndarray:
        if chol_r is None:
            return np.zeros(m)
        return chol_r @ v_rng.standard_normal(m)

    x0 = cfg.x0
    if cfg.resample_x0:
        x0 = x0 + cfg.x0_std * w_rng.standard_normal(n)
    state = aug.initial_state(x0, cfg.u_init_applied)

    if cfg.initial_mode is not None:
        theta = cfg.initial_mode
    else:
        pi = stationary_distribution(cfg.chain)
        cdf = np.cumsum(pi)
        theta = min(int(np.searchsorted(cdf, mode_rng.random(), side="right")),
                    cfg.chain.s - 1) + 1

    true_modes = np.zeros(nsteps, dtype=int)
    est_modes = {name: np.zeros(nsteps, dtype=int) for name in names}
    true_states = np.zeros((nsteps + 1, n))
    est_states = {name: np.zeros((nsteps, n)) for name in names}
    ys = np.zeros((nsteps + 1, m))
    us = np.zeros((nsteps + 1, r))
    u_applied = np.zeros((nsteps, r))
    fallbacks = {name: np.zeros(nsteps, dtype=bool) for name in names}

    record = TrialRecord(
        steps=nsteps, estimators=names, true_modes=true_modes, est_modes=est_modes,
        true_states=true_states, est_states=est_states, y=ys, u=us,
        u_applied=u_applied, fallbacks=fallbacks, seed=cfg.seed,
    )

    true_modes[0] = theta
    true_states[0] = state[:n]
    ys[0] = plant.C @ state[:n] + draw_v()
    us[0] = draw_u(0)

    try:
        estimators = _build_estimators(cfg, names)
        for est in estimators.values():
            est.start(us[0], ys[0])
    except (NumericalError, np.linalg.LinAlgError) as exc:
        record.failed = True
        record.fail_step = 0
        record.fail_reason = str(exc)
        return record

    a_list, b_list = aug.mode_tables
    gammas = [aug.space.decode(j) for j in aug.space.modes()]

    for k in range(1, nsteps + 1):
        th_prev = true_modes[k - 1]
        state = a_list[th_prev - 1] @ state + b_list[th_prev - 1] @ us[k - 1]
        if chol_q is not None:
            state = state + np.concatenate(
                [chol_q @ w_rng.standard_normal(n), np.zeros(state.shape[0] - n)]
            )
        true_states[k] = state[:n]
        if cfg.strategy is LossStrategy.HOLD:
            u_applied[k - 1] = state[n:]
        else:
            u_applied[k - 1] = gammas[th_prev - 1] * us[k - 1]
        if k < nsteps:
            true_modes[k] = sample_next(cfg.chain, th_prev, mode_rng)
        ys[k] = plant.C @ state[:n] + draw_v()
        us[k] = draw_u(k)

        for name, est in estimators.items():
            try:
                res = est.step(us[k], ys[k])
            except (NumericalError, np.linalg.LinAlgError) as exc:
                record.failed = True
                record.fail_step = k
                record.fail_reason = f"{name}: {exc}"
                return record
            est_modes[name][k - 1] = res.mode
            if res.state is not None:
                est_states[name][k - 1] = res.state[:n]
            fallbacks[name][k - 1] = res.fallback

    return record


def _simulate_star(args) -> TrialRecord:
    cfg, names = args
    return simulate_trial(cfg, names)


def run_monte_carlo(
    cfg: TrialConfig,
    n_trials: int,
    base_seed: int,
    estimator_names=ESTIMATOR_KEYS,
    n_jobs: int = 1,
) -> Iterator[TrialRecord]:
    """Yield ``n_trials`` independent trial records in trial order.

    Trial t runs with seed ``derive_trial_seed(base_seed, t)``; records are
    identical whatever ``n_jobs`` is, because each trial owns its streams.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    names = tuple(estimator_names)
    configs = [
        dataclasses.replace(cfg, seed=derive_trial_seed(base_seed, t))
        for t in range(n_trials)
    ]
    if n_jobs <= 1:
        for trial_cfg in configs:
            yield simulate_trial(trial_cfg, names)
        return
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        yield from pool.map(_simulate_star, [(c, names) for c in configs])


def replay_estimators(cfg: TrialConfig, estimator_names, u: np.ndarray, y: np.ndarray):
    """Re-run estimators offline on recorded (u, y) signals.

    Returns {name: (modes, states, fallbacks)} with the same alignment as a
    TrialRecord. Since this touches nothing but the signals, matching an
    in-simulation record verifies the estimators read no hidden truth.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape[0] != y.shape[0]:
        raise ValueError("u and y must cover the same steps")
    nsteps = u.shape[0] - 1
    estimators = _build_estimators(cfg, tuple(estimator_names))
    out = {}
    for name, est in estimators.items():
        est.start(u[0], y[0])
        modes = np.zeros(nsteps, dtype=int)
        states = np.zeros((nsteps, cfg.plant.n))
        flags = np.zeros(nsteps, dtype=bool)
        for k in range(1, nsteps + 1):
            res = est.step(u[k], y[k])
            modes[k - 1] = res.mode
            if res.state is not None:
                states[k - 1] = res.state[: cfg.plant.n]
            flags[k - 1] = res.fallback
        out[name] = (modes, states, flags)
    return out
