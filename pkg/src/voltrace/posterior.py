"""Posterior computation: prior-preserving MCMC plus an importance-sampling
oracle.

The prior is the pushforward of a Gaussian law through a deterministic map,
so the chain moves in the standard-normal innovation coordinates with the
autoregressive proposal

    innov' = sqrt(1 - rho^2) * innov + rho * fresh,

which leaves the Gaussian reference measure invariant; acceptance therefore
uses the likelihood alone. Importance sampling with prior proposals is kept
as an independent cross-check: exact in its normalization identities, but
weight-degenerate once n is large, which the ESS diagnostic reports rather
than hides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .likelihood import log_likelihood, log_likelihood_rows
from .model import DispersionFn, ObservationPath, l2_distance_rows
from .prior import GaussianDriver, PriorSpec, driver_from_innovations, driver_to_sigma, sample_prior_values
from .rng import rng_from

__all__ = [
    "DEGENERACY_ESS",
    "ChainState",
    "ChainResult",
    "PosteriorEstimate",
    "ImportanceSample",
    "initial_state",
    "pcn_step",
    "run_chain",
    "importance_sample",
    "log_mean_weight",
    "posterior_mass_is",
    "ball_mass",
    "batch_means_se",
]

# below this effective sample size an IS estimate is flagged as degenerate
DEGENERACY_ESS = 50.0


def _chain_log_likelihood(sigma: DispersionFn, path: Optional[ObservationPath]) -> float:
    # path=None is the null-data regime: the chain then targets the prior
    return 0.0 if path is None else log_likelihood(sigma, path)


@dataclass(frozen=True)
class ChainState:
    """Current latent coordinate with its cached pushforward and likelihood.

    sigma and log_l are always jointly coherent with driver: both are
    recomputed through the same deterministic maps on every accepted move.
    """

    driver: GaussianDriver
    sigma: DispersionFn
    log_l: float
    step: int = 0
    accepted: bool = True


def initial_state(path: Optional[ObservationPath], spec: PriorSpec, seed: int) -> ChainState:
    """Chain start: an (overdispersed) prior draw."""
    rng = rng_from(seed)
    driver = driver_from_innovations(spec, rng.standard_normal(1), rng.standard_normal(spec.m))
    sigma = driver_to_sigma(driver, spec)
    return ChainState(driver=driver, sigma=sigma, log_l=_chain_log_likelihood(sigma, path))


def pcn_step(
    state: ChainState,
    rho: float,
    path: Optional[ObservationPath],
    spec: PriorSpec,
    seed,
) -> ChainState:
    """One autoregressive proposal/accept step in innovation coordinates.

    The start normals and the increment innovations are refreshed jointly
    with the same rho. `seed` may be an integer or an already-running
    Generator (run_chain passes its own stream through).
    """
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"need rho in (0, 1], got {rho}")
    rng = seed if isinstance(seed, np.random.Generator) else rng_from(seed)
    keep = math.sqrt(1.0 - rho * rho)
    z = keep * state.driver.z + rho * rng.standard_normal(1)
    xi = keep * state.driver.increments + rho * rng.standard_normal(spec.m)
    driver = driver_from_innovations(spec, z, xi)
    sigma = driver_to_sigma(driver, spec)
    log_l = _chain_log_likelihood(sigma, path)
    if rng.uniform() < math.exp(min(0.0, log_l - state.log_l)):
        return ChainState(driver=driver, sigma=sigma, log_l=log_l, step=state.step + 1, accepted=True)
    return ChainState(
        driver=state.driver, sigma=state.sigma, log_l=state.log_l, step=state.step + 1, accepted=False
    )


@dataclass(frozen=True)
class ChainResult:
    """Thinned post-burn-in samples (knot values, one row each) plus the
    sampler diagnostics that go into the run sidecar."""

    values: np.ndarray
    acceptance_rate: float
    rho: float
    seed: int
    iters: int
    burn_in: int
    thin: int

    @property
    def kept(self) -> int:
        return self.values.shape[0]

    def dispersion_fns(self, spec: PriorSpec) -> list[DispersionFn]:
        return [DispersionFn(row, spec.params) for row in self.values]

    def ess_summary(self, at: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9)) -> dict:
        """Batch-means effective sample sizes of sigma(t) at a few times."""
        out = {}
        m = self.values.shape[1] - 1
        for t in at:
            series = self.values[:, int(round(t * m))]
            se = batch_means_se(series)
            var = float(np.var(series, ddof=1)) if series.size > 1 else 0.0
            ess = self.kept if se == 0.0 else min(self.kept, var / (se * se))
            out[f"t={t:g}"] = float(ess)
        return out


def run_chain(
    path: Optional[ObservationPath],
    spec: PriorSpec,
    rho: float = 0.2,
    iters: int = 2000,
    burn_in: Optional[int] = None,
    thin: int = 10,
    seed: int = 0,
    tune: bool = True,
) -> ChainResult:
    """Run the sampler; keep every thin-th post-burn-in state.

    burn_in defaults to 20% of iters. With tune=True, rho is adapted during
    burn-in toward a 20-40% acceptance window and frozen afterwards. Output
    is bit-reproducible from (arguments, seed).
    """
    if burn_in is None:
        burn_in = iters // 5
    if not (0 <= burn_in < iters):
        raise ValueError(f"need 0 <= burn_in < iters, got burn_in={burn_in}, iters={iters}")
    if thin < 1:
        raise ValueError(f"need thin >= 1, got {thin}")
    rng = rng_from(seed)
    state = initial_state(path, spec, seed=rng.integers(2**63))
    kept_rows = []
    accepted_after = 0
    window: list[bool] = []
    for it in range(iters):
        state = pcn_step(state, rho, path, spec, rng)
        if it < burn_in:
            if tune:
                window.append(state.accepted)
                if len(window) == 50:
                    rate = sum(window) / len(window)
                    if rate < 0.20:
                        rho = max(rho * 0.7, 1e-4)
                    elif rate > 0.40:
                        rho = min(rho * 1.3, 1.0)
                    window.clear()
        else:
            accepted_after += state.accepted
            if (it - burn_in) % thin == 0:
                kept_rows.append(state.sigma.values)
    return ChainResult(
        values=np.asarray(kept_rows),
        acceptance_rate=accepted_after / (iters - burn_in),
        rho=rho,
        seed=seed,
        iters=iters,
        burn_in=burn_in,
        thin=thin,
    )


@dataclass(frozen=True)
class PosteriorEstimate:
    """A posterior probability estimate with its Monte Carlo error bars."""

    mass: float
    se: float
    ess: float
    method: str
    sample_size: int

    @property
    def degenerate(self) -> bool:
        return self.ess < DEGENERACY_ESS


@dataclass(frozen=True)
class ImportanceSample:
    """Prior draws with their log weights.

    log_w is the log likelihood of each draw, shifted by the reference
    dispersion's log likelihood when one is supplied (then log_w = n * s_n,
    the normalized log likelihood ratio, which the consistency estimators
    integrate). The shift cancels from every self-normalized quantity.
    """

    values: np.ndarray
    log_w: np.ndarray

    @property
    def draws(self) -> int:
        return self.log_w.size


def importance_sample(
    path: Optional[ObservationPath],
    spec: PriorSpec,
    draws: int,
    seed: int,
    sigma0: Optional[DispersionFn] = None,
) -> ImportanceSample:
    """Draw from the prior and weight by the likelihood.

    With sigma0 given, the reference log likelihood is computed through the
    same vectorized code path as the draws, so a draw identical to sigma0
    carries log weight exactly zero.
    """
    if draws < 1:
        raise ValueError(f"need draws >= 1, got {draws}")
    values = sample_prior_values(spec, draws, seed)
    if path is None:
        return ImportanceSample(values=values, log_w=np.zeros(draws))
    log_w = log_likelihood_rows(values, path)
    if sigma0 is not None:
        log_w = log_w - log_likelihood_rows(sigma0.resampled(spec.m).values[None, :], path)[0]
    return ImportanceSample(values=values, log_w=log_w)


def log_mean_weight(log_w: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """log( (1/J) * sum_{j in mask} exp(log_w_j) ), max-shift stabilized.

    The shift is the maximum over ALL draws regardless of mask, so restricted
    and unrestricted evaluations of a shared draw set are exactly comparable.
    Returns -inf when no draw contributes.
    """
    shift = float(np.max(log_w))
    w = np.exp(log_w - shift)
    total = float(np.sum(w if mask is None else w[mask]))
    if total == 0.0:
        return -math.inf
    return shift + math.log(total / log_w.size)


def _exact_weight_fraction(w: np.ndarray, mask: np.ndarray) -> float:
    # exact rational ratio: the masked fraction and its complement then sum
    # to exactly 1.0 after rounding to double
    num = sum(map(Fraction, w[mask]), Fraction(0))
    den = sum(map(Fraction, w), Fraction(0))
    if den == 0:
        return 0.0
    return float(num / den)


def _snis_errors(w: np.ndarray, h: np.ndarray, mass: float) -> tuple[float, float]:
    total = float(np.sum(w))
    wbar = w / total
    se = float(np.sqrt(np.sum((wbar * (h - mass)) ** 2)))
    ess = float(total * total / np.dot(w, w))
    return se, ess


def posterior_mass_is(
    predicate: Callable[[DispersionFn], bool],
    path: Optional[ObservationPath],
    spec: PriorSpec,
    draws: int,
    seed: int,
) -> PosteriorEstimate:
    """Self-normalized importance sampling estimate of a posterior set
    probability under an arbitrary predicate on dispersion functions."""
    sample = importance_sample(path, spec, draws, seed)
    mask = np.fromiter(
        (bool(predicate(DispersionFn(row, spec.params))) for row in sample.values),
        dtype=bool,
        count=sample.draws,
    )
    w = np.exp(sample.log_w - float(np.max(sample.log_w)))
    mass = _exact_weight_fraction(w, mask)
    se, ess = _snis_errors(w, mask.astype(float), mass)
    return PosteriorEstimate(mass=mass, se=se, ess=ess, method="is", sample_size=draws)


def batch_means_se(series: np.ndarray, batches: int = 20) -> float:
    """Standard error of the mean of a correlated series via batch means."""
    series = np.asarray(series, dtype=float)
    b = min(batches, series.size)
    if b < 2:
        return float("nan")
    usable = (series.size // b) * b
    means = series[:usable].reshape(b, -1).mean(axis=1)
    return float(np.sqrt(np.var(means, ddof=1) / b))


def ball_mass(
    path: Optional[ObservationPath],
    spec: PriorSpec,
    sigma0: DispersionFn,
    eps: float,
    method: str = "auto",
    budget: int = 2000,
    seed: int = 0,
) -> PosteriorEstimate:
    """Posterior mass of the complement {sigma : ||sigma - sigma0||_2 >= eps}.

    method "is" shares its draws, weights and reductions with the integral
    estimators in the consistency module, so their ratio identity holds
    bitwise; "mcmc" uses the fraction of retained chain samples with a
    batch-means error bar; "auto" crosses over from IS to MCMC above n = 50,
    where prior-proposal weights degenerate.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if method == "auto":
        method = "is" if path is None or path.n <= 50 else "mcmc"
    if method == "is":
        sample = importance_sample(path, spec, draws=budget, seed=seed, sigma0=sigma0)
        mask = l2_distance_rows(sample.values, sigma0.resampled(spec.m)) >= eps
        log_dn = log_mean_weight(sample.log_w)
        log_nn = log_mean_weight(sample.log_w, mask)
        mass = 0.0 if log_nn == -math.inf else float(np.exp(log_nn - log_dn))
        w = np.exp(sample.log_w - float(np.max(sample.log_w)))
        se, ess = _snis_errors(w, mask.astype(float), mass)
        return PosteriorEstimate(mass=mass, se=se, ess=ess, method="is", sample_size=budget)
    if method == "mcmc":
        chain = run_chain(path, spec, iters=budget, seed=seed)
        hits = (l2_distance_rows(chain.values, sigma0.resampled(spec.m)) >= eps).astype(float)
        mass = float(hits.mean())
        se = batch_means_se(hits)
        if not math.isfinite(se):
            se = float(np.sqrt(mass * (1.0 - mass) / hits.size))
        ess = hits.size if se == 0.0 else min(hits.size, mass * (1.0 - mass) / (se * se))
        return PosteriorEstimate(mass=mass, se=se, ess=float(ess), method="mcmc", sample_size=chain.kept)
    raise ValueError(f"unknown method {method!r}")
