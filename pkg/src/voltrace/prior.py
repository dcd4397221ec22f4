"""Function-space prior: integrated link-of-Gaussian-driver constructions.

A draw starts from a Gaussian driver path on the knot grid, either a Brownian
motion started at an independent standard normal or a Riemann-Liouville
process with Hurst index beta in (0, 1). The driver is squashed through a
Lipschitz link into [0, K - kappa] and integrated (trapezoid rule), giving

    sigma(t) = kappa + integral_0^t link(driver(s)) ds,

which lands in the admissible class by construction: kappa <= sigma <= K and
knot increments at most (K - kappa)/m. The latent coordinates (the standard
normal innovations) are what the posterior sampler moves in.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit
from scipy.stats import beta as beta_dist

from .model import ClassParams, DispersionFn
from .rng import rng_from

__all__ = [
    "LogisticLink",
    "PriorSpec",
    "GaussianDriver",
    "sample_driver",
    "driver_from_innovations",
    "driver_to_sigma",
    "sample_prior",
    "sample_prior_values",
    "dispersion_from_latent",
    "rkhs_norm",
    "SmallBallEstimate",
    "small_ball_mass",
]


@dataclass(frozen=True)
class LogisticLink:
    """Link x -> spread * expit(gain * x + shift), mapping R into [0, spread].

    Smooth, saturating and invertible; Lipschitz constant spread * gain / 4.
    gain/shift are mostly test knobs: a large positive shift saturates the
    link and collapses the prior onto the single steepest admissible path.
    """

    gain: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.gain <= 0.0:
            raise ValueError("link gain must be positive")

    def value(self, x, spread: float):
        return spread * expit(self.gain * np.asarray(x, dtype=float) + self.shift)

    def lipschitz(self, spread: float) -> float:
        return spread * self.gain / 4.0

    def inverse(self, y: float, spread: float) -> float:
        """Driver level producing link value y in (0, spread)."""
        return float((logit(y / spread) - self.shift) / self.gain)


@dataclass(frozen=True)
class PriorSpec:
    """Parameters of the prior: class bounds, link, driver type, resolution.

    driver "bm" is Brownian motion started at an independent standard normal;
    "rl" is the Riemann-Liouville process with index beta (one polynomial
    term for beta in (0,1)), whose kernel integral is discretized left-point
    to dodge the singularity at the running endpoint.
    """

    params: ClassParams
    link: LogisticLink = field(default_factory=LogisticLink)
    driver: str = "bm"
    beta: float | None = None
    m: int = 400

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"need m >= 2 knots, got m={self.m}")
        if self.driver not in ("bm", "rl"):
            raise ValueError(f"driver must be 'bm' or 'rl', got {self.driver!r}")
        if self.driver == "rl":
            if self.beta is None or not (0.0 < self.beta < 1.0):
                raise ValueError(f"Riemann-Liouville driver needs beta in (0, 1), got {self.beta}")
        elif self.beta is not None:
            raise ValueError("beta only applies to the 'rl' driver")
        if self.params.lip_m < self.params.spread - 1e-12:
            raise ValueError(
                "Lipschitz budget M must be at least K - kappa for prior draws to certify"
            )

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    def to_json_dict(self) -> dict:
        d = {
            "kappa": self.params.kappa,
            "K": self.params.big_k,
            "link": "logistic",
            "driver": self.driver,
            "beta": self.beta,
            "m": self.m,
        }
        if self.link.gain != 1.0:
            d["link_gain"] = self.link.gain
        if self.link.shift != 0.0:
            d["link_shift"] = self.link.shift
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "PriorSpec":
        if d.get("link", "logistic") != "logistic":
            raise ValueError(f"unknown link {d.get('link')!r}")
        kappa, big_k = float(d["kappa"]), float(d["K"])
        link = LogisticLink(gain=float(d.get("link_gain", 1.0)), shift=float(d.get("link_shift", 0.0)))
        beta = d.get("beta")
        return PriorSpec(
            params=ClassParams(kappa=kappa, big_k=big_k, lip_m=big_k),
            link=link,
            driver=d.get("driver", "bm"),
            beta=None if beta is None else float(beta),
            m=int(d.get("m", 400)),
        )


@dataclass(frozen=True)
class GaussianDriver:
    """Driver path at the knots plus the latent coordinates that generated it.

    z holds the initialization normals (start level Z, or the polynomial
    coefficient for the Riemann-Liouville driver); increments holds the m
    standard-normal innovations. (z, increments) regenerate values exactly
    through driver_from_innovations, which is what the posterior sampler
    relies on.
    """

    values: np.ndarray
    z: np.ndarray
    increments: np.ndarray

    def __post_init__(self):
        for name in ("values", "z", "increments"):
            a = np.ascontiguousarray(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)


@functools.lru_cache(maxsize=8)
def _rl_kernel(m: int, beta: float) -> np.ndarray:
    """Left-point kernel matrix: row j holds ((j - l)/m)^(beta - 1/2) for l < j."""
    j = np.arange(m + 1)[:, None]
    l = np.arange(m)[None, :]
    gap = np.where(l < j, (j - l) / m, 1.0)
    k = np.where(l < j, gap ** (beta - 0.5), 0.0)
    k.flags.writeable = False
    return k


def driver_from_innovations(spec: PriorSpec, z: np.ndarray, increments: np.ndarray) -> GaussianDriver:
    """Deterministic map from standard-normal coordinates to a driver path."""
    z = np.asarray(z, dtype=float)
    xi = np.asarray(increments, dtype=float)
    if z.shape != (1,) or xi.shape != (spec.m,):
        raise ValueError(f"expected z shape (1,) and increments shape ({spec.m},)")
    dw = xi / np.sqrt(spec.m)
    if spec.driver == "bm":
        values = z[0] + np.concatenate(([0.0], np.cumsum(dw)))
    else:
        values = z[0] + _rl_kernel(spec.m, spec.beta) @ dw
    return GaussianDriver(values=values, z=z, increments=xi)


def sample_driver(spec: PriorSpec, seed: int) -> GaussianDriver:
    """Fresh driver draw; reproducible from the seed."""
    rng = rng_from(seed)
    z = rng.standard_normal(1)
    xi = rng.standard_normal(spec.m)
    return driver_from_innovations(spec, z, xi)


def _integrate_link(spec: PriorSpec, latent: np.ndarray) -> np.ndarray:
    """Trapezoid integral of the linked latent path, offset by kappa."""
    f = spec.link.value(latent, spec.params.spread)
    steps = (f[..., :-1] + f[..., 1:]) / (2.0 * spec.m)
    return spec.params.kappa + np.concatenate(
        (np.zeros(latent.shape[:-1] + (1,)), np.cumsum(steps, axis=-1)), axis=-1
    )


def driver_to_sigma(driver: GaussianDriver, spec: PriorSpec) -> DispersionFn:
    """Link-and-integrate the driver path; sigma(0) = kappa exactly."""
    values = _integrate_link(spec, driver.values)
    return DispersionFn(values, spec.params)


def dispersion_from_latent(spec: PriorSpec, latent: np.ndarray) -> DispersionFn:
    """Admissible target built through the same link-and-integrate map, from a
    deterministic latent path on the knots (e.g. all zeros). Keeps small-ball
    targets genuinely reachable by the prior."""
    latent = np.asarray(latent, dtype=float)
    if latent.shape != (spec.m + 1,):
        raise ValueError(f"latent path must sit on the {spec.m + 1}-point knot grid")
    return DispersionFn(_integrate_link(spec, latent), spec.params)


def sample_prior(spec: PriorSpec, seed: int) -> DispersionFn:
    return driver_to_sigma(sample_driver(spec, seed), spec)


def sample_prior_values(spec: PriorSpec, count: int, seed: int) -> np.ndarray:
    """Knot values of `count` prior draws as a (count, m+1) matrix.

    One generator drives the whole batch, so the batch is reproducible from
    the seed (but lays out its stream differently than repeated single
    draws).
    """
    if count < 1:
        raise ValueError(f"need count >= 1, got {count}")
    rng = rng_from(seed)
    z = rng.standard_normal(count)
    xi = rng.standard_normal((count, spec.m))
    dw = xi / np.sqrt(spec.m)
    if spec.driver == "bm":
        values = z[:, None] + np.concatenate(
            (np.zeros((count, 1)), np.cumsum(dw, axis=1)), axis=1
        )
    else:
        values = z[:, None] + dw @ _rl_kernel(spec.m, spec.beta).T
    return _integrate_link(spec, values)


def rkhs_norm(g: np.ndarray) -> float:
    """sqrt(g(0)^2 + ||g'||_2^2) for g given at the knots, with the
    piecewise-linear derivative."""
    g = np.asarray(g, dtype=float)
    m = g.size - 1
    dg = np.diff(g)
    return float(np.sqrt(g[0] ** 2 + np.sum(dg * dg) * m))


@dataclass(frozen=True)
class SmallBallEstimate:
    """Monte Carlo estimate of the prior mass of a sup-norm ball."""

    estimate: float
    se: float
    hits: int
    draws: int

    @property
    def lower95(self) -> float:
        """Exact (Clopper-Pearson) lower 95% confidence bound."""
        if self.hits == 0:
            return 0.0
        return float(beta_dist.ppf(0.025, self.hits, self.draws - self.hits + 1))


def small_ball_mass(
    spec: PriorSpec, sigma0: DispersionFn, eps: float, draws: int, seed: int
) -> SmallBallEstimate:
    """Fraction of prior draws within sup-distance eps of sigma0.

    A zero estimate is reported, never raised; the exact lower confidence
    bound distinguishes "no hits" from "provably tiny".
    """
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    if draws < 1:
        raise ValueError("need at least one draw")
    values = sample_prior_values(spec, draws, seed)
    target = sigma0.resampled(spec.m).values
    supd = np.abs(values - target[None, :]).max(axis=1)
    hits = int(np.sum(supd < eps))
    mass = hits / draws
    se = float(np.sqrt(mass * (1.0 - mass) / draws))
    return SmallBallEstimate(estimate=mass, se=se, hits=hits, draws=draws)
