"""Data-generating scenarios S1-S4.

Outcome model:  Y = 100 + k1(X) + T * k2(X) + eps,  eps ~ N(0, sd^2), where
k2(X) = g1(X3) + g2(X4) is the CATE and k1 is the prognostic part:

* S1:     k1 = -(X1 + 5 X2)
* S2-S4:  k1 = -(X1 + 5 X2) + 2 (X5 + ... + X9)

X1, X3, X4, X5..X9 ~ N(0.5, 1); X2 is uniform on {0, 1, 2}; ten N(0, 1) noise
covariates follow.  Treatment: Bernoulli(0.75) in S1/S2 (randomised, known
propensity); in S3 logit pi = alpha1 + beta1 * s(X) with s the prognostic
score; in S4 logit pi = alpha2 + beta2 * k2(X).

Columns are drawn one at a time in the order x1, x2, x3, x4, [x5..x9],
noise, then T, then eps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..core import Dataset
from ..rng import RngStream

SCENARIOS = ("S1", "S2", "S3", "S4")
S3_SCORES = ("core", "k1")


def g1(x, a: float = 0.625, b: float = 5.0):
    """Non-monotone hump: a - b (x - 0.5)^2 on [0, 1], a - b/4 outside."""
    x = np.asarray(x, dtype=float)
    inside = (x >= 0) & (x <= 1)
    return np.where(inside, a - b * (x - 0.5) ** 2, a - 0.25 * b)


def g2(x, c: float = 0.625, d: float = 20.0):
    """Monotone step: 0 below 0, c / (1 + exp(-d (x - 0.5))) on [0, 1], c above 1."""
    x = np.asarray(x, dtype=float)
    mid = c / (1.0 + np.exp(-d * (np.clip(x, 0, 1) - 0.5)))
    return np.where(x < 0, 0.0, np.where(x > 1, c, mid))


def expit(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass(frozen=True)
class ScenarioSpec:
    """Scenario definition; defaults reproduce the published constants.

    Attributes:
        s3_score: prognostic score driving the S3 propensity, ``"core"`` for
            -(X1 + 5 X2) (default) or ``"k1"`` for the full S2 prognostic part.
    """

    id: str = "S1"
    n: int = 1000
    n_noise: int = 10
    a: float = 0.625
    b: float = 5.0
    c: float = 0.625
    d: float = 20.0
    alpha1: float = -2.4
    beta1: float = -0.2
    alpha2: float = -1.64
    beta2: float = 4.2
    p_treat_rct: float = 0.75
    noise_sd: float = 1.0
    intercept: float = 100.0
    s3_score: str = "core"

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.id!r}; valid ids: {', '.join(SCENARIOS)}")
        if self.s3_score not in S3_SCORES:
            raise ValueError(f"s3_score must be one of {S3_SCORES}")
        if self.n < 2:
            raise ValueError("n must be >= 2")

    @property
    def rct(self) -> bool:
        return self.id in ("S1", "S2")

    @property
    def n_signal(self) -> int:
        return 4 if self.id == "S1" else 9

    @property
    def p(self) -> int:
        return self.n_signal + self.n_noise

    def overrides(self) -> dict:
        """Model constants that differ from the published values (watermark)."""
        base = ScenarioSpec(id=self.id)
        skip = {"id", "n", "s3_score"}
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name not in skip and getattr(self, f.name) != getattr(base, f.name)}

    def with_n(self, n: int) -> "ScenarioSpec":
        return ScenarioSpec(**{**asdict(self), "n": int(n)})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Truth:
    """True nuisance and effect functions of a scenario, as callables on X."""

    spec: ScenarioSpec

    def k1(self, x):
        x = np.asarray(x, dtype=float)
        out = -(x[:, 0] + 5.0 * x[:, 1])
        if self.spec.id != "S1":
            out = out + 2.0 * x[:, 4:9].sum(axis=1)
        return out

    def k2(self, x):
        x = np.asarray(x, dtype=float)
        s = self.spec
        return g1(x[:, 2], s.a, s.b) + g2(x[:, 3], s.c, s.d)

    delta = k2

    def m0(self, x):
        return self.spec.intercept + self.k1(x)

    def m1(self, x):
        return self.m0(x) + self.k2(x)

    def pi(self, x):
        x = np.asarray(x, dtype=float)
        s = self.spec
        if s.rct:
            return np.full(x.shape[0], s.p_treat_rct)
        if s.id == "S3":
            score = -(x[:, 0] + 5.0 * x[:, 1]) if s.s3_score == "core" else self.k1(x)
            return expit(s.alpha1 + s.beta1 * score)
        return expit(s.alpha2 + s.beta2 * self.k2(x))

    def m(self, x):
        p = self.pi(x)
        return p * self.m1(x) + (1 - p) * self.m0(x)


@dataclass(frozen=True)
class GeneratedSample:
    """A simulated Dataset with its per-row ground truth."""

    data: Dataset
    delta: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    pi: np.ndarray
    eps: np.ndarray
    spec: ScenarioSpec

    @property
    def in_true_subgroup(self) -> np.ndarray:
        return self.delta > 0

    @property
    def truth(self) -> Truth:
        return Truth(self.spec)


def generate(spec: ScenarioSpec, rng: RngStream) -> GeneratedSample:
    """Draw one sample from ``spec``."""
    n = spec.n
    cols = []
    for j in range(spec.n_signal):
        if j == 1:
            cols.append(rng.categorical_equal(3, n).astype(float))
        else:
            cols.append(0.5 + rng.standard_normal(n))
    for _ in range(spec.n_noise):
        cols.append(rng.standard_normal(n))
    x = np.column_stack(cols)
    truth = Truth(spec)
    pi = truth.pi(x)
    t = (rng.uniform(n) < pi).astype(np.int64)
    if t.sum() in (0, n):
        raise ValueError("simulated sample has an empty arm; increase n")
    eps = spec.noise_sd * rng.standard_normal(n)
    m0 = truth.m0(x)
    delta = truth.k2(x)
    m1 = m0 + delta
    y = np.where(t == 1, m1, m0) + eps
    names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
    data = Dataset(x, y, t, pi if spec.rct else None, names)
    return GeneratedSample(data, delta, m0, m1, pi, eps, spec)
