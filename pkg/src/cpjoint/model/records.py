"""Data records, parameter blocks and prior configuration for the joint model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

RE_NAMES = ("omega", "b0", "b1", "b2")

__all__ = [
    "RE_NAMES",
    "SubjectRecord",
    "ModelParams",
    "PriorConfig",
    "DEFAULT_TRUTH",
    "validate_subjects",
]


class SubjectError(ValueError):
    """A subject record violates a data invariant."""

    def __init__(self, subject_id, message):
        super().__init__(f"subject {subject_id}: {message}")
        self.subject_id = subject_id


@dataclass
class SubjectRecord:
    """One subject's covariates, visits, outcomes and observed time.

    ``x`` may be a length-p vector (constant over visits) or an
    ``n_i x p`` matrix; it is always stored as the matrix.
    """

    id: str
    x: np.ndarray
    w: np.ndarray
    s: np.ndarray
    y: np.ndarray
    t_obs: float
    event: bool

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim <= 1:
            x = np.broadcast_to(x.reshape(1, -1), (self.s.shape[0], x.size)).copy()
        self.x = x
        self.t_obs = float(self.t_obs)
        self.event = bool(self.event)

    @property
    def n_visits(self) -> int:
        return self.s.shape[0]

    def validate(self, allow_empty: bool = False):
        n = self.n_visits
        if n == 0 and not allow_empty:
            raise SubjectError(self.id, "has no longitudinal visits")
        if self.y.shape[0] != n:
            raise SubjectError(self.id, f"{self.y.shape[0]} outcomes for {n} visit times")
        if self.x.shape[0] != n:
            raise SubjectError(self.id, f"covariate rows ({self.x.shape[0]}) != visits ({n})")
        for arr, label in ((self.s, "visit times"), (self.y, "outcomes"),
                           (self.x, "covariates"), (self.w, "survival covariates")):
            if not np.all(np.isfinite(arr)):
                raise SubjectError(self.id, f"non-finite {label}")
        if not (math.isfinite(self.t_obs) and self.t_obs > 0):
            raise SubjectError(self.id, f"observed time must be positive, got {self.t_obs}")
        if n > 1 and np.any(np.diff(self.s) <= 0):
            raise SubjectError(self.id, "visit times are not strictly increasing")
        if n and self.s[-1] > self.t_obs:
            raise SubjectError(self.id, f"visit at {self.s[-1]} after observed time {self.t_obs}")
        return self


def validate_subjects(subjects, allow_empty: bool = False):
    if not subjects:
        raise ValueError("no subjects")
    p = subjects[0].x.shape[1]
    q = subjects[0].w.shape[0]
    ids = set()
    for subj in subjects:
        subj.validate(allow_empty=allow_empty)
        if subj.x.shape[1] != p or subj.w.shape[0] != q:
            raise SubjectError(subj.id, "covariate dimensions differ from the first subject")
        if subj.id in ids:
            raise SubjectError(subj.id, "duplicate subject id")
        ids.add(subj.id)
    return subjects


@dataclass
class ModelParams:
    """Structural parameters of the joint model.

    Random-effect blocks are ordered ``(omega, b0, b1, b2)``.
    """

    gamma: np.ndarray
    eta: float
    alpha: float
    beta: np.ndarray
    sigma_y: float
    mu_omega: float
    mu_b: np.ndarray
    sd_r: np.ndarray
    Gamma_r: np.ndarray

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.mu_b = np.asarray(self.mu_b, dtype=float).reshape(3)
        self.sd_r = np.asarray(self.sd_r, dtype=float).reshape(4)
        self.Gamma_r = np.asarray(self.Gamma_r, dtype=float).reshape(4, 4)

    def validate(self):
        if not (self.eta > 0 and self.alpha > 0 and self.sigma_y > 0):
            raise ValueError("eta, alpha and sigma_y must be positive")
        if np.any(self.sd_r <= 0):
            raise ValueError("random-effect SDs must be positive")
        G = self.Gamma_r
        if not np.allclose(G, G.T) or not np.allclose(np.diag(G), 1.0):
            raise ValueError("Gamma_r must be a symmetric unit-diagonal matrix")
        np.linalg.cholesky(self.Sigma_r)
        return self

    @property
    def mu_r(self) -> np.ndarray:
        return np.concatenate([[self.mu_omega], self.mu_b])

    @property
    def Sigma_r(self) -> np.ndarray:
        return self.sd_r[:, None] * self.Gamma_r * self.sd_r[None, :]

    @property
    def sigma_omega(self) -> float:
        return float(self.sd_r[0])

    def structural(self) -> dict:
        """Named scalar parameters in the order of the posterior summary table."""
        out = {f"gamma[{k + 1}]": v for k, v in enumerate(self.gamma)}
        out["eta"] = self.eta
        out["alpha"] = self.alpha
        out.update({f"beta[{k + 1}]": v for k, v in enumerate(self.beta)})
        out["sigma_y"] = self.sigma_y
        out["mu_omega"] = self.mu_omega
        out.update({f"mu_{n}": v for n, v in zip(RE_NAMES[1:], self.mu_b)})
        out.update({f"sigma_{n}": v for n, v in zip(RE_NAMES, self.sd_r)})
        return {k: float(v) for k, v in out.items()}

    def correlations(self) -> dict:
        out = {}
        for i in range(4):
            for j in range(i + 1, 4):
                out[f"corr[{RE_NAMES[i]},{RE_NAMES[j]}]"] = float(self.Gamma_r[i, j])
        return out

    def named(self) -> dict:
        return {**self.structural(), **self.correlations()}

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(), "eta": self.eta, "alpha": self.alpha,
            "beta": self.beta.tolist(), "sigma_y": self.sigma_y,
            "mu_omega": self.mu_omega, "mu_b": self.mu_b.tolist(),
            "sd_r": self.sd_r.tolist(), "Gamma_r": self.Gamma_r.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(**{k: d[k] for k in (
            "gamma", "eta", "alpha", "beta", "sigma_y", "mu_omega", "mu_b", "sd_r", "Gamma_r")})

    def copy(self, **changes) -> "ModelParams":
        return replace(self, **changes)


DEFAULT_TRUTH = ModelParams(
    gamma=[0.18], eta=3.76, alpha=1.88, beta=[-0.01], sigma_y=0.08,
    mu_omega=0.90, mu_b=[-0.50, -0.20, 0.60], sd_r=[0.15, 0.20, 0.27, 1.20],
    Gamma_r=[[1.000, -0.415, -0.220, -0.280],
             [-0.415, 1.000, 0.560, 0.200],
             [-0.220, 0.560, 1.000, 0.185],
             [-0.280, 0.200, 0.185, 1.000]],
)


def _gnd_default(*vals):
    return field(default_factory=lambda: tuple(vals))


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters.

    GND entries are ``(location, scale, shape)``; half-normal entries are
    scales of ``N+(0, scale**2)``.
    """

    gamma_sd: float = 10.0
    beta_sd: float = 10.0
    eta_scale: float = 10.0
    alpha_scale: float = 10.0
    sigma_y_scale: float = 10.0
    sd_r_scale: float = 1.0
    gnd_mu_omega: tuple = _gnd_default(0.5, 0.5, 8.0)
    gnd_mu_b0: tuple = _gnd_default(0.0, 1.0, 8.0)
    gnd_mu_b1: tuple = _gnd_default(-0.5, 0.5, 8.0)
    gnd_mu_b2: tuple = _gnd_default(0.5, 0.5, 8.0)
    lkj_eta: float = 1.0

    def __post_init__(self):
        for name in ("gamma_sd", "beta_sd", "eta_scale", "alpha_scale",
                     "sigma_y_scale", "sd_r_scale", "lkj_eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"prior {name} must be positive")
        for name in ("gnd_mu_omega", "gnd_mu_b0", "gnd_mu_b1", "gnd_mu_b2"):
            mu, a, b = getattr(self, name)
            if not a > 0:
                raise ValueError(f"prior {name}: scale must be positive")
            if not b >= 1:
                raise ValueError(f"prior {name}: shape must be >= 1")

    @property
    def gnd(self) -> list:
        return [self.gnd_mu_omega, self.gnd_mu_b0, self.gnd_mu_b1, self.gnd_mu_b2]
