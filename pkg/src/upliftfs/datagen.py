"""Synthetic randomized-experiment generator with known individual effects.

Every row gets two counterfactual conversion probabilities from a logistic
model; the observed outcome is drawn from the one matching the assigned arm,
and their difference is the true individual treatment effect. Feature columns
are raw standard normals; only the hidden predictor applies the nonlinear
transforms, so selectors and models face the untransformed inputs.

The draw order inside `generate` is a compatibility contract: structure
draws (transform assignment beyond the first six, classification
coefficients) come from one substream, then row draws (features, noise,
assignment, outcome uniforms) from another. Changing the order changes every
seeded dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset, derived_rng

TRANSFORM_KINDS = ("linear", "quadratic", "cubic", "relu", "sin", "cos")

ROLE_CLASSIFICATION = "classification"
ROLE_UPLIFT = "uplift"
ROLE_IRRELEVANT = "irrelevant"

# Sine/cosine patterns oscillate at frequency 3 so the transformed column is
# essentially uncorrelated with the raw feature (corr(x, sin(3x)) ~ 0.05 for
# standard-normal x). A linear interaction test then sees these features as
# null, while quantile bins still capture strong per-bin variation — the whole
# point of including trigonometric patterns in the benchmark.
_TRIG_FREQUENCY = 3.0

_TRANSFORM_FNS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": lambda x: x,
    "quadratic": np.square,
    "cubic": lambda x: x**3,
    "relu": lambda x: np.maximum(x, 0.0),
    "sin": lambda x: np.sin(_TRIG_FREQUENCY * x),
    "cos": lambda x: np.cos(_TRIG_FREQUENCY * x),
}

# Substream keys; see module docstring.
_STRUCTURE_STREAM = 0
_ROW_STREAM = 1
# Calibration always simulates from this constant so its answer depends only
# on the config's structural draws, not on cfg.n.
_CALIBRATION_SEED = 715517


@dataclass(frozen=True)
class DgpConfig:
    """Generator settings: sizes, intercepts, noise level and seed.

    `m1` counts classification features (shift both arms equally), `m2`
    uplift features (enter only the treatment term), `m3` irrelevant noise
    columns. `a1` is the control-baseline intercept and `a2` the treatment
    intercept; use `calibrate_intercepts` to hit target rates.
    """

    n: int = 10_000
    m1: int = 10
    m2: int = 6
    m3: int = 20
    a1: float = 0.0
    a2: float = 0.0
    noise_sd: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        if min(self.m1, self.m2, self.m3) < 0:
            raise ValueError("feature counts m1, m2, m3 must be non-negative")
        if self.m < 1:
            raise ValueError("need at least one feature in total")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be non-negative, got {self.noise_sd}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def m(self) -> int:
        return self.m1 + self.m2 + self.m3


@dataclass(frozen=True)
class SyntheticDataset:
    """Generated data plus the ground truth models never get to see."""

    data: Dataset
    true_ite: np.ndarray
    p_treat: np.ndarray
    p_control: np.ndarray
    roles: list[str]
    patterns: list[str]
    config: DgpConfig

    def __post_init__(self) -> None:
        for name in ("true_ite", "p_treat", "p_control"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def role_indices(self, role: str) -> list[int]:
        return [j for j, r in enumerate(self.roles) if r == role]

    @property
    def uplift_idx(self) -> list[int]:
        return self.role_indices(ROLE_UPLIFT)

    @property
    def classification_idx(self) -> list[int]:
        return self.role_indices(ROLE_CLASSIFICATION)

    @property
    def irrelevant_idx(self) -> list[int]:
        return self.role_indices(ROLE_IRRELEVANT)

    def truth_dict(self) -> dict:
        """JSON-ready ground truth for the sidecar written by the CLI."""
        cfg = self.config
        return {
            "config": {
                "n": cfg.n,
                "m1": cfg.m1,
                "m2": cfg.m2,
                "m3": cfg.m3,
                "a1": float(cfg.a1),
                "a2": float(cfg.a2),
                "noise_sd": float(cfg.noise_sd),
                "seed": cfg.seed,
            },
            "feature_names": list(self.data.feature_names),
            "roles": list(self.roles),
            "patterns": list(self.patterns),
            "true_ite": [float(v) for v in self.true_ite],
            "p_treat": [float(v) for v in self.p_treat],
            "p_control": [float(v) for v in self.p_control],
        }


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def transform_feature(x: np.ndarray, kind: str) -> np.ndarray:
    """Apply one of the six fixed transforms, then standardize.

    Standardization subtracts the sample mean and divides by the sample
    standard deviation (ddof=1). Constant output (zero variance) is an
    error because the column would carry no signal.
    """
    if kind not in _TRANSFORM_FNS:
        raise ValueError(f"unknown transform '{kind}', expected one of {TRANSFORM_KINDS}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("transform_feature needs a 1-d vector with at least 2 values")
    t = _TRANSFORM_FNS[kind](x)
    sd = t.std(ddof=1)
    if not sd > 1e-12:
        raise ValueError(f"'{kind}' transform produced a (near-)constant column")
    return (t - t.mean()) / sd


def _assign_patterns(count: int, rng: np.random.Generator) -> list[str]:
    """First six features of a role take the transforms in listed order;
    any further ones draw uniformly from the set."""
    patterns = [TRANSFORM_KINDS[j] for j in range(min(count, 6))]
    if count > 6:
        extra = rng.integers(0, len(TRANSFORM_KINDS), size=count - 6)
        patterns += [TRANSFORM_KINDS[int(k)] for k in extra]
    return patterns


def _draw_structure(cfg: DgpConfig) -> tuple[list[str], list[str], np.ndarray]:
    rng = derived_rng(cfg.seed, _STRUCTURE_STREAM)
    class_patterns = _assign_patterns(cfg.m1, rng)
    uplift_patterns = _assign_patterns(cfg.m2, rng)
    if cfg.m1 > 0:
        # Scaled so the summed classification term has roughly unit logit
        # variance for any m1. Individual coefficients (typical magnitude
        # ~0.25 at m1=10) then compete on the same footing as the uplift
        # coefficients, whose 0.5 acts on only the treated half of the rows.
        beta_class = rng.standard_normal(cfg.m1) / np.sqrt(cfg.m1)
    else:
        beta_class = np.zeros(0)
    return class_patterns, uplift_patterns, beta_class


def _predictor_sums(
    x_informative: np.ndarray,
    class_patterns: list[str],
    uplift_patterns: list[str],
    beta_class: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Sum of transformed, standardized columns for each predictor part.

    Returns (classification sum, uplift sum); uplift coefficients are the
    fixed 0.5.
    """
    n = x_informative.shape[0]
    m1 = len(class_patterns)
    base = np.zeros(n)
    for j, kind in enumerate(class_patterns):
        base += beta_class[j] * transform_feature(x_informative[:, j], kind)
    uplift = np.zeros(n)
    for j, kind in enumerate(uplift_patterns):
        uplift += 0.5 * transform_feature(x_informative[:, m1 + j], kind)
    return base, uplift


def generate(cfg: DgpConfig) -> SyntheticDataset:
    """Draw one dataset: features, assignment, outcome and ground truth.

    Layout: columns 0..m1-1 are classification features, the next m2 are
    uplift features, the last m3 are irrelevant raw normals. The logistic
    predictor is a1 + sum(z*beta) + w*(a2 + sum(z*0.5)) + e with per-row
    noise e shared by both counterfactuals.
    """
    class_patterns, uplift_patterns, beta_class = _draw_structure(cfg)

    rng = derived_rng(cfg.seed, _ROW_STREAM)
    x = rng.standard_normal((cfg.n, cfg.m))
    noise = rng.normal(0.0, cfg.noise_sd, cfg.n)
    w = rng.integers(0, 2, size=cfg.n)
    outcome_uniforms = rng.random(cfg.n)

    base, uplift = _predictor_sums(
        x[:, : cfg.m1 + cfg.m2], class_patterns, uplift_patterns, beta_class
    )
    logit_control = cfg.a1 + base + noise
    p_control = sigmoid(logit_control)
    p_treat = sigmoid(logit_control + cfg.a2 + uplift)
    p_factual = np.where(w == 1, p_treat, p_control)
    y = (outcome_uniforms < p_factual).astype(np.int64)

    data = Dataset(
        features=x,
        feature_names=[f"x{j + 1}" for j in range(cfg.m)],
        treatment=w,
        outcome=y,
    )
    return SyntheticDataset(
        data=data,
        true_ite=p_treat - p_control,
        p_treat=p_treat,
        p_control=p_control,
        roles=[ROLE_CLASSIFICATION] * cfg.m1 + [ROLE_UPLIFT] * cfg.m2 + [ROLE_IRRELEVANT] * cfg.m3,
        patterns=class_patterns + uplift_patterns + ["none"] * cfg.m3,
        config=cfg,
    )


def _bisect(fn: Callable[[float], float], lo: float, hi: float, tol: float, max_iter: int) -> float:
    f_lo, f_hi = fn(lo), fn(hi)
    if abs(f_lo) <= tol:
        return lo
    if abs(f_hi) <= tol:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise RuntimeError(
            f"cannot bracket a root in [{lo}, {hi}]; targets are unreachable for this config"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if abs(f_mid) <= tol:
            return mid
        if (hi - lo) < 1e-13:
            break
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    raise RuntimeError(f"bisection did not converge within {max_iter} iterations")


def calibrate_intercepts(
    target_control_rate: float,
    target_ate: float,
    cfg: DgpConfig,
    *,
    n_sim: int = 200_000,
    max_iter: int = 100,
) -> tuple[float, float]:
    """Find intercepts (a1, a2) hitting the target rates for this config.

    Monte-Carlo bisection on a fixed simulated sample of `n_sim` rows that
    shares the config's structural draws (transform assignment and
    classification coefficients) but not its rows, so the result does not
    depend on cfg.n. a1 is tuned first so the mean control conversion
    probability matches `target_control_rate`, then a2 so the mean effect
    matches `target_ate`; both to well within 0.005 on the calibration
    sample.
    """
    if not 0.0 < target_control_rate < 1.0:
        raise ValueError(f"target_control_rate must lie in (0, 1), got {target_control_rate}")
    if not 0.0 <= target_ate < 1.0:
        raise ValueError(f"target_ate must lie in [0, 1), got {target_ate}")
    if target_control_rate + target_ate >= 1.0:
        raise ValueError("target_control_rate + target_ate must stay below 1")

    class_patterns, uplift_patterns, beta_class = _draw_structure(cfg)
    rng = derived_rng(_CALIBRATION_SEED)
    x = rng.standard_normal((n_sim, cfg.m1 + cfg.m2))
    noise = rng.normal(0.0, cfg.noise_sd, n_sim)
    base, uplift = _predictor_sums(x, class_patterns, uplift_patterns, beta_class)

    # Both objectives are strictly increasing in their intercept, so plain
    # bisection is reliable; tol is far tighter than the 0.005 contract.
    tol = 1e-4

    def control_gap(a1: float) -> float:
        return float(sigmoid(a1 + base + noise).mean() - target_control_rate)

    a1 = _bisect(control_gap, -20.0, 20.0, tol, max_iter)
    p_control = sigmoid(a1 + base + noise)
    mean_control = float(p_control.mean())

    def ate_gap(a2: float) -> float:
        return float(sigmoid(a1 + base + noise + a2 + uplift).mean() - mean_control - target_ate)

    a2 = _bisect(ate_gap, -20.0, 20.0, tol, max_iter)
    return float(a1), float(a2)
