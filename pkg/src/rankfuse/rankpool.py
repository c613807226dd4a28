"""Rank pooling of ordered slice stacks into dynamic feature images.

A volume of T slices is treated as a sequence in "time" (the slice index).
Per-slice features are the flattened pixel intensities; their running means
V_t are ranked by a linear scorer ``S(t|d) = <d, V_t>`` fitted with a
RankSVM objective::

    E(d) = lambda/2 * ||d||^2 + 2/(T(T-1)) * sum_{q>t} max(0, 1 - S(q|d) + S(t|d))

The minimiser ``d*`` has one entry per pixel and is rendered back as an image.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import _backend
from .errors import InvalidInput, NumericalFailure

SLICE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class Volume:
    """Ordered stack of grayscale slices, shape (T, H, W), values in [0, 1]."""

    slices: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        s = np.asarray(self.slices, dtype=np.float64)
        if s.ndim == 2:
            s = s[None]
        if s.ndim != 3:
            raise InvalidInput(f"volume must be (T, H, W), got shape {s.shape}")
        if s.shape[0] < 1:
            raise InvalidInput("volume has no slices")
        if s.shape[1] < 1 or s.shape[2] < 1:
            raise InvalidInput(f"empty slice shape {s.shape[1:]}")
        if not np.all(np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0:
            raise InvalidInput("slice intensities must lie in [0, 1]")
        object.__setattr__(self, "slices", s)

    @property
    def n_slices(self):
        return self.slices.shape[0]

    @property
    def slice_shape(self):
        return self.slices.shape[1:]


@dataclass(frozen=True)
class FeatureSequence:
    psi: np.ndarray  # (T, d_feat)
    prefix_means: np.ndarray  # (T, d_feat)

    @property
    def n_steps(self):
        return self.psi.shape[0]

    @property
    def dim(self):
        return self.psi.shape[1]


@dataclass(frozen=True)
class RankPoolConfig:
    """Solver settings.

    ``step_rule`` is ``"backtracking"`` (Armijo line search, monotone
    objective) or ``"fixed"`` (constant step ``step_size``).
    """

    lam: float = 1.0
    max_iters: int = 500
    tolerance: float = 1e-10
    step_rule: str = "backtracking"
    step_size: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidInput("lambda must be positive")
        if self.max_iters < 1:
            raise InvalidInput("max_iters must be >= 1")
        if not self.tolerance > 0:
            raise InvalidInput("tolerance must be positive")
        if self.step_rule not in ("backtracking", "fixed"):
            raise InvalidInput(f"unknown step rule {self.step_rule!r}")
        if not self.step_size > 0:
            raise InvalidInput("step_size must be positive")


@dataclass
class FitResult:
    d: np.ndarray
    objective: float
    iterations: int
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class DynamicFeatureImage:
    d_star: np.ndarray
    raster: np.ndarray  # (H, W, 3) float64 in [0, 255]
    final_objective: float
    iterations: int = 0
    source_id: str = ""
    n_slices: int = 0
    lam: float = 1.0

    def to_uint8(self):
        return np.clip(np.rint(self.raster), 0, 255).astype(np.uint8)

    def sidecar(self):
        return {
            "source_id": self.source_id,
            "T": self.n_slices,
            "lambda": self.lam,
            "iterations": self.iterations,
            "final_objective": self.final_objective,
        }


def load_volume(directory, source_id=None):
    """Read a directory of 8-bit grayscale PNG/JPEG slices in filename order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidInput(f"not a directory: {directory}")
    files = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in SLICE_SUFFIXES
    )
    if not files:
        raise InvalidInput(f"no PNG/JPEG slices in {directory}")
    slices = []
    for p in files:
        with Image.open(p) as im:
            slices.append(np.asarray(im.convert("L"), dtype=np.float64) / 255.0)
    shapes = {s.shape for s in slices}
    if len(shapes) != 1:
        raise InvalidInput(f"slices in {directory} differ in size: {sorted(shapes)}")
    return Volume(np.stack(slices), source_id or directory.name)


def extract_slice_features(volume):
    """Flatten each slice row-major and accumulate running means."""
    if not isinstance(volume, Volume):
        volume = Volume(volume)
    psi = volume.slices.reshape(volume.n_slices, -1)
    prefix = np.empty_like(psi)
    running = np.zeros(psi.shape[1])
    for t in range(psi.shape[0]):
        running += psi[t]
        prefix[t] = running / (t + 1)
    return FeatureSequence(psi, prefix)


def feature_sequence(psi):
    """Build a FeatureSequence from precomputed per-step feature vectors."""
    psi = np.asarray(psi, dtype=np.float64)
    if psi.ndim == 1:
        psi = psi[:, None]
    if psi.ndim != 2 or psi.shape[0] < 1:
        raise InvalidInput(f"psi must be (T, d), got shape {psi.shape}")
    prefix = np.cumsum(psi, axis=0) / np.arange(1, psi.shape[0] + 1)[:, None]
    return FeatureSequence(psi, prefix)


def score(d, v):
    d = np.asarray(d, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if d.shape != v.shape:
        raise InvalidInput(f"dimension mismatch: {d.shape} vs {v.shape}")
    return float(np.dot(d.ravel(), v.ravel()))


def _check_pairs(fs, d=None):
    if fs.n_steps < 2:
        raise InvalidInput("T < 2: need at least two slices to rank")
    if d is not None:
        d = np.asarray(d, dtype=np.float64).ravel()
        if d.shape[0] != fs.dim:
            raise InvalidInput(f"d has dimension {d.shape[0]}, features have {fs.dim}")
        return d


def _evaluate(d, fs, lam):
    """Objective value and subgradient at ``d`` in one pass over the pairs."""
    T = fs.n_steps
    norm = 2.0 / (T * (T - 1))
    total, coef = _backend.rank_hinge(fs.prefix_means @ d)
    value = 0.5 * lam * float(d @ d) + norm * total
    grad = lam * d - norm * (coef @ fs.prefix_means)
    return value, grad


def objective(d, fs, lam):
    d = _check_pairs(fs, d)
    return _evaluate(d, fs, lam)[0]


def subgradient(d, fs, lam):
    """Subgradient of the objective; pairs sitting exactly on the hinge kink are inactive."""
    d = _check_pairs(fs, d)
    return _evaluate(d, fs, lam)[1]


def _finite(value, grad, it):
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericalFailure(f"non-finite objective or subgradient at iteration {it}")


def fit_rank_pooling(fs, cfg=None):
    """Minimise the RankSVM objective by subgradient descent from ``d = 0``.

    Returns a :class:`FitResult`; ``result.d`` is the pooled descriptor.
    With the backtracking rule the recorded objective trace never increases.
    The fixed-step rule may oscillate, so the best iterate seen is returned.
    """
    cfg = cfg or RankPoolConfig()
    _check_pairs(fs)
    lam = cfg.lam
    d = np.zeros(fs.dim)
    value, grad = _evaluate(d, fs, lam)
    _finite(value, grad, 0)
    trace = [value]
    best_d, best_value = d, value
    step = cfg.step_size
    for it in range(1, cfg.max_iters + 1):
        gg = float(grad @ grad)
        if gg == 0.0:
            break
        if cfg.step_rule == "fixed":
            d_new = d - cfg.step_size * grad
            new_value, new_grad = _evaluate(d_new, fs, lam)
        else:
            # Armijo backtracking; a failed search means no descent along -g
            step = min(step * 2.0, 1e6)
            while True:
                d_new = d - step * grad
                new_value, new_grad = _evaluate(d_new, fs, lam)
                if new_value <= value - 1e-4 * step * gg:
                    break
                step *= 0.5
                if step < 1e-14:
                    d_new = None
                    break
            if d_new is None:
                break
        _finite(new_value, new_grad, it)
        decrease = value - new_value
        d, value, grad = d_new, new_value, new_grad
        trace.append(value)
        if value < best_value:
            best_d, best_value = d, value
        if 0.0 <= decrease < cfg.tolerance:
            break
    return FitResult(best_d, best_value, len(trace) - 1, trace)


def approximate_rank_pooling(fs):
    """Closed-form surrogate for the exact solver: ``sum_t (2t - T - 1) V_t``.

    The coefficients come from a single gradient step of the hinge objective
    taken at ``d = 0`` (every pair active), up to a positive scale. They sum
    to zero, so a constant sequence pools to the zero vector.
    """
    _check_pairs(fs)
    T = fs.n_steps
    alpha = 2.0 * np.arange(1, T + 1) - T - 1
    return alpha @ fs.prefix_means


def render(d_star, shape):
    """Min-max normalise ``d_star`` to [0, 255] as an (H, W, 3) raster."""
    img = np.asarray(d_star, dtype=np.float64).reshape(shape)
    lo, hi = img.min(), img.max()
    if hi > lo:
        gray = (img - lo) / (hi - lo) * 255.0
    else:
        gray = np.zeros(shape)
    return np.repeat(gray[:, :, None], 3, axis=2)


def pool_volume(volume, cfg=None, approximate=False):
    """Rank-pool a volume into a :class:`DynamicFeatureImage`."""
    cfg = cfg or RankPoolConfig()
    if not isinstance(volume, Volume):
        volume = Volume(volume)
    fs = extract_slice_features(volume)
    if approximate:
        d_star = approximate_rank_pooling(fs)
        fit = FitResult(d_star, objective(d_star, fs, cfg.lam), 0)
    else:
        fit = fit_rank_pooling(fs, cfg)
    return DynamicFeatureImage(
        d_star=fit.d,
        raster=render(fit.d, volume.slice_shape),
        final_objective=fit.objective,
        iterations=fit.iterations,
        source_id=volume.source_id,
        n_slices=volume.n_slices,
        lam=cfg.lam,
    )


def save_dynamic_image(dfi, png_path, json_path=None):
    import json

    png_path = Path(png_path)
    png_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(dfi.to_uint8()).save(png_path)
    json_path = Path(json_path) if json_path else png_path.with_suffix(".json")
    json_path.write_text(json.dumps(dfi.sidecar(), indent=2, sort_keys=True) + "\n")
    return png_path, json_path
