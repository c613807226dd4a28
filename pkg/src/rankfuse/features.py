"""Feature maps: a frozen toy extractor, TNSR import/export and modality fusion.

Feature maps are (W', H', C) arrays. Fusion stacks a DM map and a DBT map
on a new modality axis, giving (W', H', 2, C) with DM at index 0.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensorio
from .errors import FormatError, InvalidInput

MODALITIES = ("DM", "DBT")
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray
    source_modality: str = "DM"

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidInput(f"feature map must be (W, H, C) with positive sizes, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInput("feature map contains non-finite values")
        if self.source_modality not in MODALITIES:
            raise InvalidInput(f"unknown modality {self.source_modality!r}")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class FusedFeatureMap:
    data: np.ndarray  # (W, H, 2, C)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[2] != 2:
            raise InvalidInput(f"fused map must be (W, H, 2, C), got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


def concat_modality(dm, dbt):
    if dm.shape != dbt.shape:
        raise InvalidInput(f"DM map {dm.shape} and DBT map {dbt.shape} differ in shape")
    return FusedFeatureMap(np.stack([dm.data, dbt.data], axis=2))


def unfuse(fused):
    return (
        FeatureMap(fused.data[:, :, 0, :].copy(), "DM"),
        FeatureMap(fused.data[:, :, 1, :].copy(), "DBT"),
    )


@dataclass(frozen=True)
class ToyExtractorSpec:
    channels: tuple = (8, 16, 32)
    in_channels: int = 1
    rng_seed: int = 0

    @property
    def downsample_factor(self):
        return 2 ** len(self.channels)


class ToyExtractor:
    """Frozen stack of [3x3 conv (same padding, no bias) -> leaky ReLU -> 2x2/2 max pool].

    Stands in for a pretrained backbone. Weights are drawn He-uniform from
    ``spec.rng_seed`` or passed explicitly as a list of (3, 3, C_in, C_out)
    arrays; either way they are read-only afterwards.
    """

    def __init__(self, spec=None, weights=None):
        self.spec = spec or ToyExtractorSpec()
        if weights is None:
            weights = self._init_weights(self.spec)
        frozen = []
        for w in weights:
            w = np.array(w, dtype=np.float64)
            if w.ndim != 4 or w.shape[:2] != (3, 3):
                raise InvalidInput(f"kernel must be (3, 3, C_in, C_out), got {w.shape}")
            w.setflags(write=False)
            frozen.append(w)
        for a, b in zip(frozen, frozen[1:]):
            if a.shape[3] != b.shape[2]:
                raise InvalidInput("kernel channel counts do not chain")
        self.weights = tuple(frozen)

    @staticmethod
    def _init_weights(spec):
        rng = np.random.default_rng(spec.rng_seed)
        weights, c_in = [], spec.in_channels
        for c_out in spec.channels:
            bound = np.sqrt(6.0 / (9 * c_in))
            weights.append(rng.uniform(-bound, bound, size=(3, 3, c_in, c_out)))
            c_in = c_out
        return weights

    @property
    def n_stages(self):
        return len(self.weights)

    def output_shape(self, image_shape):
        w, h = image_shape[:2]
        f = 2 ** self.n_stages
        return (w // f, h // f, self.weights[-1].shape[3])

    def extract(self, image, modality="DM"):
        x = np.asarray(image, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3:
            raise InvalidInput(f"image must be (W, H) or (W, H, K), got {x.shape}")
        if x.shape[2] != self.weights[0].shape[2]:
            raise InvalidInput(
                f"image has {x.shape[2]} channels, extractor expects {self.weights[0].shape[2]}"
            )
        f = 2 ** self.n_stages
        if x.shape[0] % f or x.shape[1] % f:
            raise InvalidInput(
                f"spatial size {x.shape[:2]} is not divisible by {f} ({self.n_stages} pooling stages)"
            )
        for w in self.weights:
            x = conv3x3_same(x, w)
            x = np.where(x > 0, x, LEAKY_SLOPE * x)
            x = maxpool2x2_stride2(x)
        return FeatureMap(x.astype(np.float32), modality)


def conv3x3_same(x, kernel):
    """Cross-correlation of (W, H, C_in) with (3, 3, C_in, C_out), zero padded."""
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(0, 1))  # (W, H, C_in, 3, 3)
    return np.einsum("whcij,ijco->who", windows, kernel, optimize=True)


def maxpool2x2_stride2(x):
    w, h, c = x.shape
    return x.reshape(w // 2, 2, h // 2, 2, c).max(axis=(1, 3))


def export_feature_map(path, fmap):
    data = fmap.data if isinstance(fmap, (FeatureMap, FusedFeatureMap)) else fmap
    tensorio.write(path, np.asarray(data))


def import_feature_map(path, modality="DM"):
    data = tensorio.read(path)
    if data.ndim != 3:
        raise FormatError(f"{path}: expected a rank-3 feature map, file has rank {data.ndim}", 6)
    return FeatureMap(data, modality)


def feature_map_paths(directory, sample_id):
    directory = Path(directory)
    return directory / f"{sample_id}_dm.tnsr", directory / f"{sample_id}_dbt.tnsr"
