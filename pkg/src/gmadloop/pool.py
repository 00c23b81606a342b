"""Image pool records and fast feature lookup."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass
class ImageRecord:
    """One pool member: identity, distortion taxonomy tags, and its feature vector."""

    image_id: str
    content_id: str
    distortion_type: str
    distortion_level: int
    reference_id: Optional[str]
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"image {self.image_id}: non-finite features")
        if not 1 <= int(self.distortion_level) <= 5:
            raise ValueError(f"image {self.image_id}: distortion_level must be in 1..5")


class ImagePool:
    """Indexed collection of ImageRecords with vectorized feature gathering."""

    def __init__(self, records: Iterable[ImageRecord]):
        self.records = list(records)
        if not self.records:
            raise ValueError("empty image pool")
        dims = {r.features.shape[0] for r in self.records}
        if len(dims) != 1:
            raise ValueError(f"pool mixes feature dimensions: {sorted(dims)}")
        self.feature_dim = dims.pop()
        self._index = {r.image_id: i for i, r in enumerate(self.records)}
        if len(self._index) != len(self.records):
            raise ValueError("duplicate image ids in pool")
        self._matrix = np.stack([r.features for r in self.records])

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def __getitem__(self, image_id: str) -> ImageRecord:
        try:
            return self.records[self._index[image_id]]
        except KeyError:
            raise KeyError(f"unknown image id {image_id!r}") from None

    def image_ids(self) -> list[str]:
        return [r.image_id for r in self.records]

    def features_of(self, image_id: str) -> np.ndarray:
        return self._matrix[self._index[image_id]]

    def indices(self, image_ids: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self._index[i] for i in image_ids], dtype=np.intp)
        except KeyError as exc:
            raise KeyError(f"unknown image id {exc.args[0]!r}") from None

    def matrix(self, image_ids: Sequence[str]) -> np.ndarray:
        """Feature matrix (N, d) for the given ids, in order."""
        return self._matrix[self.indices(image_ids)]

    def subset(self, image_ids: Iterable[str]) -> "ImagePool":
        keep = set(image_ids)
        return ImagePool([r for r in self.records if r.image_id in keep])

    def without(self, image_ids: Iterable[str]) -> "ImagePool":
        drop = set(image_ids)
        return ImagePool([r for r in self.records if r.image_id not in drop])


def feature_matrix(features, image_ids: Sequence[str]) -> np.ndarray:
    """Gather features from an ImagePool or a plain id -> vector mapping."""
    if hasattr(features, "matrix"):
        return features.matrix(image_ids)
    return np.stack([np.asarray(features[i], dtype=np.float64) for i in image_ids])
