"""Shared contract for descriptor search backends.

An index stores images (each a packed array of equal-length descriptors)
and answers image queries: for every query descriptor the backend looks for
one nearest stored descriptor, keeps it if its distance is within tau, and
aggregates the surviving matches into per-image vote counts.  Backends only
differ in how they narrow down the candidate set, so results are always
comparable with the brute-force reference.

Conventions shared by all backends:

- reference descriptors get global integer ids in insertion order; distance
  ties are broken toward the lowest id,
- tau is a real number compared inclusively against integer distances
  (tau = 27.2 admits distances up to 27),
- image rankings sort by vote count descending, then image id ascending.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..bitvec import DescriptorArray


@dataclass(frozen=True)
class MatchResult:
    """One query descriptor matched to its nearest stored descriptor."""

    query_image_id: str
    query_descriptor_index: int
    reference_image_id: str
    reference_descriptor_id: int
    distance: int


@dataclass(frozen=True)
class QueryResult:
    """Aggregated outcome of querying one image against the index."""

    query_image_id: str
    image_scores: tuple
    matches: tuple

    def score_dict(self) -> dict:
        return dict(self.image_scores)


class SearchIndex(abc.ABC):
    """Base class: image bookkeeping plus the insert/query contract."""

    def __init__(self):
        self._image_ids: list[str] = []
        self._image_id_set: set[str] = set()
        self._nbits: Optional[int] = None

    # ---- shared bookkeeping ----

    @property
    def image_count(self) -> int:
        return len(self._image_ids)

    @property
    def image_ids(self) -> tuple:
        return tuple(self._image_ids)

    @property
    def descriptor_bits(self) -> Optional[int]:
        return self._nbits

    def _register_image(self, image_id: str, descriptors: DescriptorArray) -> int:
        if not isinstance(image_id, str) or not image_id:
            raise ValueError("image_id must be a non-empty string")
        if image_id in self._image_id_set:
            raise ValueError(f"image {image_id!r} already inserted")
        self._check_width(descriptors, allow_first=True)
        self._image_ids.append(image_id)
        self._image_id_set.add(image_id)
        return len(self._image_ids) - 1

    def _check_width(self, descriptors: DescriptorArray, allow_first: bool = False) -> None:
        if not isinstance(descriptors, DescriptorArray):
            raise ValueError("descriptors must be a DescriptorArray")
        if self._nbits is None:
            if allow_first:
                if descriptors.length_bits == 0:
                    raise ValueError("descriptors must have at least one bit")
                self._nbits = descriptors.length_bits
            return
        if descriptors.length_bits != self._nbits:
            raise ValueError(
                f"descriptor length {descriptors.length_bits} does not match "
                f"index width {self._nbits}"
            )

    @staticmethod
    def _check_tau(tau: float) -> float:
        tau = float(tau)
        if not tau >= 0.0:
            raise ValueError(f"tau must be >= 0, got {tau!r}")
        return tau

    def _rank_images(
        self,
        query_image_id: str,
        matched_image_idx: np.ndarray,
        matches: list,
    ) -> QueryResult:
        """Build a QueryResult from per-match image indices."""
        if len(matched_image_idx):
            counts = np.bincount(matched_image_idx, minlength=len(self._image_ids))
            scored = [
                (self._image_ids[i], int(counts[i]))
                for i in np.flatnonzero(counts)
            ]
            scored.sort(key=lambda item: (-item[1], item[0]))
        else:
            scored = []
        return QueryResult(
            query_image_id=query_image_id,
            image_scores=tuple(scored),
            matches=tuple(matches),
        )

    # ---- backend contract ----

    @abc.abstractmethod
    def insert(self, image_id: str, descriptors: DescriptorArray) -> None:
        """Add one image worth of descriptors.  Image ids must be unique."""

    @abc.abstractmethod
    def query(
        self, query_image_id: str, descriptors: DescriptorArray, tau: float
    ) -> QueryResult:
        """Match each query descriptor against the stored set."""
