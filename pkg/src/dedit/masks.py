"""Segmentation maps and their edit operations.

Maps are immutable values; every operation returns a new map. Pixels
that lose their owner (moved away, erased, item removed) are refilled
by the nearest remaining region: multi-source breadth-first distance
with 4-connectivity (Manhattan metric on the open grid), ties going to
the smallest item id. The item being edited never donates to the fill,
so shrinking or moving an item hands territory to its neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import distance_transform_cdt

from .errors import ConfigError, EditError, IntegrityError

MAX_ITEMS = 16
EDIT_KINDS = ("translate", "scale", "paint", "swap")


class SegmentationMap:
    def __init__(self, labels, n_items: int):
        arr = np.asarray(labels, dtype=np.int32)
        if arr.ndim != 2:
            raise ConfigError(f"labels must be a 2-D grid, got shape {arr.shape}")
        if not 1 <= n_items <= MAX_ITEMS:
            raise ConfigError(f"n_items must be in [1, {MAX_ITEMS}], got {n_items}")
        self.labels = arr
        self.n_items = n_items

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def pixel_counts(self) -> np.ndarray:
        return np.bincount(self.labels.ravel().clip(0), minlength=self.n_items)

    def copy_labels(self) -> np.ndarray:
        return self.labels.copy()


@dataclass
class MaskEdit:
    kind: str
    item_id: int
    dx: int = 0
    dy: int = 0
    factor: float = 1.0
    anchor: Optional[Tuple[float, float]] = None  # (row, col)
    pixels: Optional[List[Tuple[int, int]]] = None  # (row, col) list
    polarity: str = "add"
    other_item: int = -1

    def validate(self) -> None:
        if self.kind not in EDIT_KINDS:
            raise ConfigError(f"unknown edit kind {self.kind!r}")
        if self.item_id < 0:
            raise ConfigError(f"item_id must be nonnegative, got {self.item_id}")
        if self.kind == "scale":
            if self.factor <= 0:
                raise ConfigError(f"scale factor must be positive, got {self.factor}")
            if self.anchor is None:
                raise ConfigError("scale edit needs an anchor point")
        if self.kind == "paint":
            if self.pixels is None:
                raise ConfigError("paint edit needs a pixel list")
            if self.polarity not in ("add", "erase"):
                raise ConfigError(f"paint polarity must be add or erase, got {self.polarity!r}")
        if self.kind == "swap" and self.other_item < 0:
            raise ConfigError("swap edit needs other_item")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "item_id": self.item_id}
        if self.kind == "translate":
            d.update(dx=self.dx, dy=self.dy)
        elif self.kind == "scale":
            d.update(factor=self.factor, anchor=list(self.anchor))
        elif self.kind == "paint":
            d.update(pixels=[list(p) for p in self.pixels], polarity=self.polarity)
        elif self.kind == "swap":
            d.update(other_item=self.other_item)
        return d

    @staticmethod
    def from_dict(d: dict) -> "MaskEdit":
        edit = MaskEdit(
            kind=d.get("kind", ""), item_id=int(d.get("item_id", -1)),
            dx=int(d.get("dx", 0)), dy=int(d.get("dy", 0)),
            factor=float(d.get("factor", 1.0)),
            anchor=tuple(d["anchor"]) if d.get("anchor") is not None else None,
            pixels=[tuple(int(v) for v in p) for p in d["pixels"]]
            if d.get("pixels") is not None else None,
            polarity=d.get("polarity", "add"),
            other_item=int(d.get("other_item", -1)))
        edit.validate()
        return edit


@dataclass
class PartitionReport:
    valid: bool
    histogram: np.ndarray
    empty_items: List[int]


def validate_partition(m: SegmentationMap) -> PartitionReport:
    bad = (m.labels < 0) | (m.labels >= m.n_items)
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise IntegrityError(
            f"pixel ({r}, {c}) holds label {m.labels[r, c]}, valid range [0, {m.n_items})")
    hist = np.bincount(m.labels.ravel(), minlength=m.n_items)
    empty = [i for i in range(m.n_items) if hist[i] == 0]
    return PartitionReport(valid=True, histogram=hist, empty_items=empty)


def _check_item(m: SegmentationMap, item: int) -> None:
    if not 0 <= item < m.n_items:
        raise EditError(f"item {item} outside [0, {m.n_items})")


def nearest_region_fill(labels: np.ndarray, fill: np.ndarray, exclude: Sequence[int],
                        n_items: int) -> np.ndarray:
    """Assign each pixel under `fill` the label of its nearest donor pixel.

    Donors are pixels outside the fill region whose label is not in
    `exclude`. Distance is the 4-connected breadth-first metric, which
    on an open grid is Manhattan distance; equidistant donors resolve
    to the smallest item id.
    """
    out = labels.copy()
    if not np.any(fill):
        return out
    excluded = set(exclude)
    donors = [l for l in range(n_items)
              if l not in excluded and np.any((labels == l) & ~fill)]
    if not donors:
        raise EditError("no remaining region is available to fill the vacated pixels")
    dists = np.stack([distance_transform_cdt(~((labels == l) & ~fill), metric="taxicab")
                      for l in donors])
    winner = np.argmin(dists, axis=0)  # first minimum: smallest donor id wins ties
    out[fill] = np.asarray(donors, dtype=labels.dtype)[winner[fill]]
    return out


def _finish(labels: np.ndarray, n_items: int) -> SegmentationMap:
    m = SegmentationMap(labels, n_items)
    validate_partition(m)
    return m


def transform_mask(m: SegmentationMap, edit: MaskEdit) -> SegmentationMap:
    edit.validate()
    if edit.kind not in ("translate", "scale"):
        raise ConfigError(f"transform_mask cannot apply a {edit.kind!r} edit")
    _check_item(m, edit.item_id)
    src = m.labels == edit.item_id
    if not np.any(src):
        raise EditError(f"item {edit.item_id} has no pixels to transform")

    if edit.kind == "translate":
        dest = np.zeros_like(src)
        rows, cols = np.nonzero(src)
        r2, c2 = rows + edit.dy, cols + edit.dx
        keep = (r2 >= 0) & (r2 < m.height) & (c2 >= 0) & (c2 < m.width)
        dest[r2[keep], c2[keep]] = True
    else:
        ar, ac = edit.anchor
        rr, cc = np.mgrid[0:m.height, 0:m.width]
        # inverse map each destination pixel into the source frame
        sr = np.floor(ar + (rr - ar) / edit.factor + 0.5).astype(np.int64)
        sc_ = np.floor(ac + (cc - ac) / edit.factor + 0.5).astype(np.int64)
        inside = (sr >= 0) & (sr < m.height) & (sc_ >= 0) & (sc_ < m.width)
        dest = np.zeros_like(src)
        dest[inside] = src[sr[inside], sc_[inside]]

    if not np.any(dest):
        raise EditError(
            f"transform leaves item {edit.item_id} fully off-canvas; remove the item instead")

    vacated = src & ~dest
    out = m.copy_labels()
    filled = nearest_region_fill(out, vacated, exclude=[edit.item_id], n_items=m.n_items)
    filled[dest] = edit.item_id
    return _finish(filled, m.n_items)


def apply_paint(m: SegmentationMap, edit: MaskEdit) -> SegmentationMap:
    edit.validate()
    if edit.kind != "paint":
        raise ConfigError(f"apply_paint cannot apply a {edit.kind!r} edit")
    _check_item(m, edit.item_id)
    for r, c in edit.pixels:
        if not (0 <= r < m.height and 0 <= c < m.width):
            raise EditError(f"paint pixel ({r}, {c}) outside {m.height}x{m.width} canvas")

    out = m.copy_labels()
    if edit.polarity == "add":
        for r, c in edit.pixels:
            out[r, c] = edit.item_id
        return _finish(out, m.n_items)

    erase = np.zeros_like(out, dtype=bool)
    for r, c in edit.pixels:
        if out[r, c] == edit.item_id:
            erase[r, c] = True
    owned = int((out == edit.item_id).sum())
    if np.any(erase) and int(erase.sum()) >= owned:
        raise EditError(
            f"erasing {int(erase.sum())} pixels would empty item {edit.item_id}; "
            f"remove the item instead")
    filled = nearest_region_fill(out, erase, exclude=[edit.item_id], n_items=m.n_items)
    return _finish(filled, m.n_items)


def swap_masks(m: SegmentationMap, i: int, j: int) -> SegmentationMap:
    _check_item(m, i)
    _check_item(m, j)
    if i == j:
        raise EditError(f"cannot swap item {i} with itself")
    a = m.labels == i
    b = m.labels == j
    if not np.any(a) or not np.any(b):
        raise EditError(f"swap requires both items nonempty ({i}: {int(a.sum())} px, "
                        f"{j}: {int(b.sum())} px)")
    out = m.copy_labels()
    out[a] = j
    out[b] = i
    return _finish(out, m.n_items)


def apply_edit(m: SegmentationMap, edit: MaskEdit) -> SegmentationMap:
    """Route one edit to its handler; always returns a fresh map."""
    edit.validate()
    if edit.kind in ("translate", "scale"):
        return transform_mask(m, edit)
    if edit.kind == "paint":
        return apply_paint(m, edit)
    return swap_masks(m, edit.item_id, edit.other_item)


@dataclass
class RemovalResult:
    map: SegmentationMap
    remap: Dict[int, int]  # old id -> new id for every surviving item


def remove_item_repartition(m: SegmentationMap, removed: int) -> RemovalResult:
    _check_item(m, removed)
    if m.n_items < 2:
        raise EditError("cannot remove the last item of a map")
    fill = m.labels == removed
    filled = nearest_region_fill(m.labels, fill, exclude=[removed], n_items=m.n_items)
    remap = {}
    new = filled.copy()
    for old in range(m.n_items):
        if old == removed:
            continue
        remap[old] = old if old < removed else old - 1
        new[filled == old] = remap[old]
    return RemovalResult(map=_finish(new, m.n_items - 1), remap=remap)
