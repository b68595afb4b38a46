"""Binary edit masks: edited-word selection, attention-map thresholding, rectangles."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import FormatError, InvalidArgument
from .grid import LatentGrid, read_pgm, write_pgm

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EditMask:
    data: np.ndarray  # bool (H, W)
    degenerate: bool = False  # set when built from a zero-range attention map

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise InvalidArgument(f"mask must be a non-empty 2-D array, got shape {arr.shape}")
        if arr.dtype != bool:
            if not np.isin(arr, (0, 1)).all():
                raise InvalidArgument("mask values must be 0 or 1")
            arr = arr.astype(bool)
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area_edit(self) -> int:
        return int(self.data.sum())

    @property
    def area_total(self) -> int:
        return self.data.size

    def inverted(self) -> "EditMask":
        return EditMask(~self.data)


def area_ratio(mask: EditMask) -> float:
    return mask.area_edit / mask.area_total


def resize_nearest(data: np.ndarray, out: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resampling of a 2-D array (exact replication for integer factors)."""
    h, w = data.shape
    rows = (np.arange(out[0]) * h) // out[0]
    cols = (np.arange(out[1]) * w) // out[1]
    return data[rows[:, None], cols[None, :]]


def resample_mask(mask: EditMask, res: tuple[int, int]) -> EditMask:
    if (mask.height, mask.width) == tuple(res):
        return mask
    return EditMask(resize_nearest(mask.data, tuple(res)), mask.degenerate)


class SimilarityScorer(Protocol):
    def score(self, image: LatentGrid, text: str) -> float: ...


def _trigrams(text: str) -> Counter:
    padded = f"  {text.lower()} "
    return Counter(padded[i : i + 3] for i in range(len(padded) - 2))


class TrigramScorer:
    """Test-only stand-in for an image-text similarity model.

    Scores text against a fixed caption attached to the toy image by cosine
    similarity of character-trigram counts; the image argument is ignored.
    """

    def __init__(self, caption: str):
        self.caption = caption
        self._ref = _trigrams(caption)

    def score(self, image: LatentGrid, text: str) -> float:
        other = _trigrams(text)
        dot = sum(n * other[g] for g, n in self._ref.items())
        norm = np.sqrt(sum(n * n for n in self._ref.values()) * sum(n * n for n in other.values()))
        return float(dot / norm) if norm else 0.0


def select_edited_words(
    p_src: str,
    p_tar: str,
    image: LatentGrid,
    scorer: SimilarityScorer,
    direction: str = "target",
) -> list[str]:
    """Candidate words scoring below the source prompt's own similarity.

    direction="target" takes words of p_tar missing from p_src (the reading
    that names what the edit introduces); direction="source" takes words of
    p_src missing from p_tar.
    """
    src, tar = p_src.split(), p_tar.split()
    if not src or not tar:
        raise InvalidArgument("both prompts must be non-empty")
    if direction == "target":
        pool, other = tar, set(src)
    elif direction == "source":
        pool, other = src, set(tar)
    else:
        raise InvalidArgument(f"direction must be 'target' or 'source', got {direction!r}")
    candidates = [w for w in dict.fromkeys(pool) if w not in other]
    if not candidates:
        return []
    threshold = scorer.score(image, p_src)
    return [w for w in candidates if scorer.score(image, w) < threshold]


def word_indices(prompt_words, selected) -> list[int]:
    chosen = set(selected)
    return [i for i, w in enumerate(prompt_words) if w in chosen]


def extract_mask(
    maps_t1: np.ndarray,
    word_indices,
    threshold: float = 0.3,
    out: tuple[int, int] = (64, 64),
) -> EditMask:
    """Average the selected token maps, min-max normalize, binarize (> threshold), upsample.

    ``maps_t1`` has shape (h, w, N). A zero-range average yields an all-zero
    mask flagged ``degenerate``.
    """
    maps_t1 = np.asarray(maps_t1, dtype=np.float64)
    if maps_t1.ndim != 3:
        raise InvalidArgument(f"attention maps must be (h, w, N), got shape {maps_t1.shape}")
    idx = list(word_indices)
    if not idx:
        raise InvalidArgument("word_indices must be non-empty")
    n = maps_t1.shape[2]
    if any(not 0 <= i < n for i in idx):
        raise InvalidArgument(f"word index out of range for {n} tokens: {idx}")
    avg = maps_t1[:, :, idx].mean(axis=2)
    lo, hi = avg.min(), avg.max()
    if hi == lo:
        log.warning("attention map has zero range; returning an empty mask")
        return EditMask(np.zeros(tuple(out), dtype=bool), degenerate=True)
    binary = (avg - lo) / (hi - lo) > threshold
    return EditMask(resize_nearest(binary, tuple(out)))


def rect_mask(x0: int, y0: int, x1: int, y1: int, res: tuple[int, int] = (64, 64)) -> EditMask:
    """Half-open rectangle [x0, x1) x [y0, y1) at resolution (H, W)."""
    h, w = res
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise InvalidArgument(f"rectangle ({x0}, {y0}, {x1}, {y1}) invalid for resolution {h}x{w}")
    data = np.zeros((h, w), dtype=bool)
    data[y0:y1, x0:x1] = True
    return EditMask(data)


def mask_write_pgm(mask: EditMask, path) -> None:
    write_pgm(mask.data.astype(np.uint8) * 255, path)


def mask_read_pgm(path) -> EditMask:
    pixels = read_pgm(path)
    if not np.isin(pixels, (0, 255)).all():
        raise FormatError(f"{path}: mask PGM must contain only 0 and 255")
    return EditMask(pixels == 255)


def rect_to_json(x0: int, y0: int, x1: int, y1: int, res=(64, 64)) -> dict:
    return {"x0": x0, "y0": y0, "x1": x1, "y1": y1, "res": list(res)}


def rect_from_json(obj: dict) -> EditMask:
    try:
        res = tuple(obj.get("res", (64, 64)))
        return rect_mask(int(obj["x0"]), int(obj["y0"]), int(obj["x1"]), int(obj["y1"]), res)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad rectangle record {obj!r}: {exc}") from exc


def load_rects(path) -> list[dict]:
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data.get("rects", [data])
    if not isinstance(data, list):
        raise FormatError(f"{path}: expected a list of rectangles")
    return data
