"""Controllable harmonicity by gamma sampling.

The total probability of the attribute tokens (chord tones) is raised to the
power ``tan(pi * gamma / 2)`` with ``gamma = 1 - h``; attribute tokens share
the new mass pro rata and the remaining tokens absorb the difference.
``h = 0.5`` is the identity, ``h = 1`` keeps only chord tones and ``h = 0``
removes them.
"""

from __future__ import annotations

import math
from typing import Iterable, Literal

import numpy as np

from choirgen.codec import HOLD, VOCAB_SIZE

NORMALIZATION_TOL = 1e-6

AttributePolicy = Literal["literal", "hold-inherit"]
DrawPolicy = Literal["multinomial", "greedy"]


def _chord_tone_mask(chroma: int) -> np.ndarray:
    mask = np.zeros(VOCAB_SIZE, dtype=bool)
    for midi in range(128):
        if chroma >> (midi % 12) & 1:
            mask[midi] = True
    return mask


_MASKS = [_chord_tone_mask(c) for c in range(4096)]


def attribute_tokens(
    chroma: int,
    policy: AttributePolicy = "literal",
    last_sounding: int | None = None,
) -> np.ndarray:
    """Boolean mask over the vocabulary marking chord-tone tokens.

    Under ``hold-inherit`` HOLD counts as a chord tone when the token it
    continues (``last_sounding``, the voice's latest non-HOLD token) is a
    pitch in the chord. REST is never an attribute token.
    """
    if not 0 <= chroma < 4096:
        raise ValueError(f"chromagram out of range: {chroma}")
    if policy not in ("literal", "hold-inherit"):
        raise ValueError(f"unknown attribute policy {policy!r}")
    mask = _MASKS[chroma]
    if (
        policy == "hold-inherit"
        and last_sounding is not None
        and 0 <= last_sounding < 128
        and mask[last_sounding]
    ):
        mask = mask.copy()
        mask[HOLD] = True
    return mask


def attribute_set(chroma: int, policy: AttributePolicy = "literal", last_sounding: int | None = None) -> frozenset[int]:
    return frozenset(np.flatnonzero(attribute_tokens(chroma, policy, last_sounding)).tolist())


def _as_mask(attributes: np.ndarray | Iterable[int], size: int) -> np.ndarray:
    if isinstance(attributes, np.ndarray) and attributes.dtype == bool:
        if attributes.shape != (size,):
            raise ValueError("attribute mask shape does not match the distribution")
        return attributes
    mask = np.zeros(size, dtype=bool)
    idx = np.fromiter(attributes, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ValueError("attribute token id outside the vocabulary")
    mask[idx] = True
    return mask


def attribute_mass_out(p_attr: float, h: float) -> float:
    """Attribute mass after the transform for input mass ``p_attr``."""
    if p_attr <= 0.0 or p_attr >= 1.0:
        return p_attr
    if h == 1.0:
        return 1.0
    if h == 0.0:
        return 0.0
    gamma = 1.0 - h
    return p_attr ** math.tan(math.pi * gamma / 2.0)


def gamma_transform(
    probs: np.ndarray,
    attributes: np.ndarray | Iterable[int],
    h: float,
) -> np.ndarray:
    """Rescale ``probs`` so the attribute tokens carry the mass given by
    :func:`attribute_mass_out`. Ratios inside each side are preserved."""
    if not 0.0 <= h <= 1.0 or math.isnan(h):
        raise ValueError(f"h must lie in [0, 1], got {h}")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > NORMALIZATION_TOL:
        raise ValueError("input distribution must be non-negative and sum to 1")
    mask = _as_mask(attributes, probs.size)
    p_attr = float(probs[mask].sum())
    p_rest = float(probs[~mask].sum())
    if p_attr <= 0.0 or p_rest <= 0.0:
        return probs.copy()

    out = np.empty_like(probs)
    if h == 1.0:
        out[mask] = probs[mask] / p_attr
        out[~mask] = 0.0
        return out
    if h == 0.0:
        out[mask] = 0.0
        out[~mask] = probs[~mask] / p_rest
        return out

    p_out = attribute_mass_out(p_attr, h)
    out[mask] = probs[mask] * (p_out / p_attr)
    out[~mask] = probs[~mask] * (1.0 + (p_attr - p_out) / p_rest)
    return out


def mask_tokens(probs: np.ndarray, banned: Iterable[int]) -> np.ndarray:
    """Zero the ``banned`` tokens and renormalize; returns ``probs`` unchanged
    if that would remove all mass."""
    out = np.array(probs, dtype=np.float64)
    out[list(banned)] = 0.0
    total = out.sum()
    if total <= 0.0:
        return np.asarray(probs, dtype=np.float64)
    return out / total


def sample_token(
    probs: np.ndarray,
    rng: np.random.Generator | None = None,
    policy: DrawPolicy = "multinomial",
) -> int:
    probs = np.asarray(probs, dtype=np.float64)
    total = probs.sum()
    if not total > 0.0:
        raise ValueError("cannot sample from an all-zero distribution")
    if policy == "greedy":
        return int(np.argmax(probs))  # argmax returns the lowest id on ties
    if policy != "multinomial":
        raise ValueError(f"unknown draw policy {policy!r}")
    if rng is None:
        raise ValueError("multinomial sampling needs a random generator")
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), probs.size - 1))

