"""Diffusion-side contracts: camera/text guidance, clip-extension layout, masked loss.

Noise predictions are opaque float vectors here; no denoiser is ever run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SPLITTER = 134217729.0  # 2**27 + 1, Veltkamp split for float64


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceWeights:
    w_text: float = 7.5
    w_cam: float = 8.0

    def __post_init__(self):
        for name in ("w_text", "w_cam"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _scaled_diff(w: float, x: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    """Float terms whose exact sum is ``w * (x - y)``."""
    dh, dl = _two_sum(x, -y)
    w = np.full_like(dh, w)
    return [*_two_prod(w, dh), *_two_prod(w, dl)]


def _round_sum(terms: list[np.ndarray]) -> np.ndarray:
    cols = np.stack([np.ravel(x) for x in terms]).T.tolist()
    return np.array([math.fsum(c) for c in cols], dtype=float).reshape(terms[0].shape)


def _as_vectors(*arrays):
    out = [np.asarray(a, dtype=float) for a in arrays]
    shape = out[0].shape
    for a in out[1:]:
        if a.shape != shape:
            raise LayoutError(f"prediction shapes differ: {shape} vs {a.shape}")
    for a in out:
        if not np.all(np.isfinite(a)):
            raise LayoutError("predictions must be finite")
    return out


def text_guidance(eps_uncond, eps_text, w_text: float) -> np.ndarray:
    """Standard classifier-free guidance ``eps_uncond + w * (eps_text - eps_uncond)``."""
    u, t = _as_vectors(eps_uncond, eps_text)
    return _round_sum([u, *_scaled_diff(w_text, t, u)])


def combine_guidance(eps_uncond, eps_text, eps_full, w: GuidanceWeights = GuidanceWeights()
                     ) -> np.ndarray:
    """Text-then-camera guided noise prediction.

    ``eps_uncond`` has neither condition, ``eps_text`` the text only and
    ``eps_full`` text and camera. Each output entry is the correctly rounded
    value of ``u + w_text (t - u) + w_cam (f - t)``, so identities such as
    ``w = (1, 1) -> eps_full`` hold bit-exactly.
    """
    u, t, f = _as_vectors(eps_uncond, eps_text, eps_full)
    return _round_sum([u, *_scaled_diff(w.w_text, t, u), *_scaled_diff(w.w_cam, f, t)])


@dataclass(frozen=True)
class ClipLayout:
    q_prev: int
    q_cur: int
    c: int

    def __post_init__(self):
        if self.q_prev < 0 or self.q_cur < 1 or self.c < 1:
            raise LayoutError(f"invalid layout {self}")

    @property
    def q(self) -> int:
        return self.q_prev + self.q_cur


@dataclass(frozen=True, eq=False)
class ExtensionInput:
    tokens: np.ndarray
    loss_mask: np.ndarray
    layout: ClipLayout

    @property
    def mask_channel(self) -> np.ndarray:
        return self.tokens[:, -1]

    @property
    def features(self) -> np.ndarray:
        return self.tokens[:, :-1]

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        """Recover (condition tokens, current tokens) without the mask channel."""
        q = self.layout.q_prev
        return self.features[:q], self.features[q:]


def build_extension_input(prev_tokens, cur_noised_tokens) -> ExtensionInput:
    """Stack clean condition tokens above noised tokens and append a mask channel.

    The mask channel is 1 on condition rows and 0 on generated rows; the loss
    mask is its complement.
    """
    cur = np.asarray(cur_noised_tokens, dtype=float)
    if cur.ndim != 2 or cur.shape[0] == 0:
        raise LayoutError("current clip must have at least one token")
    prev = np.asarray(prev_tokens, dtype=float)
    if prev.size == 0:
        prev = prev.reshape(0, cur.shape[1])
    if prev.ndim != 2 or prev.shape[1] != cur.shape[1]:
        raise LayoutError(f"channel mismatch: {prev.shape} vs {cur.shape}")
    layout = ClipLayout(prev.shape[0], cur.shape[0], cur.shape[1])
    mask = np.concatenate([np.ones(layout.q_prev), np.zeros(layout.q_cur)])
    tokens = np.concatenate([np.concatenate([prev, cur]), mask[:, None]], axis=1)
    return ExtensionInput(tokens, mask == 0, layout)


def condition_frame_bounds(total_frames: int, min_frames: int = 5, max_fraction: float = 0.5
                           ) -> tuple[int, int]:
    """Allowed range of condition frames taken from the previous clip."""
    hi = int(math.floor(max_fraction * total_frames))
    if hi < min_frames:
        raise LayoutError(f"{total_frames} frames cannot hold {min_frames} condition frames")
    return min_frames, hi


def validate_condition_frames(n_condition: int, total_frames: int) -> int:
    lo, hi = condition_frame_bounds(total_frames)
    if not lo <= n_condition <= hi:
        raise LayoutError(f"condition frames {n_condition} outside [{lo}, {hi}] for {total_frames} frames")
    return n_condition


def fuse_camera_features(visual, camera) -> np.ndarray:
    """Element-wise sum of visual and camera patch features (shapes must match)."""
    v = np.asarray(visual)
    c = np.asarray(camera)
    if v.shape != c.shape:
        raise LayoutError(f"camera features {c.shape} do not match visual features {v.shape}")
    return v + c


def masked_diffusion_loss(pred, target, loss_mask) -> float:
    """Mean squared error over entries of tokens with ``loss_mask`` set.

    ``pred`` and ``target`` are (q, c) arrays or flat length ``q * c`` vectors.
    """
    mask = np.asarray(loss_mask, dtype=bool).reshape(-1)
    p = np.asarray(pred, dtype=float)
    y = np.asarray(target, dtype=float)
    if p.shape != y.shape:
        raise LayoutError(f"prediction {p.shape} and target {y.shape} differ")
    q = mask.size
    if q == 0 or p.size % q:
        raise LayoutError(f"{p.size} entries cannot be split over {q} tokens")
    p = p.reshape(q, -1)
    y = y.reshape(q, -1)
    if not mask.any():
        raise LayoutError("loss mask selects no tokens")
    d = p[mask] - y[mask]
    return float(np.mean(d * d))
