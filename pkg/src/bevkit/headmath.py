"""Closed-form head and loss math with analytic gradients.

Covers domain-adaptive layer normalization (a confidence-weighted mixture
of per-domain affine parameters applied after plain layer norm), the
label-space-aware classification loss scaling, the paired masked-L1
guidance losses between point and image BEV features, and CenterNet-style
proposal decoding from (heatmap, offset, depth) maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Tuple

import numpy as np

from .geom import CameraIntrinsics, unproject_pixel

_STABILIZER = 1e-12
_CONF_TOL = 1e-9


def layer_norm(x: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Normalize a C-vector to zero mean, unit population std.

    Returns (normalized, mean, std).  The std uses the biased 1/C
    variance; for (near-)constant inputs a 1e-12 stabilizer is added
    inside the root so the output degrades to the zero vector instead of
    dividing by zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("layer_norm expects a vector of length >= 2")
    mu = float(x.mean())
    var = float(np.mean((x - mu) ** 2))
    sigma = np.sqrt(var)
    if sigma < _STABILIZER:
        sigma = np.sqrt(var + _STABILIZER)
    return (x - mu) / sigma, mu, float(sigma)


@dataclass(frozen=True)
class DalnParams:
    """Per-domain affine parameters; identity at initialization."""

    alphas: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        b = np.asarray(self.betas, dtype=np.float64)
        if a.ndim != 1 or a.shape != b.shape or a.size < 1:
            raise ValueError("alphas and betas must be equal-length vectors, D >= 1")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "betas", b)

    @classmethod
    def init(cls, n_domains: int) -> "DalnParams":
        return cls(np.ones(n_domains), np.zeros(n_domains))

    @property
    def n_domains(self) -> int:
        return self.alphas.size


@dataclass(frozen=True)
class DomainConfidence:
    """Softmax output of the domain head: non-negative, sums to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("confidence must be a non-empty vector")
        if np.any(w < 0):
            raise ValueError("confidence entries must be non-negative")
        if abs(w.sum() - 1.0) > _CONF_TOL:
            raise ValueError("confidence must sum to 1")
        object.__setattr__(self, "weights", w)


def daln(x: np.ndarray, params: DalnParams, confidence) -> np.ndarray:
    """Layer norm followed by the confidence-mixed affine map.

    alpha and beta are the confidence-weighted sums of the per-domain
    parameters, so at initialization (all alphas 1, betas 0) the result
    equals plain layer_norm for every confidence on the simplex.
    """
    conf = confidence if isinstance(confidence, DomainConfidence) else DomainConfidence(confidence)
    if conf.weights.size != params.n_domains:
        raise ValueError(
            f"confidence has {conf.weights.size} entries for {params.n_domains} domains"
        )
    alpha = float(conf.weights @ params.alphas)
    beta = float(conf.weights @ params.betas)
    normalized, _, _ = layer_norm(x)
    return alpha * normalized + beta


@dataclass(frozen=True)
class LabelSpace:
    """Category sets of each sub-dataset plus the shared background id."""

    spaces: Dict[int, FrozenSet[int]]
    background: int
    gamma: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        spaces = {int(k): frozenset(int(c) for c in v) for k, v in self.spaces.items()}
        for ds, cats in spaces.items():
            if self.background in cats:
                raise ValueError(f"background id {self.background} appears in dataset {ds}")
        object.__setattr__(self, "spaces", spaces)


def class_alignment_loss(losses, predicted, labels, space: LabelSpace, dataset: int):
    """Down-weight losses of out-of-space predictions matched to background.

    An element is scaled by gamma exactly when its matched label is the
    background AND its predicted class is absent from the dataset's label
    space; every other element passes through unchanged.  gamma = 1 is
    the identity.
    """
    if dataset not in space.spaces:
        raise ValueError(f"unknown dataset id {dataset}")
    omega = np.array(sorted(space.spaces[dataset]), dtype=np.int64)
    losses = np.asarray(losses, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if not (losses.shape == predicted.shape == labels.shape):
        raise ValueError("losses, predicted and labels must share a shape")
    scale_down = (labels == space.background) & ~np.isin(predicted, omega)
    return losses * np.where(scale_down, space.gamma, 1.0)


def _as_bev(arr) -> np.ndarray:
    """Accept FeatureMap instances or plain array_likes."""
    data = arr.data if hasattr(arr, "data") and not isinstance(arr, np.ndarray) else arr
    return np.asarray(data, dtype=np.float64)


def _masked_l1(target: np.ndarray, pred: np.ndarray, mask: np.ndarray):
    """Mean |target - pred| over masked elements and its grad wrt pred.

    The mask broadcasts across leading channel axes; the mean divides by
    the number of masked elements (mask cells x channels).  An empty mask
    yields loss 0 with an all-zero gradient.  sign(0) = 0 pins the L1
    subgradient at zero.
    """
    if target.shape != pred.shape:
        raise ValueError(f"feature shapes differ: {target.shape} vs {pred.shape}")
    if mask.shape != target.shape[-mask.ndim:]:
        raise ValueError(f"mask shape {mask.shape} does not match features {target.shape}")
    mask = mask.astype(bool)
    n_lead = int(np.prod(target.shape[:-mask.ndim], dtype=np.int64)) if target.ndim > mask.ndim else 1
    count = int(mask.sum()) * n_lead
    if count == 0:
        return 0.0, np.zeros_like(pred)
    diff = (pred - target) * mask
    loss = float(np.sum(np.abs(diff)) / count)
    grad = np.sign(diff) / count
    return loss, grad


def mic_p2i_loss(b_p, b_i_hat, m_p, with_stopped_grad: bool = False):
    """Point-to-image guidance: masked L1 pulling image BEV features toward
    the (gradient-stopped) point features on point-occupied cells.

    Returns (loss, gradient wrt the image features); the gradient is zero
    off-mask.  With ``with_stopped_grad`` the all-zero gradient into the
    stop-gradient (point) operand is returned as a third element, making
    the stop explicit for gradient checks.
    """
    target = _as_bev(b_p)
    loss, grad = _masked_l1(target, _as_bev(b_i_hat), np.asarray(m_p))
    if with_stopped_grad:
        return loss, grad, np.zeros_like(target)
    return loss, grad


def mic_i2p_loss(b_i, b_p_hat, m_i, m_p, with_stopped_grad: bool = False):
    """Image-to-point guidance on cells where the image is confident but
    no depth point landed: effective mask = m_i AND NOT m_p.

    Returns (loss, gradient wrt the point features); see mic_p2i_loss for
    ``with_stopped_grad`` (here the image operand is the stopped one).
    """
    m_i = np.asarray(m_i).astype(bool)
    m_p = np.asarray(m_p).astype(bool)
    if m_i.shape != m_p.shape:
        raise ValueError("mask shapes differ")
    target = _as_bev(b_i)
    loss, grad = _masked_l1(target, _as_bev(b_p_hat), m_i & ~m_p)
    if with_stopped_grad:
        return loss, grad, np.zeros_like(target)
    return loss, grad


def finite_difference_grad(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros(x.size)
    flat = x.ravel()
    for i in range(x.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        hi = fn(bumped.reshape(x.shape))
        bumped[i] = flat[i] - step
        lo = fn(bumped.reshape(x.shape))
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(x.shape)


@dataclass(frozen=True)
class ProposalAttributes:
    """First-stage head outputs: heatmap (H, W) in [0, 1], pixel offsets
    (H, W, 2) ordered (du, dv), and per-pixel depth (H, W) in meters."""

    heatmap: np.ndarray
    offset: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        hm = np.asarray(self.heatmap, dtype=np.float64)
        off = np.asarray(self.offset, dtype=np.float64)
        dep = np.asarray(self.depth, dtype=np.float64)
        if hm.ndim != 2:
            raise ValueError("heatmap must be 2-D")
        if off.shape != hm.shape + (2,) or dep.shape != hm.shape:
            raise ValueError("offset/depth shapes must match the heatmap")
        if not np.all(np.isfinite(hm)) or np.any(hm < 0) or np.any(hm > 1):
            raise ValueError("heatmap values must be finite and in [0, 1]")
        object.__setattr__(self, "heatmap", hm)
        object.__setattr__(self, "offset", off)
        object.__setattr__(self, "depth", dep)


@dataclass(frozen=True)
class Proposal:
    center: np.ndarray
    confidence: float


def heatmap_peaks(heatmap: np.ndarray) -> np.ndarray:
    """Linear indices of 3x3 local maxima, plateau ties going to the
    lowest linear index; returned in ascending linear order."""
    hm = np.asarray(heatmap, dtype=np.float64)
    h, w = hm.shape
    lin = np.arange(h * w, dtype=np.int64).reshape(h, w)
    padded = np.pad(hm, 1, constant_values=-np.inf)
    padded_lin = np.pad(lin, 1, constant_values=np.int64(h * w))
    beaten = np.zeros((h, w), dtype=bool)
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            if dv == 0 and du == 0:
                continue
            nbr = padded[1 + dv:1 + dv + h, 1 + du:1 + du + w]
            nbr_lin = padded_lin[1 + dv:1 + dv + h, 1 + du:1 + du + w]
            beaten |= (nbr > hm) | ((nbr == hm) & (nbr_lin < lin))
    return lin[~beaten]


def decode_proposals(attrs: ProposalAttributes, K: CameraIntrinsics,
                     m: int = 100) -> List[Proposal]:
    """Decode the top-m heatmap peaks into 3D center proposals.

    Each peak's 2D center is the peak pixel plus its offset; the 3D
    center is that pixel unprojected at the peak's depth.  Output is
    sorted by confidence descending, ties by lowest linear index; peaks
    with non-positive depth cannot be unprojected and are skipped.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    h, w = attrs.heatmap.shape
    peaks = heatmap_peaks(attrs.heatmap)
    conf = attrs.heatmap.ravel()[peaks]
    order = np.lexsort((peaks, -conf))[:m]
    out: List[Proposal] = []
    for idx in order:
        p = peaks[idx]
        v, u = divmod(int(p), w)
        depth = float(attrs.depth[v, u])
        if depth <= 0:
            continue
        du, dv = attrs.offset[v, u]
        center = unproject_pixel(u + du, v + dv, depth, K)
        out.append(Proposal(center, float(conf[idx])))
    return out


def gaussian_heatmap_target(centers, sigmas, height: int, width: int) -> np.ndarray:
    """Max-combined Gaussian bumps, value exactly 1 at each integral center.

    ``centers`` is a sequence of (u, v) pixel coordinates; ``sigmas`` is a
    scalar or one value per center.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=np.float64), (centers.shape[0],))
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be positive")
    uu, vv = np.meshgrid(np.arange(width), np.arange(height))
    out = np.zeros((height, width))
    for (cu, cv), sigma in zip(centers, sigmas):
        d2 = (uu - cu) ** 2 + (vv - cv) ** 2
        np.maximum(out, np.exp(-d2 / (2.0 * sigma**2)), out=out)
    return out
