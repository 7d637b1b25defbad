"""Sparse NMF stain decomposition and the alkaline-phosphatase mask.

The optical-density image is factored as V ~ W H with W a 3x3 stain
color basis (columns: hematoxylin, alkaline-phosphatase, DAB) and H the
per-pixel concentration maps, minimizing

    0.5 * ||V - W H||_F^2 + lambda * sum(H)   s.t.  W, H >= 0

with unit-norm basis columns. The solver alternates a coordinate-descent
sparse-coding step for H with a projected-gradient dictionary step for W
(columns kept inside the unit ball, then renormalized with a
compensating rescale of H), so the objective never increases.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientTissue, ShapeError
from .imaging import BinaryMask, OdImage, ProbabilityMap

STAIN_ROLES = ("hematoxylin", "alkaline", "dab")


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)

# OD-space reference directions used to initialize the basis and to map
# recovered columns onto stain roles. Hematoxylin and DAB follow the
# standard color-deconvolution vectors; the alkaline-phosphatase magenta
# chromogen absorbs mostly green.
HEMATOXYLIN_REF = _unit([0.65, 0.70, 0.29])
ALKALINE_REF = _unit([0.30, 0.85, 0.30])
DAB_REF = _unit([0.27, 0.57, 0.78])

REFERENCE_BASIS = np.stack([HEMATOXYLIN_REF, ALKALINE_REF, DAB_REF], axis=1)

DEFAULT_LAMBDA = 0.1
DEFAULT_BETA = 0.15  # foreground threshold on the OD L1 norm
MIN_FOREGROUND = 100
FIT_PIXEL_CAP = 30_000  # basis fit subsamples beyond this many foreground pixels


@dataclass
class StainBasis:
    """3x3 stain color basis; column k is the unit OD vector of role k."""

    w: np.ndarray
    roles: tuple[str, ...] = STAIN_ROLES

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.shape != (3, 3):
            raise ShapeError(f"stain basis must be 3x3, got {self.w.shape}")

    def column(self, role: str) -> np.ndarray:
        return self.w[:, self.roles.index(role)]

    def to_json(self) -> str:
        return json.dumps({"roles": list(self.roles), "w": self.w.tolist()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StainBasis":
        data = json.loads(text)
        return cls(w=np.asarray(data["w"]), roles=tuple(data["roles"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "StainBasis":
        return cls.from_json(Path(path).read_text())


@dataclass
class ConcentrationMaps:
    """Per-stain concentration maps (3 x H x W) plus the foreground mask."""

    h: np.ndarray
    foreground: np.ndarray
    info: dict = field(default_factory=dict)

    def channel(self, role: str) -> np.ndarray:
        return self.h[STAIN_ROLES.index(role)]


def _sparse_code(
    w: np.ndarray,
    v: np.ndarray,
    lam: float,
    h0: np.ndarray | None = None,
    max_sweeps: int = 200,
    tol: float = 1e-10,
) -> np.ndarray:
    """Coordinate descent for min_h 0.5||v - W h||^2 + lam*sum(h), h >= 0.

    Vectorized over pixels (v is 3 x P). Warm-startable; each full sweep
    is non-increasing in the objective. Cold starts screen pixels first:
    where max(W^T v) <= lam the KKT conditions hold at h = 0 exactly, so
    only the remaining (stained) pixels iterate.
    """
    gram = w.T @ w
    b = w.T @ v
    k = w.shape[1]
    diag = np.maximum(np.diag(gram), 1e-12)

    active = None
    if h0 is None:
        active = b.max(axis=0) > lam
        if not active.any():
            return np.zeros_like(b)
        h = np.zeros_like(b[:, active])
        b = b[:, active]
    else:
        h = h0.copy()

    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(k):
            resid = b[j] - gram[j] @ h + diag[j] * h[j]
            new = np.maximum(0.0, (resid - lam) / diag[j])
            delta = max(delta, float(np.max(np.abs(new - h[j]), initial=0.0)))
            h[j] = new
        if delta < tol:
            break

    if active is None:
        return h
    full = np.zeros((k, v.shape[1]), dtype=h.dtype)
    full[:, active] = h
    return full


def _dictionary_step(
    w: np.ndarray, h: np.ndarray, v: np.ndarray, n_steps: int = 12
) -> np.ndarray:
    """Projected gradient on W over {W >= 0, ||col|| <= 1}, H fixed."""
    hht = h @ h.T
    vht = v @ h.T
    lip = float(np.linalg.eigvalsh(hht).max())
    if lip <= 0:
        return w.copy()
    step = 1.0 / lip
    w = w.copy()
    for _ in range(n_steps):
        grad = w @ hht - vht
        w -= step * grad
        np.clip(w, 0.0, None, out=w)
        norms = np.linalg.norm(w, axis=0)
        over = norms > 1.0
        if over.any():
            w[:, over] /= norms[over]
    return w


def _objective(v: np.ndarray, w: np.ndarray, h: np.ndarray, lam: float) -> float:
    resid = v - w @ h
    return 0.5 * float(np.sum(resid * resid)) + lam * float(np.sum(h))


def _assign_roles(w: np.ndarray) -> np.ndarray:
    """Permutation p with column p[r] best matching reference role r.

    Maximizes total cosine similarity over all 3! assignments, so the
    result is invariant to the arbitrary column order of the factorization
    and to any positive rescaling of the input image.
    """
    sims = np.zeros((3, 3))
    for k in range(3):
        col = w[:, k]
        norm = np.linalg.norm(col)
        unit = col / norm if norm > 0 else col
        sims[k] = unit @ REFERENCE_BASIS
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(3)):
        score = sum(sims[perm[r], r] for r in range(3))
        if score > best_score:
            best, best_score = perm, score
    return np.asarray(best)


def snmf_decompose(
    od: OdImage,
    lam: float = DEFAULT_LAMBDA,
    max_iters: int = 200,
    tol: float = 1e-6,
    seed: int = 42,
    beta: float = DEFAULT_BETA,
    min_foreground: int = MIN_FOREGROUND,
    basis: StainBasis | None = None,
) -> tuple[StainBasis, ConcentrationMaps]:
    """Factor an OD image into a stain basis and concentration maps.

    The basis is fit on foreground pixels (OD L1 norm > beta); the full
    concentration maps are then solved once over every pixel. Passing a
    fixed *basis* skips the fit and only runs the coding step, which lets
    one basis be reused across all tiles of a WSI.

    Raises InsufficientTissue when fewer than *min_foreground* pixels are
    foreground. Non-convergence is not an error: the best iterate is
    returned with ``info["converged"] = False``.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    values = np.asarray(od.values, dtype=np.float64)
    if values.ndim != 3 or values.shape[2] != 3:
        raise ShapeError(f"OD image must be HxWx3, got {values.shape}")
    height, width = values.shape[:2]
    flat = values.reshape(-1, 3).T  # 3 x P
    foreground = flat.sum(axis=0) > beta
    fg_count = int(foreground.sum())

    info: dict = {"foreground_pixels": fg_count, "lambda": lam, "seed": seed}

    if basis is not None:
        w = basis.w.copy()
        info.update({"iterations": 0, "converged": True, "objective": []})
    else:
        if fg_count < min_foreground:
            raise InsufficientTissue(
                f"{fg_count} foreground pixels (< {min_foreground}); "
                "tile looks like blank background"
            )
        v_fg = flat[:, foreground]
        rng = np.random.default_rng(seed)
        w = REFERENCE_BASIS + rng.uniform(0.0, 0.05, size=(3, 3))
        np.clip(w, 0.0, None, out=w)
        w /= np.linalg.norm(w, axis=0)
        if fg_count > FIT_PIXEL_CAP:
            pick = np.sort(rng.choice(fg_count, size=FIT_PIXEL_CAP, replace=False))
            v_fg = v_fg[:, pick]

        h_fg = None
        objective: list[float] = []
        converged = False
        for _ in range(max_iters):
            h_fg = _sparse_code(w, v_fg, lam, h0=h_fg, max_sweeps=50, tol=1e-8)
            w = _dictionary_step(w, h_fg, v_fg)
            # Renormalize columns to unit length. Norms are <= 1 after the
            # ball-constrained step, so the compensating rescale of H only
            # shrinks the L1 term and monotonicity is preserved.
            norms = np.linalg.norm(w, axis=0)
            for k in range(3):
                if norms[k] < 1e-8:
                    w[:, k] = REFERENCE_BASIS[:, k]
                    h_fg[k] = 0.0
                else:
                    w[:, k] /= norms[k]
                    h_fg[k] *= norms[k]
            obj = _objective(v_fg, w, h_fg, lam)
            if objective:
                assert obj <= objective[-1] + 1e-9 * max(1.0, objective[-1]), (
                    "SNMF objective increased"
                )
                if objective[-1] - obj < tol * max(objective[-1], 1e-12):
                    objective.append(obj)
                    converged = True
                    break
            objective.append(obj)
        info.update(
            {"iterations": len(objective), "converged": converged,
             "objective": objective}
        )
        order = _assign_roles(w)
        w = w[:, order]

    h_full = _sparse_code(w, flat, lam, max_sweeps=200, tol=1e-7)
    maps = ConcentrationMaps(
        h=h_full.reshape(3, height, width),
        foreground=foreground.reshape(height, width),
        info=info,
    )
    return StainBasis(w=w), maps


def alkaline_probability(
    maps: ConcentrationMaps,
    percentile: float = 99.0,
    conc_floor: float = 0.05,
) -> ProbabilityMap:
    """Normalize the alkaline-phosphatase channel to a [0, 1] map.

    The normalizer is the *percentile*-th foreground concentration; tiles
    whose percentile falls below *conc_floor* carry no real signal and map
    to all zeros rather than amplifying noise.
    """
    if not (50.0 < percentile <= 100.0):
        raise ValueError("percentile must lie in (50, 100]")
    if conc_floor <= 0:
        raise ValueError("conc_floor must be positive")
    alk = maps.channel("alkaline")
    fg = maps.foreground
    if not fg.any():
        return ProbabilityMap(np.zeros_like(alk), provenance="alkaline")
    norm = float(np.percentile(alk[fg], percentile))
    if norm < conc_floor:
        return ProbabilityMap(np.zeros_like(alk), provenance="alkaline")
    return ProbabilityMap(np.clip(alk / norm, 0.0, 1.0), provenance="alkaline")


def threshold_alkaline(p: ProbabilityMap) -> BinaryMask:
    """Binarize at 0.5, strictly: a pixel exactly at 0.5 stays background."""
    return BinaryMask(bits=p.values > 0.5, provenance="alkaline")
