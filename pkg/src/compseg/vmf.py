"""von Mises-Fisher components, dictionaries, and spherical k-means fitting.

Directions live on the unit sphere in R^D. A dictionary is a bank of K
components sharing one feature dimensionality; all likelihood math runs in
float64 and is pure, so a fitted dictionary can be shared across threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ValidationError

# Below this concentration the normaliser is evaluated analytically as the
# sphere surface area; the Bessel expression is continuous through the
# switch but its sigma^(1-D/2) factor is numerically indeterminate at 0.
_SIGMA_ANALYTIC_LIMIT = 1e-8

_UNIT_TOL = 1e-5


def log_sphere_area(dim: int) -> float:
    """log of the surface area of the unit sphere S^(dim-1) in R^dim."""
    return float(np.log(2.0) + (dim / 2.0) * np.log(np.pi) - special.gammaln(dim / 2.0))


def log_normalizer(sigma: float, dim: int) -> float:
    """log of the vMF normalising constant Z(sigma) on S^(dim-1).

    Z(sigma) = (2 pi)^(d/2) * I_{d/2-1}(sigma) / sigma^(d/2-1), with the
    sigma -> 0 limit equal to the sphere surface area.

    >>> round(log_normalizer(0.0, 3), 6)  # log(4 pi)
    2.531024
    """
    if dim < 2 or int(dim) != dim:
        raise ValidationError(f"dimension must be an integer >= 2, got {dim}")
    if not np.isfinite(sigma) or sigma < 0:
        raise ValidationError(f"concentration must be finite and >= 0, got {sigma}")
    if sigma < _SIGMA_ANALYTIC_LIMIT:
        return log_sphere_area(int(dim))
    order = dim / 2.0 - 1.0
    # ive is the exponentially scaled Bessel: ive(v, x) = iv(v, x) * exp(-x),
    # which keeps the expression finite for large sigma.
    scaled = special.ive(order, sigma)
    if scaled <= 0 or not np.isfinite(scaled):
        raise ValidationError(f"normalizer underflow at sigma={sigma}, dim={dim}")
    return float(
        (dim / 2.0) * np.log(2.0 * np.pi)
        + np.log(scaled)
        + sigma
        - order * np.log(sigma)
    )


def _check_unit(vec: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1:
        raise ValidationError(f"{what} must be 1-d, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > _UNIT_TOL:
        raise ValidationError(f"{what} must be unit-norm, got norm {norm}")
    return v


@dataclass(frozen=True)
class VmfComponent:
    """One vMF component: a unit mean direction and a concentration."""

    mean: np.ndarray
    concentration: float

    def __post_init__(self):
        mean = _check_unit(self.mean, "component mean")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        if not np.isfinite(self.concentration) or self.concentration < 0:
            raise ValidationError(
                f"concentration must be finite and >= 0, got {self.concentration}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def log_z(self) -> float:
        return log_normalizer(self.concentration, self.dim)


@dataclass(frozen=True)
class VmfDictionary:
    """Bank of K vMF components over a shared feature dimension."""

    means: np.ndarray            # (K, D) unit rows, float64
    concentrations: np.ndarray   # (K,) float64

    def __post_init__(self):
        means = np.ascontiguousarray(self.means, dtype=np.float64)
        conc = np.ascontiguousarray(self.concentrations, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 1:
            raise ValidationError(f"means must be (K, D) with K >= 1, got {means.shape}")
        if conc.shape != (means.shape[0],):
            raise ValidationError(
                f"concentrations shape {conc.shape} does not match K={means.shape[0]}"
            )
        norms = np.linalg.norm(means, axis=1)
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            raise ValidationError("dictionary means must be unit-norm")
        if np.any(~np.isfinite(conc)) or np.any(conc < 0):
            raise ValidationError("concentrations must be finite and >= 0")
        log_z = np.array([log_normalizer(s, means.shape[1]) for s in conc])
        means.setflags(write=False)
        conc.setflags(write=False)
        log_z.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "concentrations", conc)
        object.__setattr__(self, "_log_z", log_z)

    @property
    def size(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def log_normalizers(self) -> np.ndarray:
        return self._log_z

    @property
    def components(self) -> list[VmfComponent]:
        return [
            VmfComponent(self.means[k].copy(), float(self.concentrations[k]))
            for k in range(self.size)
        ]


def log_pdf(f: np.ndarray, component: VmfComponent) -> float:
    """log vMF density of a unit vector under one component."""
    v = _check_unit(f, "feature vector")
    if v.shape[0] != component.dim:
        raise ValidationError(
            f"feature dim {v.shape[0]} does not match component dim {component.dim}"
        )
    return float(component.concentration * (v @ component.mean) - component.log_z)


def component_logliks(features: np.ndarray, dictionary: VmfDictionary) -> np.ndarray:
    """(P, K) table of per-component log densities for a batch of unit rows."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[None, :]
    if feats.shape[1] != dictionary.dim:
        raise ValidationError(
            f"feature dim {feats.shape[1]} does not match dictionary dim {dictionary.dim}"
        )
    cosines = feats @ dictionary.means.T
    return cosines * dictionary.concentrations[None, :] - dictionary.log_normalizers[None, :]


def responsibilities(f: np.ndarray, dictionary: VmfDictionary) -> np.ndarray:
    """Posterior over dictionary components for one vector or a (P, D) batch.

    Uniform component prior; rows sum to 1.
    """
    arr = np.asarray(f, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        _check_unit(arr, "feature vector")
    table = component_logliks(arr, dictionary)
    table -= table.max(axis=1, keepdims=True)
    np.exp(table, out=table)
    table /= table.sum(axis=1, keepdims=True)
    return table[0] if single else table


def estimate_concentration(resultant_length: float, dim: int) -> float:
    """Concentration from the mean resultant length (standard approximation).

    kappa ~= rbar * (dim - rbar^2) / (1 - rbar^2), clipped to a large finite
    value as rbar -> 1.
    """
    r = float(resultant_length)
    if not 0.0 <= r <= 1.0:
        raise ValidationError(f"resultant length must lie in [0, 1], got {r}")
    if r >= 1.0 - 1e-12:
        return 1e6
    return max(r * (dim - r * r) / (1.0 - r * r), 0.0)


def _kmeanspp_init(feats: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = feats.shape[0]
    centers = np.empty((k, feats.shape[1]))
    first = int(rng.integers(n))
    centers[0] = feats[first]
    # squared cosine distance to the nearest chosen center
    dist = (1.0 - feats @ centers[0]) ** 2
    for j in range(1, k):
        total = float(dist.sum())
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=dist / total))
        centers[j] = feats[idx]
        cand = (1.0 - feats @ centers[j]) ** 2
        np.minimum(dist, cand, out=dist)
    return centers


def fit_dictionary_traced(
    features: np.ndarray,
    k: int,
    seed: int,
    shared_concentration: float | None = 30.0,
    max_iter: int = 100,
) -> tuple[VmfDictionary, dict]:
    """Spherical k-means with hard assignments; returns (dictionary, trace).

    The trace records the mean-cosine objective after every iteration (it is
    non-decreasing), the iteration count, final assignments, and the raw
    per-cluster concentration estimates before the shared override.
    """
    feats = np.ascontiguousarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValidationError(f"features must be (N, D), got {feats.shape}")
    n, dim = feats.shape
    if k < 1:
        raise ValidationError(f"component count must be >= 1, got {k}")
    if n < k:
        raise ValidationError(f"need at least k={k} feature vectors, got {n}")
    norms = np.linalg.norm(feats, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ValidationError("features must be unit-norm")

    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(feats, k, rng)
    assign = np.full(n, -1, dtype=np.int64)
    objective: list[float] = []
    n_iter = 0

    for n_iter in range(1, max_iter + 1):
        cosines = feats @ centers.T
        new_assign = np.argmax(cosines, axis=1)
        own = cosines[np.arange(n), new_assign]

        # Reseed empty clusters from the point currently farthest from its
        # center; each repair claims a distinct point.
        counts = np.bincount(new_assign, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            far = int(np.argmin(own))
            new_assign[far] = empty
            centers[empty] = feats[far]
            own[far] = 1.0
        converged = bool(np.array_equal(new_assign, assign))
        assign = new_assign

        for j in range(k):
            members = feats[assign == j]
            resultant = members.sum(axis=0)
            length = float(np.linalg.norm(resultant))
            if length < 1e-12:
                far = int(np.argmin(feats @ centers[j]))
                centers[j] = feats[far]
            else:
                centers[j] = resultant / length

        # Objective against the updated centers: non-decreasing by the usual
        # two-step argument (argmax assignment, then mean-direction update).
        objective.append(float(np.mean(np.einsum("nd,nd->n", feats, centers[assign]))))
        if converged:
            break

    # Final assignment against the final centers for the statistics below.
    cosines = feats @ centers.T
    assign = np.argmax(cosines, axis=1)
    objective.append(float(np.mean(cosines[np.arange(n), assign])))

    raw_conc = np.empty(k)
    for j in range(k):
        members = feats[assign == j]
        if members.shape[0] == 0:
            raw_conc[j] = 0.0
            continue
        rbar = min(float(np.linalg.norm(members.mean(axis=0))), 1.0)
        raw_conc[j] = estimate_concentration(rbar, dim)

    conc = raw_conc if shared_concentration is None else np.full(k, float(shared_concentration))
    dictionary = VmfDictionary(centers, conc)
    trace = {
        "objective": objective,
        "iterations": n_iter,
        "assignments": assign,
        "raw_concentrations": raw_conc,
    }
    return dictionary, trace


def fit_dictionary(
    features: np.ndarray,
    k: int,
    seed: int,
    shared_concentration: float | None = 30.0,
    max_iter: int = 100,
) -> VmfDictionary:
    """Fit a K-component dictionary by spherical k-means (seed-deterministic)."""
    dictionary, _ = fit_dictionary_traced(
        features, k, seed, shared_concentration=shared_concentration, max_iter=max_iter
    )
    return dictionary


def sample_uniform_sphere(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """n points drawn uniformly on S^(dim-1)."""
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sample_vmf(
    rng: np.random.Generator, mean: np.ndarray, concentration: float, n: int
) -> np.ndarray:
    """Draw n samples from vMF(mean, concentration) by Wood's rejection method."""
    mu = _check_unit(mean, "vMF mean")
    dim = mu.shape[0]
    if concentration < 0 or not np.isfinite(concentration):
        raise ValidationError(f"concentration must be finite and >= 0, got {concentration}")
    if concentration < _SIGMA_ANALYTIC_LIMIT:
        return sample_uniform_sphere(rng, n, dim)

    kappa = float(concentration)
    b = (-2.0 * kappa + np.sqrt(4.0 * kappa**2 + (dim - 1.0) ** 2)) / (dim - 1.0)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (dim - 1.0) * np.log(1.0 - x0 * x0)

    w = np.empty(n)
    need = np.arange(n)
    while need.size:
        z = rng.beta((dim - 1.0) / 2.0, (dim - 1.0) / 2.0, size=need.size)
        cand = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=need.size)
        ok = kappa * cand + (dim - 1.0) * np.log(1.0 - x0 * cand) - c >= np.log(u)
        w[need[ok]] = cand[ok]
        need = need[~ok]

    # Tangent directions orthogonal to the mean.
    tang = rng.standard_normal((n, dim))
    tang -= np.outer(tang @ mu, mu)
    tnorm = np.linalg.norm(tang, axis=1, keepdims=True)
    tnorm[tnorm < 1e-12] = 1.0
    tang /= tnorm
    out = w[:, None] * mu[None, :] + np.sqrt(np.maximum(1.0 - w * w, 0.0))[:, None] * tang
    return out / np.linalg.norm(out, axis=1, keepdims=True)
