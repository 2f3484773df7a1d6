"""Brute-force reference implementations for cross-checking inference.

Everything here is written for clarity over speed: explicit Python loops,
scalar math, no shared code with the production paths beyond basic
containers. Tests compare the fast implementations against these on small
planted problems where exhaustive enumeration is feasible.
"""
from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
from scipy import special

from .errors import ValidationError

_MAX_TABLE_PIXELS = 64
_MAX_JOINT_STATES = 2_000_000


def perpixel_owner_reference(logliks: Sequence[Sequence[float]]) -> list[int]:
    """Per-pixel MAP owner from a (P, N+1) table of log-likelihoods.

    Column n < N holds object n's foreground value at each pixel, the last
    column the outlier value. Preference order on ties: outlier first, then
    the lowest object id. Returns owner ids with N meaning the outlier.
    """
    table = [list(map(float, row)) for row in logliks]
    if not table:
        return []
    width = len(table[0])
    if width < 2 or any(len(row) != width for row in table):
        raise ValidationError("owner table must be rectangular with >= 2 columns")
    if len(table) > _MAX_TABLE_PIXELS:
        raise ValidationError(f"owner table limited to {_MAX_TABLE_PIXELS} pixels")
    n = width - 1
    owners = []
    for row in table:
        best_id = n
        best_val = row[n]
        for obj in range(n):
            if row[obj] > best_val:
                best_val = row[obj]
                best_id = obj
        owners.append(best_id)
    return owners


def joint_owner_reference(logliks: Sequence[Sequence[float]]) -> list[int]:
    """Exhaustive joint MAP over all owner assignments of the table.

    Candidate tuples are enumerated with each pixel's options ordered by the
    same preference as the per-pixel rule, and only strictly better totals
    replace the incumbent, so tie handling matches exactly.
    """
    table = [list(map(float, row)) for row in logliks]
    if not table:
        return []
    width = len(table[0])
    n = width - 1
    states = width ** len(table)
    if states > _MAX_JOINT_STATES:
        raise ValidationError(f"joint enumeration over {states} states refused")
    order = [n] + list(range(n))
    best = None
    best_total = -math.inf
    for assign in itertools.product(order, repeat=len(table)):
        total = math.fsum(table[i][assign[i]] for i in range(len(table)))
        if total > best_total:
            best_total = total
            best = assign
    return list(best)


def vote_reference(owners: Sequence[int], id_a: int, id_b: int) -> tuple[int, int, int]:
    """Count conflict pixels owned by each object and call the order.

    Returns (votes_a, votes_b, r) with r=+1 when a is in front, -1
    otherwise; equal counts fall to -1.
    """
    votes_a = sum(1 for o in owners if o == id_a)
    votes_b = sum(1 for o in owners if o == id_b)
    return votes_a, votes_b, (1 if votes_a > votes_b else -1)


def _log_normalizer_ref(sigma: float, dim: int) -> float:
    if sigma < 1e-8:
        return math.log(2.0) + (dim / 2.0) * math.log(math.pi) - special.gammaln(dim / 2.0)
    half = dim / 2.0
    return (
        half * math.log(2.0 * math.pi)
        + math.log(special.ive(half - 1.0, sigma))
        + sigma
        - (half - 1.0) * math.log(sigma)
    )


def perpixel_maps_reference(
    features: np.ndarray,
    fg_prior: np.ndarray,
    fg_coeffs: np.ndarray,
    ctx_coeffs: np.ndarray,
    occ_coeffs: np.ndarray,
    means: np.ndarray,
    concentrations: np.ndarray,
    prior_clamp: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scalar-loop recomputation of the three per-pixel log maps.

    features (H, W, D) unit rows, coefficients per position or shared for the
    occluder. Densities are accumulated in linear space with fsum, so this
    checks the shifted-logsumexp kernels against the direct definition.
    """
    h, w, d = features.shape
    k = means.shape[0]
    log_z = [_log_normalizer_ref(float(concentrations[j]), d) for j in range(k)]
    fg = np.zeros((h, w))
    ctx = np.zeros((h, w))
    occ = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            dens = []
            for j in range(k):
                cos = math.fsum(float(features[y, x, t]) * float(means[j, t]) for t in range(d))
                dens.append(math.exp(float(concentrations[j]) * cos - log_z[j]))
            p = min(max(float(fg_prior[y, x]), prior_clamp), 1.0 - prior_clamp)
            fg_mix = math.fsum(float(fg_coeffs[y, x, j]) * dens[j] for j in range(k))
            ctx_mix = math.fsum(float(ctx_coeffs[y, x, j]) * dens[j] for j in range(k))
            occ_mix = math.fsum(float(occ_coeffs[j]) * dens[j] for j in range(k))
            fg[y, x] = math.log(p) + math.log(fg_mix)
            ctx[y, x] = math.log(1.0 - p) + math.log(ctx_mix)
            occ[y, x] = math.log(p) + math.log(occ_mix)
    return fg, ctx, occ


def best_order_reference(obj_a, obj_b, conflict: np.ndarray, owners: np.ndarray, outlier_id: int) -> int:
    """Pick the pairwise order by total scene likelihood, not votes.

    Applies the all-or-nothing reassignment both ways, derives each object's
    visibility grid, and scores both objects' maps under their grids. Used
    only for report diagnostics comparing the vote rule against an
    exhaustive likelihood decision; ties fall to -1 like the vote rule.
    """
    from .models import image_loglik

    def total_for(front_first: bool) -> float:
        trial = owners.copy()
        take = conflict & (trial != outlier_id)
        trial[take] = 0 if front_first else 1
        score = 0.0
        for idx, obj in ((0, obj_a), (1, obj_b)):
            window = trial[obj.box.slices]
            lost = (window >= 0) & (window != idx)
            vis = (~lost).astype(np.int8)
            score += image_loglik(obj.maps, visibility=vis)
        return score

    return 1 if total_for(True) > total_for(False) else -1


# ---------------------------------------------------------------------------
# synthetic lattice harness and equivalence suites
#
# The suites below are shared by the `oracle-check` command and the
# acceptance tests: each builds random small problems, runs the production
# path, and counts exact disagreements with the references above.

_CTX_PIN = -1.0e9


def table_objects(logliks: np.ndarray, shape: tuple[int, int]):
    """Wrap a (P, N+1) log-likelihood table as full-lattice scene objects.

    Every object's box spans the whole lattice, context is pinned far below
    anything else, and all objects share the outlier column as their
    occluder map, so pixel competition sees exactly the table: an object
    labels a pixel foreground iff its column beats the outlier there.
    """
    from .fmap import BoundingBox
    from .models import LikelihoodMaps, segment_single
    from .orm import SceneObject

    arr = np.asarray(logliks, dtype=np.float64)
    h, w = shape
    n = arr.shape[1] - 1
    if arr.shape[0] != h * w:
        raise ValidationError(f"table has {arr.shape[0]} rows for a {h}x{w} lattice")
    box = BoundingBox(0, 0, w, h)
    ctx = np.full((h, w), _CTX_PIN)
    occ = arr[:, n].reshape(h, w)
    objects = []
    for k in range(n):
        maps = LikelihoodMaps(
            fg=arr[:, k].reshape(h, w).copy(), ctx=ctx.copy(), occ=occ.copy()
        )
        objects.append(
            SceneObject(
                oid=k, box=box, class_index=0, mixture_index=0, score=0.0,
                maps=maps, labels=segment_single(maps),
            )
        )
    return objects


def _random_table(rng: np.random.Generator, pixels: int, n: int) -> np.ndarray:
    table = rng.uniform(-8.0, 0.0, size=(pixels, n + 1))
    # exact ties exercise the preference order (outlier first, lowest id)
    for _ in range(int(rng.integers(0, 3))):
        row = int(rng.integers(pixels))
        src = int(rng.integers(n + 1))
        dst = int(rng.integers(n + 1))
        table[row, dst] = table[row, src]
    return table


def check_pixel_competition(rng: np.random.Generator, cases: int) -> tuple[int, int]:
    """Pipeline ownership before reassignment vs the per-pixel MAP rule.

    Returns (mismatching pixels, pixels compared).
    """
    from .orm import orm_pass

    mismatches = total = 0
    for _ in range(cases):
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        n = int(rng.integers(1, 5))
        table = _random_table(rng, h * w, n)
        objects = table_objects(table, (h, w))
        assignment, _ = orm_pass(objects, (h, w), no_order=True)
        got = assignment.owners.reshape(-1)
        want = np.asarray(perpixel_owner_reference(table))
        total += h * w
        mismatches += int(np.sum(got != want))
    return mismatches, total


def check_order_votes(rng: np.random.Generator, cases: int) -> tuple[int, int]:
    """recover_order vs the counting reference on random conflict owners."""
    from .orm import recover_order

    mismatches = 0
    for _ in range(cases):
        size = int(rng.integers(1, 65))
        n_ids = int(rng.integers(2, 6))
        owners = rng.integers(0, n_ids + 1, size=size)
        if rng.random() < 0.3:
            # force an exact tie to hit the fallthrough direction
            owners = np.concatenate([np.zeros(3, np.int64), np.ones(3, np.int64)])
        votes_a, votes_b, want = vote_reference(owners.tolist(), 0, 1)
        if recover_order(votes_a, votes_b) != want:
            mismatches += 1
    return mismatches, cases


def check_joint_factorization(rng: np.random.Generator, cases: int) -> tuple[int, int]:
    """Exhaustive joint MAP vs per-pixel MAP on 8-pixel two-object tables."""
    mismatches = 0
    for _ in range(cases):
        table = _random_table(rng, 8, 2)
        if joint_owner_reference(table) != perpixel_owner_reference(table):
            mismatches += 1
    return mismatches, cases


def closed_form_log_normalizer_3d(sigma: float) -> float:
    """For D=3 the normalizer collapses to 4*pi*sinh(sigma)/sigma."""
    if sigma <= 0.0:
        raise ValidationError("closed form needs sigma > 0")
    return (
        math.log(4.0 * math.pi)
        + sigma
        + math.log1p(-math.exp(-2.0 * sigma))
        - math.log(2.0 * sigma)
    )


def check_normalizer_closed_form(points: int = 200) -> tuple[int, int]:
    """Implemented log normalizer vs the D=3 closed form on a log grid."""
    from .vmf import log_normalizer

    sigmas = np.logspace(-6.0, math.log10(50.0), points)
    bad = 0
    for sigma in sigmas:
        got = log_normalizer(float(sigma), 3)
        want = closed_form_log_normalizer_3d(float(sigma))
        if abs(got - want) > 1e-9 * max(1.0, abs(want)):
            bad += 1
    return bad, points


def check_monte_carlo_mass(
    rng: np.random.Generator,
    dims: Sequence[int] = (3, 8, 16),
    samples: int = 100_000,
    tolerance: float = 0.02,
) -> tuple[int, int]:
    """Unit-mass check: sphere area times the mean density must be ~1."""
    from .vmf import log_normalizer, log_sphere_area, sample_uniform_sphere

    bad = 0
    for dim in dims:
        for sigma in (0.5, 2.0, 5.0):
            mean = np.zeros(dim)
            mean[0] = 1.0
            points = sample_uniform_sphere(rng, samples, dim)
            log_dens = sigma * (points @ mean) - log_normalizer(sigma, dim)
            mass = math.exp(log_sphere_area(dim)) * float(np.exp(log_dens).mean())
            if abs(mass - 1.0) > tolerance:
                bad += 1
    return bad, 3 * len(dims)


def check_likelihood_maps(rng: np.random.Generator, cases: int) -> tuple[int, int]:
    """Vectorized map kernels vs the scalar fsum recomputation."""
    from .fmap import FeatureMap
    from .models import LikelihoodMaps, MixtureModel, OccluderModel, likelihood_maps
    from .vmf import VmfDictionary, sample_uniform_sphere

    def simplex(shape) -> np.ndarray:
        raw = rng.uniform(0.1, 1.0, size=shape)
        return raw / raw.sum(axis=-1, keepdims=True)

    mismatches = 0
    for _ in range(cases):
        h = int(rng.integers(1, 5))
        w = int(rng.integers(1, 5))
        d = int(rng.integers(3, 7))
        k = int(rng.integers(2, 5))
        means = sample_uniform_sphere(rng, k, d)
        concentrations = rng.uniform(0.5, 20.0, size=k)
        dictionary = VmfDictionary(means, concentrations)
        mixture = MixtureModel(
            fg_prior=rng.uniform(0.0, 1.0, size=(h, w)),
            fg_coeffs=simplex((h, w, k)),
            ctx_coeffs=simplex((h, w, k)),
        )
        occluder = OccluderModel(coeffs=simplex(k))
        grid = sample_uniform_sphere(rng, h * w, d).reshape(h, w, d)
        fm = FeatureMap(grid.astype(np.float32))
        got: LikelihoodMaps = likelihood_maps(fm, mixture, dictionary, occluder)
        want = perpixel_maps_reference(
            fm.data.astype(np.float64),
            mixture.fg_prior,
            mixture.fg_coeffs,
            mixture.ctx_coeffs,
            occluder.coeffs,
            means,
            concentrations,
        )
        for got_map, want_map in zip((got.fg, got.ctx, got.occ), want):
            if not np.allclose(got_map, want_map, rtol=1e-7, atol=1e-7):
                mismatches += 1
                break
    return mismatches, cases
