import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compseg.errors import TrainingError, ValidationError
from compseg.fmap import FeatureMap
from compseg.learning import (
    TrainConfig,
    assign_mixtures,
    canonical_shape,
    estimate_coeffs,
    estimate_context_coeffs,
    estimate_fg_prior,
    inner_box_mask,
    learn_occluder,
    train,
)
from compseg.formats import save_model
from compseg.vmf import VmfDictionary


def test_inner_box_mask_layout():
    mask = inner_box_mask((10, 10), shrink=0.10)
    assert mask.shape == (10, 10)
    assert mask[1:9, 1:9].all()
    assert not mask[0].any() and not mask[-1].any()
    assert not mask[:, 0].any() and not mask[:, -1].any()
    # at least a one-pixel ring even when the shrink rounds to zero
    tiny = inner_box_mask((4, 4), shrink=0.01)
    assert tiny.sum() == 4


def test_inner_box_mask_too_small():
    with pytest.raises(ValidationError):
        inner_box_mask((2, 8))
    with pytest.raises(ValidationError):
        inner_box_mask((8, 2))


def test_canonical_shape_median():
    assert canonical_shape([(4, 6)]) == (4, 6)
    assert canonical_shape([(4, 4), (6, 8), (5, 5)]) == (5, 5)
    # even count: median of two middles, rounded to nearest (banker's at .5)
    assert canonical_shape([(4, 10), (6, 12)]) == (5, 11)


def _planted_resps(rng, crops=6, shape=(8, 8), k=3, noise=0.05):
    """Responsibility stacks with component 0 inside, component 1 on the ring."""
    inner = inner_box_mask(shape)
    out = []
    for _ in range(crops):
        r = rng.uniform(0.0, noise, size=(*shape, k))
        r[inner, 0] += 1.0
        r[~inner, 1] += 1.0
        r /= r.sum(axis=-1, keepdims=True)
        out.append(r)
    return out, inner


def test_fg_prior_separates_inside_from_ring():
    rng = np.random.default_rng(0)
    resps, inner = _planted_resps(rng)
    prior = estimate_fg_prior(resps)
    assert prior.shape == (8, 8)
    assert np.all(prior[inner] == 1.0)
    assert np.all(prior[~inner] == 0.0)


def test_estimate_coeffs_single_crop_identity():
    rng = np.random.default_rng(1)
    resps, _ = _planted_resps(rng, crops=1)
    alpha = estimate_coeffs(resps)
    assert np.allclose(alpha, resps[0], atol=1e-12)
    assert np.allclose(alpha.sum(axis=-1), 1.0, atol=1e-12)


def test_context_coeffs_ring_vs_interior():
    rng = np.random.default_rng(2)
    resps, inner = _planted_resps(rng, crops=4)
    chi = estimate_context_coeffs(resps)
    assert np.allclose(chi.sum(axis=-1), 1.0, atol=1e-12)
    # ring positions lean on the ring component, interior copies the pooled
    # ring profile (one shared row everywhere inside)
    assert np.all(chi[~inner, 1] > chi[~inner, 0])
    interior_rows = chi[inner].reshape(-1, chi.shape[-1])
    assert np.allclose(interior_rows, interior_rows[0], atol=1e-12)
    assert interior_rows[0, 1] > interior_rows[0, 0]


def test_estimators_reject_empty():
    with pytest.raises(TrainingError) as err:
        estimate_fg_prior([])
    assert err.value.stage == "prior"
    with pytest.raises(TrainingError):
        estimate_coeffs([])
    with pytest.raises(TrainingError):
        estimate_context_coeffs([])


def test_assign_mixtures_separated_clusters():
    rng = np.random.default_rng(5)
    a = rng.normal(0.0, 0.05, size=(7, 4))
    b = rng.normal(0.0, 0.05, size=(5, 4)) + 10.0
    vectors = np.concatenate([a, b])
    groups = assign_mixtures(vectors, 2, seed=[3, 1, 0])
    assert set(np.unique(groups)) == {0, 1}
    assert len(set(groups[:7])) == 1
    assert len(set(groups[7:])) == 1
    assert groups[0] != groups[7]
    # bitwise deterministic in the seed
    again = assign_mixtures(vectors, 2, seed=[3, 1, 0])
    assert np.array_equal(groups, again)


def test_assign_mixtures_edges():
    vectors = np.zeros((4, 3))
    assert np.array_equal(assign_mixtures(vectors, 1, seed=0), np.zeros(4, dtype=np.int64))
    with pytest.raises(TrainingError) as err:
        assign_mixtures(vectors, 5, seed=0)
    assert err.value.stage == "mixtures"
    with pytest.raises(TrainingError):
        assign_mixtures(vectors, 0, seed=0)


@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(4, 16))
@settings(max_examples=30, deadline=None)
def test_assign_mixtures_groups_nonempty(seed, m, n):
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(n, 3))
    groups = assign_mixtures(vectors, m, seed=seed)
    assert groups.shape == (n,)
    assert set(np.unique(groups)) == set(range(m))


def _axis_dictionary(k=3, d=4):
    means = np.zeros((k, d))
    for i in range(k):
        means[i, i] = 1.0
    return VmfDictionary(means, np.full(k, 12.0))


def test_learn_occluder_matches_planted_mix():
    dictionary = _axis_dictionary()
    rows = np.zeros((100, 4))
    rows[:75, 0] = 1.0    # 75% of background pixels sit on component 0
    rows[75:, 2] = 1.0
    fm = FeatureMap(rows.reshape(10, 10, 4))
    occ = learn_occluder([fm], dictionary)
    assert occ.coeffs.shape == (3,)
    assert occ.coeffs.sum() == pytest.approx(1.0, abs=1e-12)
    assert occ.coeffs[0] > occ.coeffs[2] > occ.coeffs[1]
    assert occ.coeffs[0] == pytest.approx(0.75, abs=0.02)


def test_learn_occluder_empty():
    with pytest.raises(TrainingError) as err:
        learn_occluder([], _axis_dictionary())
    assert err.value.stage == "occluder"


def test_train_empty_dataset():
    with pytest.raises(TrainingError) as err:
        train([], [])
    assert err.value.stage == "dataset"


def test_train_deterministic_bytes(tiny_train_pairs, tiny_backgrounds, tmp_path):
    pairs = tiny_train_pairs[:10]
    bgs = tiny_backgrounds[:3]
    cfg = TrainConfig(k=8, m=2, seed=3, dict_sample=20_000, max_iter=40)
    bundle_a, _ = train(pairs, bgs, cfg)
    bundle_b, _ = train(pairs, bgs, cfg)
    pa, pb = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
    save_model(bundle_a, pa)
    save_model(bundle_b, pb)
    assert open(pa, "rb").read() == open(pb, "rb").read()


def test_train_report_structure(tiny_train_pairs, tiny_backgrounds):
    pairs = tiny_train_pairs[:10]
    cfg = TrainConfig(k=8, m=2, seed=3, dict_sample=20_000, max_iter=40)
    bundle, report = train(pairs, tiny_backgrounds[:3], cfg)

    labels = sorted({o.label for _, ann in pairs for o in ann.objects})
    assert list(bundle.labels) == labels
    assert sorted(report.mixture_groups) == labels
    for label in labels:
        n_crops = len(report.crop_index[label])
        assert len(report.mixture_groups[label]) == n_crops
        assert set(report.mixture_groups[label]) == set(range(cfg.m))
        assert len(report.group_shapes[label]) == cfg.m
    assert report.dictionary_objective
    assert bundle.dictionary.size == cfg.k
    for cls in bundle.classes:
        assert len(cls.mixtures) == cfg.m
