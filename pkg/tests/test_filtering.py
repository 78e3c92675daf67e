import numpy as np
import pytest

from pcfilter.diffcore import Tensor
from pcfilter.filtering import FilterConfig, FilteringError, filter_cloud, filter_patch, trajectory_rows
from pcfilter.geometry import NoiseSpec, PointCloud, add_noise, extract_patch, sample_reference_points
from pcfilter.hybrid import HybridModel, config_for, long_features, short_forward
from pcfilter.shapes import ShapeSpec, generate

from conftest import TINY


class Poison:
    """Stands in for the long decoder; any use of it fails the test."""

    def __getattr__(self, name):
        raise AssertionError(f"long decoder accessed ({name})")

    def __call__(self, *args, **kwargs):
        raise AssertionError("long decoder called")


@pytest.fixture
def model():
    m = HybridModel(TINY, seed=7)
    # larger weights so the score is clearly nonzero
    for p in m.parameters().values():
        p.data = p.data * 0.5
    return m


@pytest.fixture
def noisy():
    clean, _ = generate(ShapeSpec("sphere", 300, seed=5))
    return add_noise(clean, NoiseSpec("gaussian", 0.02, 1))


def test_zero_model_is_identity(noisy):
    m = HybridModel.zeros(TINY)
    for alpha, n in [(0.8, 4), (1.5, 2)]:
        x, _ = filter_patch(noisy.points[:40], m, FilterConfig(alpha=alpha, n_steps=n))
        assert np.array_equal(x, noisy.points[:40])
    out = filter_cloud(noisy, m, FilterConfig(patch_k=64))
    assert np.max(np.abs(out.points - noisy.points)) < 1e-12


def test_single_step_is_euler(model, rng):
    x0 = rng.normal(size=(30, 3))
    x, _ = filter_patch(x0, model, FilterConfig(alpha=0.8, n_steps=1))
    xs = Tensor(x0)
    expected = x0 + 0.8 * short_forward(model, xs, long_features(model, xs)).data
    assert np.array_equal(x, expected)


def test_alpha_linearity(model, rng):
    x0 = rng.normal(size=(30, 3))
    a, ta = filter_patch(x0, model, FilterConfig(alpha=0.5, n_steps=1))
    b, tb = filter_patch(x0, model, FilterConfig(alpha=1.0, n_steps=1))
    assert ta.scores[0].tobytes() == tb.scores[0].tobytes()
    # the displacement is alpha * score, and doubling is exact in floating point
    assert np.array_equal(1.0 * tb.scores[0], 2 * (0.5 * ta.scores[0]))
    assert np.array_equal(a, x0 + 0.5 * ta.scores[0]) and np.array_equal(b, x0 + 1.0 * tb.scores[0])


@pytest.mark.parametrize("n_steps", [1, 3, 4])
def test_telescoping(model, rng, n_steps):
    x0 = rng.normal(size=(30, 3))
    x, traj = filter_patch(x0, model, FilterConfig(alpha=0.8, n_steps=n_steps))
    assert len(traj.states) == n_steps + 1 and len(traj.scores) == n_steps
    np.testing.assert_allclose(x - x0, 0.8 * np.sum(traj.scores, axis=0), rtol=0, atol=1e-12)


def test_long_decoder_never_used(model, noisy):
    model.long_decoder = Poison()
    filter_cloud(noisy, model, FilterConfig(patch_k=64, n_steps=2))


def test_threads_match_sequential(model, noisy):
    seq = filter_cloud(noisy, model, FilterConfig(patch_k=64, threads=1))
    par = filter_cloud(noisy, model, FilterConfig(patch_k=64, threads=4))
    assert seq.points.tobytes() == par.points.tobytes()


def test_output_size_and_order(model, noisy):
    out = filter_cloud(noisy, model, FilterConfig(patch_k=64, n_steps=1))
    assert len(out) == len(noisy)
    # small step: each output point stays closest to its own input point
    assert np.max(np.linalg.norm(out.points - noisy.points, axis=1)) < 0.5


def test_baseline_variant_filters(noisy):
    cfg, _ = config_for("baseline_score", TINY)
    out = filter_cloud(noisy, HybridModel(cfg), FilterConfig(patch_k=64, n_steps=1))
    assert len(out) == len(noisy)


def test_too_few_points(model):
    with pytest.raises(FilteringError):
        filter_cloud(PointCloud(np.zeros((10, 3))), model, FilterConfig(patch_k=64))


def test_non_finite_reports_step(model, rng):
    model.short_decoder.layers[-1].self2.b.data[:] = 1e308
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(FilteringError, match="step 1"):
        filter_patch(rng.normal(size=(20, 3)), model, FilterConfig(alpha=1.0, n_steps=3))


def test_trajectory_rows(model, noisy):
    _, patches, trajs = filter_cloud(noisy, model, FilterConfig(patch_k=64, n_steps=2), return_trajectories=True)
    rows = list(trajectory_rows(patches, trajs))
    assert len(rows) == len(patches) * 3 * 64
    pid, step, idx, *xyz = rows[0]
    assert (pid, step) == (0, 0)
    np.testing.assert_allclose(xyz, noisy.points[idx], atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(alpha=0)
    with pytest.raises(ValueError):
        FilterConfig(n_steps=0)


def test_patches_cover_cloud(noisy):
    refs = sample_reference_points(noisy, 64)
    covered = set()
    for r in refs:
        covered |= set(extract_patch(noisy, r, 64).source_indices.tolist())
    assert covered == set(range(len(noisy)))
