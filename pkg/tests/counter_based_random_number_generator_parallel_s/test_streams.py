import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchgrid import ConfigError, builtin_pumped_storage, extract_policy, solve
from switchgrid.simulate import path_normals, simulate_paths

from conftest import cfl_grid


def test_stream_is_reproducible():
    a = path_normals(42, 7, 5, 2)
    b = path_normals(42, 7, 5, 2)
    assert np.array_equal(a, b)


def test_streams_differ_across_paths_and_seeds():
    base = path_normals(1, 0, 50, 1)
    assert not np.array_equal(base, path_normals(1, 1, 50, 1))
    assert not np.array_equal(base, path_normals(2, 0, 50, 1))


def test_prefix_stable_in_length():
    # drawing more steps does not change the earlier ones
    assert np.array_equal(path_normals(3, 11, 20, 2)[:10], path_normals(3, 11, 10, 2))


@pytest.mark.parametrize("seed", [-1, 2 ** 64])
def test_seed_range(seed):
    with pytest.raises(ConfigError):
        path_normals(seed, 0, 3, 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 2 ** 40))
def test_roughly_standard(seed, pid):
    z = path_normals(seed, pid, 2000, 1)
    assert abs(z.mean()) < 0.15 and 0.8 < z.std() < 1.2


@pytest.fixture(scope="module")
def storage_policy():
    spec = builtin_pumped_storage(2.0, {"theta": 0.0, "xi": 1.0}, 1.0, 0.0, T=0.5)
    lo, hi = spec.region
    g = cfl_grid(spec, lo, hi, (41, 23), n_min=1)
    return spec, extract_policy(solve(spec, 8, g), spec)


def test_chunking_and_threads_do_not_change_paths(storage_policy, monkeypatch):
    spec, pol = storage_policy
    ref = simulate_paths(spec, pol, 0.0, (1.0, 0.0), 2, 300, 0.01, 9)
    import switchgrid.simulate as sim
    monkeypatch.setattr(sim, "CHUNK", 64)
    again = simulate_paths(spec, pol, 0.0, (1.0, 0.0), 2, 300, 0.01, 9, threads=3)
    assert np.array_equal(ref.payoff, again.payoff)
    assert np.array_equal(ref.path_ids, np.arange(300))


def test_path_independent_of_batch_size(storage_policy):
    spec, pol = storage_policy
    small = simulate_paths(spec, pol, 0.0, (1.0, 0.0), 2, 5, 0.01, 4)
    large = simulate_paths(spec, pol, 0.0, (1.0, 0.0), 2, 50, 0.01, 4)
    assert np.array_equal(small.payoff, large.payoff[:5])
