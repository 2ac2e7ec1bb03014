import numpy as np
import pytest
from scipy import stats

from td3lab.errors import ContractError, PreconditionError, ShapeError
from td3lab.replay import End, ReplayBuffer, Transition


def tr(i, end=End.NONE):
    return Transition(np.array([float(i)]), np.array([0.0]), float(i), np.array([i + 1.0]), end)


def test_ring_overwrites_oldest():
    buf = ReplayBuffer(1, 1, capacity=2)
    for i in (1, 2, 3):
        buf.push(tr(i))
    assert len(buf) == 2
    assert sorted(buf.rewards.tolist()) == [2.0, 3.0]


def test_push_then_size():
    buf = ReplayBuffer(1, 1, capacity=5)
    buf.push(tr(0))
    assert len(buf) == 1


def test_full_capacity_no_wrap():
    cap = 10**6
    buf = ReplayBuffer(1, 1, capacity=cap)
    s, a = np.zeros(1), np.zeros(1)
    for _ in range(cap):
        buf.add(s, a, 0.0, s)
    assert len(buf) == cap and buf.wraps == 0 and buf.cursor == 0
    buf.add(s, a, 1.0, s)
    assert len(buf) == cap and buf.wraps == 1 and buf.rewards[0] == 1.0


def test_wrap_counter_small():
    buf = ReplayBuffer(1, 1, capacity=3)
    for i in range(3):
        buf.push(tr(i))
    assert buf.wraps == 0
    buf.push(tr(3))
    assert buf.wraps == 1


def test_shape_mismatch():
    buf = ReplayBuffer(2, 1, capacity=4)
    with pytest.raises(ShapeError):
        buf.push(tr(0))


def test_action_bounds_enforced():
    buf = ReplayBuffer(1, 1, capacity=4, action_low=[-1.0], action_high=[1.0])
    with pytest.raises(ContractError):
        buf.add([0.0], [1.5], 0.0, [0.0])


def test_single_item_sampled_repeatedly():
    buf = ReplayBuffer(1, 1, capacity=4)
    buf.push(tr(7))
    batch = buf.sample(5, np.random.default_rng(0))
    assert batch.rewards.tolist() == [7.0] * 5


def test_empty_sample_raises():
    with pytest.raises(PreconditionError):
        ReplayBuffer(1, 1, capacity=4).sample(1, np.random.default_rng(0))


def test_same_seed_same_batch():
    buf = ReplayBuffer(1, 1, capacity=50)
    for i in range(50):
        buf.push(tr(i))
    a = buf.sample(32, np.random.default_rng(3))
    b = buf.sample(32, np.random.default_rng(3))
    assert np.array_equal(a.rewards, b.rewards)


def test_frequencies_within_binomial_band():
    buf = ReplayBuffer(1, 1, capacity=10)
    for i in range(10):
        buf.push(tr(i))
    draws = buf.sample(10**5, np.random.default_rng(12)).rewards
    freq = np.bincount(draws.astype(int), minlength=10) / draws.size
    # 10 sigma of a Binomial(1e5, 0.1) frequency is ~0.0095
    assert np.all((freq >= 0.09) & (freq <= 0.11))


def test_chi_square_uniformity():
    buf = ReplayBuffer(1, 1, capacity=10)
    for i in range(10):
        buf.push(tr(i))
    crit = stats.chi2.ppf(0.999, df=9)
    passed = 0
    for seed in range(100):
        draws = buf.sample(10**5, np.random.default_rng(seed)).rewards.astype(int)
        counts = np.bincount(draws, minlength=10)
        chi2 = np.sum((counts - 10**4) ** 2 / 10**4)
        passed += chi2 < crit
    assert passed >= 99


def test_never_returns_overwritten():
    buf = ReplayBuffer(1, 1, capacity=4)
    for i in range(10):
        buf.push(tr(i))
    drawn = set(buf.sample(1000, np.random.default_rng(1)).rewards.tolist())
    assert drawn <= {6.0, 7.0, 8.0, 9.0}


def test_partial_fill_only_samples_written_slots():
    buf = ReplayBuffer(1, 1, capacity=100)
    for i in range(1, 4):
        buf.push(tr(i))
    assert set(buf.sample(500, np.random.default_rng(0)).rewards.tolist()) == {1.0, 2.0, 3.0}


def test_end_kinds_roundtrip(tmp_path):
    buf = ReplayBuffer(1, 1, capacity=8)
    buf.push(tr(0, End.NONE))
    buf.push(tr(1, End.TERMINAL))
    buf.push(tr(2, End.TIMEOUT))
    path = tmp_path / "buf.bin"
    buf.dump(path)
    back = ReplayBuffer.load(path)
    assert len(back) == 3
    assert back.ends[:3].tolist() == [0, 1, 2]
    assert np.array_equal(back.next_states[:3], buf.next_states[:3])
    assert back.gather(np.array([1])).terminal.tolist() == [True]
