import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from mlfpn.rng import glorot_uniform, layer_key, splitmix64, uniform

MASK = (1 << 64) - 1


def splitmix64_scalar(state, count):
    # Sequential generator form: state advances by the golden gamma each call.
    out = []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def test_known_vector():
    # First output of SplitMix64 seeded with 0.
    assert int(splitmix64(0, 1)[0]) == 0xE220A8397B1DCDAF


@given(st.integers(0, MASK))
def test_matches_sequential_generator(key):
    assert [int(v) for v in splitmix64(key, 5)] == splitmix64_scalar(key, 5)


def test_uniform_range():
    u = uniform(123, 10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.02


def test_layer_keys_differ():
    assert layer_key(0, "tum1.enc1") != layer_key(0, "tum2.enc1")
    assert layer_key(0, "a") != layer_key(1, "a")


def test_glorot_bound_and_determinism():
    w = glorot_uniform(0, "x", (16, 8, 3, 3), 72, 144)
    bound = np.sqrt(6.0 / (72 + 144))
    assert w.dtype == np.float32 and np.abs(w).max() <= bound
    assert w.tobytes() == glorot_uniform(0, "x", (16, 8, 3, 3), 72, 144).tobytes()
    assert w.tobytes() != glorot_uniform(1, "x", (16, 8, 3, 3), 72, 144).tobytes()
