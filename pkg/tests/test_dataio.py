
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from subgns import container, dataio


def test_build_state_matrix_single_particle():
    M = dataio.build_state_matrix([np.array([[1.0, 2, 3]]), np.array([[1.0, 2, 3]])])
    np.testing.assert_array_equal(M[:, 0], [1, 2, 3, 1, 2, 3])


def test_build_state_matrix_column_per_particle():
    M = dataio.build_state_matrix([np.array([[0.0, 0, 0], [1, 1, 1]])])
    np.testing.assert_array_equal(M, [[0, 1], [0, 1], [0, 1]])


def test_build_state_matrix_ragged():
    with pytest.raises(ValueError):
        dataio.build_state_matrix([np.zeros((2, 3)), np.zeros((3, 3))])


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6), st.just(3)),
                  elements=st.floats(-1e6, 1e6)))
def test_layout_round_trip(frames):
    M = dataio.build_state_matrix(list(frames))
    assert M.shape == (3 * frames.shape[0], frames.shape[1])
    np.testing.assert_array_equal(dataio.state_frames(M), frames)


def _example(m=10, n=2, n_r=1, seed=0):
    rng = np.random.default_rng(seed)
    return dataio.TrajectoryExample(S=rng.normal(size=(3 * m, n)), R=rng.normal(size=(3 * m, n_r)),
                                    F=rng.normal(size=(m, 3)), conditions={"speed": 1})


def test_example_invariants():
    with pytest.raises(ValueError):
        dataio.TrajectoryExample(S=np.zeros((6, 2)), R=np.zeros((9, 1)), F=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        dataio.TrajectoryExample(S=np.full((6, 2), np.nan), R=np.zeros((6, 1)), F=np.zeros((2, 3)))


@pytest.mark.parametrize("c,train", [(10, 9), (2, 1), (20, 18)])
def test_split_counts(c, train):
    ds = dataio.Dataset(examples=[_example(seed=i) for i in range(c)], split=["train"] * c)
    out = dataio.split_dataset(ds, 0.9, seed=4)
    assert len(out.train) == train and len(out.test) == c - train
    assert out.metadata["split_seed"] == 4
    assert dataio.split_dataset(ds, 0.9, seed=4).split == out.split


def test_split_errors():
    ds = dataio.Dataset(examples=[_example()], split=["train"])
    with pytest.raises(ValueError):
        dataio.split_dataset(ds, 0.9)
    with pytest.raises(ValueError):
        dataio.split_dataset(ds, 1.0)


@pytest.mark.parametrize("m,count", [(7, 1), (10, 4)])
def test_window_counts(m, count):
    ex = _example(m=m)
    Z = np.hstack([ex.S, ex.R])
    wins = dataio.make_windows(Z, ex.F, d=6, n_flow=2)
    assert len(wins) == count
    assert [w.start for w in wins] == list(range(count))
    for k, w in enumerate(wins):
        np.testing.assert_array_equal(w.target_force, ex.F[k + 6])
        assert w.positions.shape == (7, 3, 3)
        np.testing.assert_array_equal(w.node_types, [0, 0, 1])


def test_window_coverage():
    ex = _example(m=12)
    Z = np.hstack([ex.S, ex.R])
    wins = dataio.make_windows(Z, ex.F, d=3, n_flow=2)
    labels = np.stack([w.positions[-1] for w in wins])
    np.testing.assert_array_equal(labels, dataio.state_frames(Z)[3:])


def test_window_too_short():
    ex = _example(m=5)
    with pytest.raises(ValueError):
        dataio.make_windows(np.hstack([ex.S, ex.R]), ex.F, d=6)


def _single(pos, **kw):
    base = dict(initial_positions=pos, settle_frames=0, jitter=0.0)
    base.update(kw)
    return dataio.OracleConfig(**base)


def test_equilibrium_is_static():
    pts = tuple((0.2 + 0.1 * i, 0.1, 0.02) for i in range(4))
    ex = dataio.generate_synthetic(_single(pts, gravity=(0, 0, 0), frames=5), 0)
    S0 = ex.S[:3]
    for t in range(5):
        np.testing.assert_array_equal(ex.S[3 * t : 3 * t + 3], S0)
    assert np.all(ex.F == 0)


def test_ballistic_particle():
    z0, g, dt, sub = 0.25, 10.0, 0.01, 4
    cfg = _single(((0.5, 0.1, z0),), gravity=(0, 0, -g), dt_physical=dt, frames=3, substeps=sub)
    ex = dataio.generate_synthetic(cfg, 0)
    h = dt / sub
    for t in range(3):
        k = t * sub
        z = ex.S[3 * t + 2, 0]
        # semi-implicit Euler: z_k = z0 - g h^2 k (k + 1) / 2
        assert z == pytest.approx(z0 - g * h * h * k * (k + 1) / 2, abs=1e-14)
        # closed form within the integrator's O(h) truncation
        tt = t * dt
        assert abs(z - (z0 - 0.5 * g * tt * tt)) <= 0.5 * g * h * tt + 1e-14


def test_action_reaction():
    cfg = dataio.scenario_config("excavation", {"angle": 0, "depth": 2, "speed": 10, "motion": 1},
                                 n_particles=60)
    rng = np.random.default_rng(1)
    rpos, rvel = cfg.rigid.pose(0.0)
    pos = rpos[rng.integers(len(rpos), size=30)] + rng.normal(scale=0.01, size=(30, 3))
    vel = rng.normal(size=(30, 3))
    f, reaction = dataio.rigid_contact_forces(pos, vel, rpos, rvel, cfg)
    assert np.abs(f).max() > 0
    np.testing.assert_allclose(reaction, -f.sum(axis=0), rtol=1e-10, atol=0)


def test_oracle_determinism():
    cond = dataio.sample_conditions("wheel", np.random.default_rng(0))
    cfg = dataio.scenario_config("wheel", cond,
                                 n_particles=60, frames=8, settle_frames=3)
    a = dataio.generate_synthetic(cfg, 42)
    b = dataio.generate_synthetic(cfg, 42)
    for x, y in ((a.S, b.S), (a.R, b.R), (a.F, b.F)):
        assert x.tobytes() == y.tobytes()


def test_oracle_errors():
    with pytest.raises(dataio.OracleError):
        dataio.generate_synthetic(_single(np.zeros((0, 3))), 0)
    # stiff contacts and walls with one substep blow up and report the frame
    pts = tuple((0.5 + 0.001 * i, 0.1, 0.1) for i in range(3))
    cfg = _single(pts, stiffness=1e12, wall_stiffness=1e12, substeps=1, frames=50)
    with pytest.raises(dataio.OracleError) as info, np.errstate(all="ignore"):
        dataio.generate_synthetic(cfg, 0)
    assert "frame" in str(info.value)


def test_generated_rigid_body_pushes_soil(tiny_dataset):
    ex = tiny_dataset.examples[0]
    assert ex.n == 60 and ex.n_r == 20 and ex.m == 16
    assert np.abs(ex.F).max() > 0
    assert set(ex.conditions) >= set(dataio.EXCAVATION_VARIABLES)


def test_dataset_round_trip(tmp_path, tiny_dataset):
    dataio.save_dataset(tiny_dataset, tmp_path / "d.sgns")
    back = dataio.load_dataset(tmp_path / "d.sgns")
    assert back.split == tiny_dataset.split
    assert back.metadata == tiny_dataset.metadata
    for a, b in zip(back.examples, tiny_dataset.examples):
        np.testing.assert_array_equal(a.S, b.S)
        np.testing.assert_array_equal(a.R, b.R)
        np.testing.assert_array_equal(a.F, b.F)
        assert a.conditions == b.conditions


def test_dataset_bad_magic(tmp_path, tiny_dataset):
    p = tmp_path / "d.sgns"
    dataio.save_dataset(tiny_dataset, p)
    data = bytearray(p.read_bytes())
    data[0:4] = b"NOPE"
    p.write_bytes(bytes(data))
    with pytest.raises(container.FormatError):
        dataio.load_dataset(p)
