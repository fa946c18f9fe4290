import pytest

from subgns import dataio, gns, pca, training


@pytest.fixture(scope="session")
def tiny_dataset():
    """Five short excavation episodes on a 60-particle bed."""
    return dataio.generate_dataset("excavation", n_particles=60, frames=16, examples=5,
                                   seed=3, settle_frames=5)


@pytest.fixture(scope="session")
def tiny_basis(tiny_dataset):
    return pca.fit([e.S for e in tiny_dataset.train], 4)


@pytest.fixture(scope="session")
def tiny_config():
    return training.TrainingConfig(d=4, latent=16, hidden=16, max_steps=200, seed=1,
                                   checkpoint_every=0)


@pytest.fixture(scope="session")
def tiny_windows(tiny_dataset, tiny_basis, tiny_config):
    return training.training_windows(tiny_dataset, tiny_basis, tiny_config)


@pytest.fixture(scope="session")
def tiny_model(tiny_windows, tiny_basis, tiny_config):
    stats = training.fit_norm_stats(tiny_windows, tiny_config, "tiny")
    return gns.init_model(tiny_config.gns_config(), 5, stats, tiny_basis.fingerprint())


def random_window(rng, n_flow=2, n_rigid=1, d=4, scripted=True):
    pos = rng.normal(size=(d + 1, n_flow + n_rigid, 3))
    return dataio.WindowSample(positions=pos, node_types=dataio.node_types(n_flow, n_rigid),
                               target_force=rng.normal(size=3), rigid_scripted=scripted)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
