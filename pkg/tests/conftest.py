import pytest

from koopman_fcs import config, koopman, sim


@pytest.fixture(scope="session")
def run_config():
    return config.load()


@pytest.fixture(scope="session")
def training_log(run_config):
    return sim.generate_training_data(run_config.training_config())


@pytest.fixture(scope="session")
def bank(training_log):
    return koopman.train_bank(training_log)


@pytest.fixture(scope="session")
def scenario_logs(run_config, bank):
    """Closed-loop logs keyed by (scenario, controller), simulated once per session."""
    cache = {}

    def get(name, controller):
        key = (name, controller)
        if key not in cache:
            sc = run_config.scenario(name, controller)
            cache[key] = sim.run_closed_loop(sc, run_config.motor, bank=bank)
        return cache[key]

    return get
