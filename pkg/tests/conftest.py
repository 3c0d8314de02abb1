import numpy as np
import pytest

from risloc import ScenarioConfig, true_channel

# criterion number -> (passed, detail); printed once at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record_criterion():
    def record(k, ok, detail=""):
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    return record


def small_config(**kw) -> ScenarioConfig:
    """Small scenario that keeps unit tests fast; geometry as in the default setup."""
    base = dict(n_x=8, n_z=8, n_subcarriers=16, n_symbols=16)
    base.update(kw)
    return ScenarioConfig(**base)


def random_profile(n_r, T, rng):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, (n_r, T)))


@pytest.fixture
def cfg():
    return small_config()


@pytest.fixture
def desk():
    return ScenarioConfig(n_x=24, n_z=24)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def eta(cfg):
    return true_channel(cfg)


def farfield_signal(cfg, eta, W):
    """Noise-free observation with planar wavefronts on both RIS sides."""
    from risloc.geometry import delay_vector, farfield_steering, spherical_from_position

    th_el, th_az, _ = spherical_from_position(cfg.p_bs, cfg.p_ris)
    a_bs = farfield_steering(th_el, th_az, cfg.layout, cfg.wavelength)
    Y = 0
    for p in eta:
        b = farfield_steering(p.phi_el, p.phi_az, cfg.layout, cfg.wavelength) * a_bs
        Y = Y + p.rho * np.outer(delay_vector(p.tau, cfg), b @ np.asarray(W))
    return np.sqrt(cfg.tx_power) * Y
