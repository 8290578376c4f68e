import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from heteroloc.config import ExperimentConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(d_model=8, anchors=4, k_modes=3, future_len=None) -> ExperimentConfig:
    """A narrow model that keeps gradient checks and scene-level tests fast."""
    cfg = ExperimentConfig()
    m = cfg.model
    m.d_model, m.d_type, m.point_widths = d_model, 4, (6, 8)
    m.heads, m.layers, m.rounds = 2, 2, 2
    m.anchors, m.k_modes, m.decoder_hidden = anchors, k_modes, 8
    m.neighborhood = 6
    cfg.graph.k, cfg.graph.scales = 3, (3, 4)
    return cfg


@pytest.fixture
def small_cfg():
    return small_config()


def store_grad_check(fn, store, names=None, coords=4, seed=0):
    """grad_check over named entries of a parameter store; ``fn`` receives a dict of Tensors."""
    from heteroloc import autodiff as ad

    names = sorted(store) if names is None else list(names)

    def wrapped(leaves):
        bound = dict(store)
        bound.update(zip(names, leaves))
        return fn(bound)

    return ad.grad_check(wrapped, [store[n] for n in names], coords=coords, seed=seed)


# --- acceptance reporting -----------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed and rep.when != "call":
        detail = f"{rep.when} error"
    _ACCEPTANCE[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
