import numpy as np
import pytest

from dlgfa.model import DlgfaModel, GroupSpec, ModelConfig

ACCEPTANCE_LINES: list[str] = []


def tiny_config(**overrides) -> ModelConfig:
    base = dict(K=3, H=3, p=2, T=2, group_spec=GroupSpec((2, 3), ("a", "b")), x_feat=3, z_feat=3, z_hidden=3)
    base.update(overrides)
    return ModelConfig(**base)


def randomize(model: DlgfaModel, seed: int, scale: float = 0.5) -> DlgfaModel:
    """Overwrite every parameter with N(0, scale^2) draws."""
    rng = np.random.default_rng(seed)
    for _, p in model.params.items():
        p.data[...] = rng.normal(0.0, scale, size=p.shape)
    return model


def hand_set(model: DlgfaModel) -> DlgfaModel:
    """Deterministic, non-trivial parameter values (no randomness involved)."""
    for k, (_, p) in enumerate(model.params.items()):
        idx = np.arange(p.size, dtype=float)
        p.data[...] = (0.3 * np.sin(1.7 * idx + k) + 0.1 * np.cos(0.3 * idx * (k + 1))).reshape(p.shape)
    return model


def mocap_dims() -> list[int]:
    """29 groups of 1-3 features, 59 features in total."""
    dims = [1, 2, 3] * 9 + [2, 3]
    assert len(dims) == 29 and sum(dims) == 59
    return dims


@pytest.fixture
def tiny_model():
    return randomize(DlgfaModel(tiny_config(), seed=0), seed=1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
