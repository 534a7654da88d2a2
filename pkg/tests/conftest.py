import numpy as np
import pytest

from pagnet.blocks import init_block


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def block(rng):
    """A small bottleneck block with non-trivial norms and biases."""
    p = init_block(8, 2, rng, residual_scale=1.0)
    for k in ("b1", "b2", "b3", "s1", "s2", "s3"):
        setattr(p, k, rng.normal(0, 0.3, getattr(p, k).shape))
    for k in ("g1", "g2", "g3"):
        setattr(p, k, rng.uniform(0.5, 1.5, getattr(p, k).shape))
    for k in ("m1", "m2", "m3"):
        setattr(p, k, rng.normal(0, 0.2, getattr(p, k).shape))
    for k in ("v1", "v2", "v3"):
        setattr(p, k, rng.uniform(0.5, 2.0, getattr(p, k).shape))
    p.gate_w = rng.normal(0, 0.5, p.gate_w.shape)
    p.gate_b = np.array([0.0, 0.2])
    return p


TINY = dict(image_size=12, crop_margin=4, n_train=4, n_eval=3, depth=2, channels=8,
            head_channels=4, iters_base=4, iters_multipool=3, iters_gate=2, iters_rho=3,
            rates=(0, 1, 2), density_window=5, lam=1.0)


@pytest.fixture
def tiny():
    """Keyword arguments for a RunConfig that trains in well under a second."""
    return dict(TINY)


def tiny_config_text(**overrides) -> str:
    values = {**TINY, **overrides}
    lines = []
    for k, v in values.items():
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
