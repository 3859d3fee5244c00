"""Shared fixtures.

Unit tests build tiny untrained models on the fly.  Acceptance tests need
the trained checkpoints and (for the table criteria) the benchmark outputs;
``prepare_assets.py`` / ``run_benchmark.py`` produce those.  Missing assets
make the depending tests fail with instructions rather than skip silently.
"""

import os
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parent.parent
ASSETS = REPO / "assets"
RESULTS = REPO / "results"
RESULTS_ABLATION = REPO / "results_ablation"


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return REPO


@pytest.fixture(scope="session")
def assets_dir() -> Path:
    needed = ["encoder.ttan", "policy.ttan", "decoder.ttan", "episodes_eval.json"]
    missing = [n for n in needed if not (ASSETS / n).exists()]
    if missing:
        pytest.fail(
            f"trained assets missing from {ASSETS}: {missing}. "
            "Run `python3 scripts/prepare_assets.py` first.", pytrace=False)
    return ASSETS


@pytest.fixture(scope="session")
def bundle(assets_dir):
    from ttanav.agents import ModelBundle

    return ModelBundle.load(assets_dir)


@pytest.fixture(scope="session")
def eval_episodes(assets_dir):
    from ttanav.episodes import load_episodes

    _, eps = load_episodes(assets_dir / "episodes_eval.json")
    return eps


@pytest.fixture(scope="session")
def scene():
    from ttanav.sim import generate_scene

    return generate_scene(7)


@pytest.fixture(scope="session")
def tiny_bundle():
    """Untrained weights with correct shapes; enough for wiring/equality tests."""
    from ttanav.agents import ModelBundle
    from ttanav.model import Decoder, Encoder, Policy

    enc = Encoder(seed=123)
    pol = Policy(seed=124)
    dec = Decoder(seed=125)
    # Non-degenerate running stats so frozen normalization is not the identity.
    rng = np.random.default_rng(5)
    for name, buf in enc.named_buffers():
        if name.endswith("running_mean"):
            buf[...] = rng.normal(0, 0.3, size=buf.shape).astype(np.float32)
        elif name.endswith("running_var"):
            buf[...] = rng.uniform(0.5, 1.8, size=buf.shape).astype(np.float32)
    return ModelBundle(enc.state_dict(), pol.state_dict(), dec.state_dict())


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")
