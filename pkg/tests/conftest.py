import warnings
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from sceneshape.synth import SceneConfig, generate_scene, render_depth, scale_normalize

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"

# acceptance outcomes, filled in by tests/test_acceptance.py
CRITERIA: dict[str, tuple[bool, str]] = {}


def record(name: str, ok: bool, detail: str) -> None:
    CRITERIA[name] = (bool(ok), detail)


@lru_cache(maxsize=None)
def _render(seed: int):
    cfg = SceneConfig()
    cam = cfg.camera()
    scene = generate_scene(seed, cfg)
    depth, labels, normals = render_depth(scene, cam)
    return scene, cam, depth, labels, normals


def render(seed: int):
    """(scene, camera, metric depth, labels, normals) at the default 128x128, FOV 60."""
    scene, cam, depth, labels, normals = _render(seed)
    return scene, cam, depth.replace(), labels.copy(), normals


def normalized(seed: int):
    _, cam, depth, labels, _ = render(seed)
    return cam, scale_normalize(depth), labels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, (ok, detail) in CRITERIA.items():
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    n_ok = sum(ok for ok, _ in CRITERIA.values())
    tr.write_line(f"{n_ok}/{len(CRITERIA)} criteria passed")
