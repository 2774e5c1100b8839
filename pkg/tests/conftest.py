"""Shared fixtures: scenario paths, a timed default pretraining run, and a
small fast checkpoint for CLI round trips."""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from semstream.config import load_scenario
from semstream.student import StudentNet
from semstream.training import (evaluate_student, labeled_regions_from_scene,
                                pretrain)

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = REPO / "scenarios"

TINY_SCENARIO = """\
[scene]
L = 4
fps = 8
seed = 5
noise_amp = 0.01
background = gradient
background.color_a = 0.20 0.22 0.30
background.color_b = 0.38 0.40 0.48

[object:blobs]
size = 30 50
vx = 1.0 2.0
vy = -0.5 0.5
shape = rect
texture = checker
texture.color_a = 0.90 0.75 0.20
texture.color_b = 0.10 0.10 0.10
texture.scale = 6
initial = 2
spawn_rate = 0.0
max_live = 2

[pretrain:base]
seed = 11
frames = 6
stride = 3

[pretrain:shifted]
seed = 12
frames = 6
stride = 3
noise_amp = 0.02

[train]
learning_rate = 0.05
epochs = 4
minibatch = 32
seed = 3

[network]
preset = rich

[pipeline]
n_frames = 8
th = 40
r = 4
delta = 0.8
batches = 2
mode = ltc
"""


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIOS


@pytest.fixture(scope="session")
def default_scenario():
    return load_scenario(SCENARIOS / "default.ini")


@pytest.fixture(scope="session")
def pretrain_run(default_scenario):
    """Timed pretraining on the default scenario plus a held-out evaluation.

    Session-scoped: the trained student backs every scenario-level test, so
    the wall-clock cost is paid once per pytest invocation.
    """
    sc = default_scenario
    student = StudentNet(seed=sc.train.seed, conv_channels=sc.conv_channels)
    pool_size = sum(frames * spec.L * spec.L
                    for spec, frames, _ in sc.pretrain_scenes)
    t0 = time.perf_counter()
    _, trace = pretrain(student, sc.pretrain_scenes, sc.train)
    elapsed = time.perf_counter() - t0
    held_out = replace(sc.scene, seed=sc.scene.seed + 9999, drift_schedule=())
    regions, labels = labeled_regions_from_scene(held_out, 4, stride=7)
    accuracy, recall = evaluate_student(student, regions, labels)
    return {"student": student, "elapsed": elapsed, "pool_size": pool_size,
            "trace": trace, "accuracy": accuracy, "recall": recall}


@pytest.fixture(scope="session")
def pretrained_student(pretrain_run):
    return pretrain_run["student"]


@pytest.fixture(scope="session")
def tiny_scenario_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("scenario") / "tiny.ini"
    path.write_text(TINY_SCENARIO)
    return path


@pytest.fixture(scope="session")
def tiny_scenario(tiny_scenario_path):
    return load_scenario(tiny_scenario_path)


@pytest.fixture(scope="session")
def tiny_student(tiny_scenario):
    sc = tiny_scenario
    student = StudentNet(seed=sc.train.seed, conv_channels=sc.conv_channels)
    pretrain(student, sc.pretrain_scenes, sc.train)
    return student


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, tiny_student):
    path = tmp_path_factory.mktemp("ck") / "tiny.ck"
    path.write_bytes(tiny_student.save_checkpoint())
    return path


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
