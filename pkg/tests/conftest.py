import time

import numpy as np
import pytest
import torch

from cyclestyle.backbone import load_backbone
from cyclestyle.losses import LossWeights
from cyclestyle.toy import toy_pair
from cyclestyle.trainer import TrainConfig, Trainer

torch.set_num_threads(1)

ACCEPTANCE_LINES = []
TOY_STEPS = 600


def record(number, title, passed, detail=""):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def backbone():
    return load_backbone({"seed": 0})


@pytest.fixture(scope="session")
def backbone64():
    return load_backbone({"seed": 0}).to(torch.float64)


@pytest.fixture(scope="session")
def toy():
    return toy_pair("main")


class ToyRuns:
    """Trains the toy pair once per seed and keeps the result for the session."""

    def __init__(self, backbone):
        self.backbone = backbone
        self.runs = {}

    def get(self, seed):
        if seed not in self.runs:
            x_a, x_b, masks = toy_pair("main")
            cfg = TrainConfig(weights=LossWeights(), steps=TOY_STEPS, seed=seed)
            t0 = time.perf_counter()
            trainer = Trainer(x_a, x_b, masks, cfg, self.backbone)
            with torch.no_grad():
                initial_total = float(trainer.ctx.total(trainer.g_a, trainer.g_b))
            ckpt = trainer.run()
            self.runs[seed] = dict(trainer=trainer, ckpt=ckpt, initial_total=initial_total,
                                   seconds=time.perf_counter() - t0)
        return self.runs[seed]


@pytest.fixture(scope="session")
def toy_runs(backbone):
    return ToyRuns(backbone)


@pytest.fixture(scope="session")
def trained(toy_runs):
    return toy_runs.get(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
