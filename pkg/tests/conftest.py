"""Shared fixtures: the toy ring8 runs used by the acceptance gates and slow tests.

Set ``RECTLAB_TOY_CACHE=<dir>`` to keep the trained checkpoints between
pytest sessions (handy while iterating; off by default so a plain run is
self-contained).
"""

import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from rectlab.distill import CDConfig, consistency_distill
from rectlab.net import NetConfig, NetEps, init_params, load_checkpoint, save_checkpoint
from rectlab.oracle import mixture_preset
from rectlab.pairs import collect_pairs
from rectlab.phased import make_phase_plan, train_phased
from rectlab.schedule import make_schedule
from rectlab.training import Coupling, TrainConfig, train

SEEDS = (0, 1, 2, 3, 4)
ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains toy networks (minutes)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def record(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


@dataclass
class ToyRun:
    """Everything trained for one seed, plus wall time per stage."""

    seed: int
    schedule: object
    data: np.ndarray
    base: object
    rect: object = None
    phased: object = None
    plan: object = None
    cd_rect_losses: np.ndarray = None
    cd_base_losses: np.ndarray = None
    cd_rect: object = None
    seconds: dict = field(default_factory=dict)


class ToyLab:
    """Trains lazily and memoizes per (seed, stage)."""

    def __init__(self, cache_dir=None):
        self.vp = make_schedule("vp")
        self.mix = mixture_preset("ring8")
        self.runs = {}
        self.cache = Path(cache_dir) if cache_dir else None
        if self.cache:
            self.cache.mkdir(parents=True, exist_ok=True)

    def _timed(self, run, stage, fn):
        t0 = time.perf_counter()
        out = fn()
        run.seconds[stage] = time.perf_counter() - t0
        return out

    def _cached(self, run, stage, fn):
        path = self.cache / f"{stage}_{run.seed}.rdnet" if self.cache else None
        if path is not None and path.exists():
            params, meta = load_checkpoint(path)
            run.seconds[stage] = float(meta["seconds"])
            return params
        params = self._timed(run, stage, fn)
        if path is not None:
            save_checkpoint(path, params, {"seconds": repr(run.seconds[stage])})
        return params

    def run(self, seed):
        if seed not in self.runs:
            vp = self.vp
            data = self.mix.sample(100_000, np.random.default_rng([seed, 7]))
            run = ToyRun(seed, vp, data, None)
            run.base = self._cached(run, "base", lambda: train(
                TrainConfig(vp, seed=seed), Coupling.random(data),
                init_params(NetConfig(), seed=seed)).params)
            self.runs[seed] = run
        return self.runs[seed]

    def rectified(self, seed):
        run = self.run(seed)
        if run.rect is None:
            vp = self.vp

            def go():
                # the "rectify" time includes collecting the pairs
                pairs = collect_pairs(NetEps(run.base, vp), vp, 50_000, 64, seed=seed + 1000)
                return train(TrainConfig(vp, seed=seed + 500), Coupling.paired(pairs),
                             run.base).params

            run.rect = self._cached(run, "rectify", go)
        return run

    def phased(self, seed):
        run = self.run(seed)
        if run.phased is None:
            vp = self.vp
            run.plan = make_phase_plan(vp, 4)
            run.phased = self._cached(run, "phased", lambda: train_phased(
                NetEps(run.base, vp), run.plan, run.data, TrainConfig(vp, seed=seed + 700),
                run.base).params)
        return run

    def distilled(self, seed):
        run = self.rectified(seed)
        if run.cd_rect_losses is None:
            vp = self.vp
            cfg = CDConfig(vp, seed=seed + 900)

            def cd(start):
                return consistency_distill(start, NetEps(start.copy(), vp), cfg, run.data)

            r = self._timed(run, "cd_rect", lambda: cd(run.rect))
            b = self._timed(run, "cd_base", lambda: cd(run.base))
            run.cd_rect_losses, run.cd_base_losses = r.losses, b.losses
            run.cd_rect = r.params
        return run


@pytest.fixture(scope="session")
def toylab():
    return ToyLab(os.environ.get("RECTLAB_TOY_CACHE"))


@pytest.fixture(scope="session")
def ring8_reference():
    return mixture_preset("ring8").sample(4096, np.random.default_rng(123))
