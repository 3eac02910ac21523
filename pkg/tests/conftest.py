from __future__ import annotations

import dataclasses
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from promptrack import head as head_module
from promptrack.config import RunConfig
from promptrack.network import Network

torch.set_num_threads(1)

# Every head forward anywhere in the suite is checked against the filter
# identity h_cls = omega * z_cur recomputed outside the module.
HEAD_CHECKS = {"count": 0, "max_err": 0.0}
_original_forward = head_module.TrackingHead.forward


def _checked_forward(self, *args, **kwargs):
    out = _original_forward(self, *args, **kwargs)
    with torch.no_grad():
        ref = (out.omega.detach().double()[:, :, None, None] * out.z_cur.detach().double()).sum(dim=1)
        err = float((ref - out.h_cls.detach()).abs().max()) if ref.numel() else 0.0
    HEAD_CHECKS["count"] += 1
    HEAD_CHECKS["max_err"] = max(HEAD_CHECKS["max_err"], err)
    assert err <= 1e-6, f"h_cls deviates from omega * z_cur by {err}"
    return out


head_module.TrackingHead.forward = _checked_forward


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cfg() -> RunConfig:
    cfg = RunConfig()
    cfg.encoder.input_resolution = 36
    cfg.encoder.channels = 8
    cfg.data.frames = 12
    cfg.data.canvas = 96
    return cfg


@pytest.fixture(scope="session")
def small_net(small_cfg) -> Network:
    return Network(small_cfg).eval()


# --------------------------------------------------------------------------
# trained network shared by the acceptance and trained-behaviour tests

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@dataclasses.dataclass
class TrainedRun:
    directory: Path
    stage1: Network
    stage2: Network
    records: list[dict]
    seconds: float
    reused: bool


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory) -> TrainedRun:
    """Default-config two-stage training, or a previous run named by ``PROMPTRACK_RUN_DIR``."""
    from promptrack.training import run_training

    reuse = os.environ.get("PROMPTRACK_RUN_DIR")
    if reuse:
        d = Path(reuse)
        records = [json.loads(line) for line in (d / "train_log.jsonl").read_text().splitlines()]
        seconds = sum(max(r["elapsed"] for r in records if r["stage"] == s) for s in (1, 2))
        reused = True
    else:
        d = tmp_path_factory.mktemp("trained")
        t0 = time.perf_counter()
        _, records = run_training(RunConfig(), out_dir=d)
        seconds = time.perf_counter() - t0
        reused = False
    stage1, _ = Network.load(d / "stage1.ckpt")
    stage2, _ = Network.load(d / "stage2.ckpt")
    return TrainedRun(d, stage1, stage2, records, seconds, reused)


def pytest_collection_modifyitems(session, config, items):
    # acceptance checks run last so the filter-identity tally covers the whole suite
    items.sort(key=lambda item: "test_acceptance.py" in item.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
