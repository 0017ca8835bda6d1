"""Shared fixtures.

Trained models are expensive, so they are produced once with the default
training configuration and cached under ``$ANETT_ARTIFACTS`` (default
``<repo>/.artifacts``).  A cached model is reused only if its recorded
configuration matches.
"""
import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from anett import experiments, net, phantoms, training
from anett.tomo import Geometry

ARTIFACTS = Path(os.environ.get("ANETT_ARTIFACTS", Path(__file__).resolve().parents[1] / ".artifacts"))
MASTER_SEED = 0
N_TEST = 20
CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_theta():
    return net.init_params(net.DEFAULT_AE_ARCH, seed=3).astype(np.float64)


@pytest.fixture(scope="session")
def small_kappa():
    # nonzero head so the adapter is not the identity
    return net.init_params(net.DEFAULT_ADAPTER_ARCH, seed=4, zero_bias=False).astype(np.float64)


@pytest.fixture(scope="session")
def dataset():
    return phantoms.make_dataset(MASTER_SEED)


def _cached_train(name, config, train_fn):
    ARTIFACTS.mkdir(parents=True, exist_ok=True)
    path = ARTIFACTS / f"{name}.net"
    meta_path = ARTIFACTS / f"{name}.json"
    if path.exists() and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("config") == config:
            return net.load_params(path), meta
    t0 = time.perf_counter()
    result = train_fn()
    meta = {"config": config, "seconds": time.perf_counter() - t0, "best_epoch": result.best_epoch,
            "history": result.history}
    net.save_params(result.params, path)
    meta_path.write_text(json.dumps(meta))
    return result.params, meta


@pytest.fixture(scope="session")
def trained_ae(dataset):
    train, val, _ = dataset
    cfg = training.TrainConfig()
    config = {"master_seed": MASTER_SEED, "counts": list(phantoms.DEFAULT_COUNTS), **cfg.__dict__}
    return _cached_train("ae", config, lambda: training.train_autoencoder(train, val, cfg))


@pytest.fixture(scope="session")
def trained_adapter(dataset, trained_ae):
    train, val, _ = dataset
    theta, ae_meta = trained_ae
    cfg = training.TrainConfig()
    geom = Geometry()
    digest = hashlib.sha256((ARTIFACTS / "ae.net").read_bytes()).hexdigest()
    config = {"master_seed": MASTER_SEED, "ae_sha256": digest, "geometry": geom.to_dict(), **cfg.__dict__}

    def run():
        v, u = training.make_adapter_dataset(train, geom)
        val_v, val_u = training.make_adapter_dataset(val, geom)
        return training.train_adapter(v, u, val_v, val_u, theta, cfg)

    return _cached_train("adapter", config, run)


@pytest.fixture(scope="session")
def models(trained_ae, trained_adapter):
    return trained_ae[0], trained_adapter[0]


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _scenario_config(tag, out_dir):
    return experiments.ScenarioConfig(scenario=tag, ae_path=str(ARTIFACTS / "ae.net"),
                                      adapter_path=str(ARTIFACTS / "adapter.net"), out_dir=str(out_dir),
                                      seed=MASTER_SEED, n_test=N_TEST)


def _cached_run(tag, models, key_extra, run, read):
    out = ARTIFACTS / "runs" / tag
    key = {"ae": _digest(ARTIFACTS / "ae.net"), "adapter": _digest(ARTIFACTS / "adapter.net"), **key_extra}
    key_path = out / "key.json"
    if key_path.exists() and json.loads(key_path.read_text()).get("key") == key:
        return read(out), json.loads(key_path.read_text())
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    run(out)
    meta = {"key": key, "seconds": time.perf_counter() - t0}
    key_path.write_text(json.dumps(meta))
    return read(out), meta


@pytest.fixture(scope="session")
def scenario_report(models, dataset):
    """``get(tag)`` runs (or loads) a scenario on the first ``N_TEST`` test phantoms."""
    test_images = dataset[2]
    done = {}

    def get(tag):
        if tag not in done:
            cfg = _scenario_config(tag, ARTIFACTS / "runs" / tag)
            key = {k: v for k, v in cfg.__dict__.items() if k not in ("out_dir", "workers")}
            done[tag] = _cached_run(
                tag, models, key,
                lambda out: experiments.run_scenario(cfg, test_images, models),
                lambda out: experiments.Report.read(out / "metrics.txt", tag))
        return done[tag]

    return get


@pytest.fixture(scope="session")
def convergence_report(models, dataset):
    cfg = _scenario_config("convergence-study", ARTIFACTS / "runs" / "convergence-study")
    key = {k: v for k, v in cfg.__dict__.items() if k not in ("out_dir", "workers")}
    return _cached_run(
        "convergence-study", models, key,
        lambda out: experiments.convergence_study(cfg, dataset[2], models),
        lambda out: experiments.ConvergenceReport.read(out / "convergence.txt"))


@pytest.fixture
def criterion(request):
    """Record ``(number, passed, detail)`` for the end-of-run acceptance summary."""
    store = request.config.stash.setdefault(CRITERIA, {})

    def record(number, passed, detail):
        store[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(CRITERIA, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 11):
        if number in store:
            passed, detail = store[number]
            terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {number}: NOT RUN")
