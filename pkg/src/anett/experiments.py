"""Scenario runner, convergence study and dataset/report file handling."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import grid, net, phantoms
from .regularizer import NetworkPrior, RegParams, bregman_distance, reg_value
from .solver import TABLE1, SolverConfig, SolverError, admm_solve
from .tomo import Geometry, RadonOperator

log = logging.getLogger(__name__)

SCENARIOS = ("noise-free", "noisy-5pct", "adversarial", "convergence-study")
METHODS = ("fbp", "post", "anett")
OUTPUT_ENV = "ANETT_OUTPUT_DIR"
MANIFEST = "manifest.txt"


def default_output_dir(fallback="anett-out") -> Path:
    return Path(os.environ.get(OUTPUT_ENV, fallback))


# -- dataset files --------------------------------------------------------------


def write_dataset(out_dir, master_seed: int, counts=phantoms.DEFAULT_COUNTS, n: int = 128) -> Path:
    """Write every phantom as a grid file plus a manifest (path, seed, split)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    streams = phantoms.split_seeds(master_seed)
    lines = [f"# master_seed {master_seed} n {n}", "path seed split"]
    for split, count in zip(phantoms.SPLITS, counts):
        for i in range(count):
            ss = phantoms.phantom_seed(streams[split], i)
            img = phantoms.random_phantom(np.random.default_rng(ss), n)
            rel = f"{split}/{i:05d}.grd"
            (out_dir / split).mkdir(exist_ok=True)
            grid.write_grid(img, out_dir / rel)
            lines.append(f"{rel} {phantoms.seed_label(ss)} {split}")
    path = out_dir / MANIFEST
    path.write_text("\n".join(lines) + "\n")
    return path


def read_dataset(data_dir, split: str) -> np.ndarray:
    data_dir = Path(data_dir)
    manifest = data_dir / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest}")
    paths = []
    for line in manifest.read_text().splitlines():
        if not line or line.startswith("#") or line == "path seed split":
            continue
        rel, _, sp = line.split()
        if sp == split:
            paths.append(data_dir / rel)
    if not paths:
        raise ValueError(f"no {split} images listed in {manifest}")
    return np.stack([grid.read_grid(p) for p in paths])


# -- metrics --------------------------------------------------------------------


def flat_mask(u_true: np.ndarray, size: int = 5) -> np.ndarray:
    """Pixels inside the object whose ``size x size`` neighbourhood is constant."""
    hi = ndimage.maximum_filter(u_true, size=size, mode="constant")
    lo = ndimage.minimum_filter(u_true, size=size, mode="constant")
    return (hi == lo) & (u_true > 0)


def flat_variance(u: np.ndarray, u_true: np.ndarray, mask=None) -> float:
    """Variance of the reconstruction error over the flat region of the truth."""
    mask = flat_mask(u_true) if mask is None else mask
    if not mask.any():
        return float("nan")
    return float(np.var((u - u_true)[mask]))


def loglog_slope(x, y) -> float:
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


# -- configuration ----------------------------------------------------------------


@dataclass
class ScenarioConfig:
    scenario: str = "noise-free"
    ae_path: str = "ae.net"
    adapter_path: str | None = "adapter.net"
    data_dir: str = "data"
    out_dir: str | None = None
    n_angles: int = 60
    n_detectors: int | None = None
    n_test: int | None = None
    seed: int = 0
    noise_level: float = 0.05
    disc_radius: float = 0.08
    disc_intensity: float = 1.0
    disc_region_factor: float = 2.0
    workers: int = 1
    solver: dict = field(default_factory=dict)
    # convergence study
    levels: int = 5
    delta0: float = 0.05
    tau: float | None = None
    phantom_index: int = 0
    smoothing: float = 1e-6

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")

    def solver_config(self) -> SolverConfig:
        tag = "noisy-5pct" if self.scenario == "convergence-study" else self.scenario
        return SolverConfig.for_scenario(tag, **self.solver)

    def output_dir(self) -> Path:
        return Path(self.out_dir) if self.out_dir else default_output_dir()

    def geometry(self, n: int) -> Geometry:
        return Geometry(n=n, n_angles=self.n_angles, n_detectors=self.n_detectors)

    def load_models(self):
        for p in (self.ae_path, self.adapter_path):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"model file not found: {p}")
        theta = net.load_params(self.ae_path)
        kappa = net.load_params(self.adapter_path) if self.adapter_path else None
        return theta, kappa


# -- scenarios --------------------------------------------------------------------


@dataclass
class Report:
    scenario: str
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    FIELDS = ("phantom", "method", "psnr", "data_residual", "reg_value", "flat_variance", "disc_psnr")

    def lines(self) -> list[str]:
        out = [" ".join(self.FIELDS)]
        for row in self.rows:
            out.append(" ".join(str(row[f]) if f in ("phantom", "method") else repr(float(row[f])) for f in self.FIELDS))
        return out

    @classmethod
    def read(cls, path, scenario: str = "") -> "Report":
        """Parse a ``metrics.txt`` table written by :func:`run_scenario`."""
        lines = Path(path).read_text().splitlines()
        if not lines or tuple(lines[0].split()) != cls.FIELDS:
            raise ValueError(f"{path}: not a metrics table")
        rep = cls(scenario)
        for line in lines[1:]:
            vals = line.split()
            row = dict(zip(cls.FIELDS, vals))
            row["phantom"] = int(row["phantom"])
            for f in cls.FIELDS[2:]:
                row[f] = float(row[f])
            rep.rows.append(row)
        return rep

    def column(self, method: str, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows if r["method"] == method], dtype=float)

    def median(self, method: str, name: str) -> float:
        return float(np.median(self.column(method, name)))


def _measure(u_true, geom, cfg: ScenarioConfig, index: int):
    """Measured data for one phantom under the configured scenario."""
    y_clean = RadonOperator(geom).forward(u_true)
    if cfg.scenario == "noisy-5pct":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index, 5]))
        return phantoms.add_noise(y_clean, cfg.noise_level, rng)
    return y_clean


def _solve_one(args):
    index, u_true, cfg, theta, kappa = args
    geom = cfg.geometry(u_true.shape[0])
    op = RadonOperator(geom)
    prior = NetworkPrior(theta, kappa)
    scfg = cfg.solver_config()
    disc = None
    if cfg.scenario == "adversarial":
        center = phantoms.flattest_center(u_true, cfg.disc_radius)
        u_true = phantoms.add_disc(u_true, center, cfg.disc_radius, cfg.disc_intensity)
        disc = phantoms.disc_mask(u_true.shape[0], center, cfg.disc_region_factor * cfg.disc_radius)
    y = _measure(u_true, geom, cfg, index)
    u_fbp = op.pseudo_inverse(y)
    u_post = prior.network(u_fbp)
    u_anett, diag = admm_solve(y, op, prior, scfg, u0=u_post)
    mask = flat_mask(u_true)
    rp = RegParams(c=scfg.c)
    rows = []
    images = {"truth": u_true, "data": y}
    for method, u in (("fbp", u_fbp), ("post", u_post), ("anett", u_anett)):
        rows.append({
            "phantom": index,
            "method": method,
            "psnr": grid.psnr(u, u_true, 1.0),
            "data_residual": grid.l2_norm(op.forward(u) - y),
            "reg_value": reg_value(u, prior, rp),
            "flat_variance": flat_variance(u, u_true, mask),
            "disc_psnr": grid.psnr(u, u_true, 1.0, disc) if disc is not None else float("nan"),
        })
        images[method] = u
    return rows, images, diag


def _write_outputs(out_dir: Path, index, images, diag, geom):
    pdir = out_dir / f"phantom_{index:04d}"
    pdir.mkdir(parents=True, exist_ok=True)
    for name, img in images.items():
        extent = geom.sino_extent if name == "data" else None
        grid.write_grid(img, pdir / f"{name}.grd", extent)
    (pdir / "admm.log").write_text("\n".join(diag.lines()) + "\n")


def run_scenario(cfg: ScenarioConfig, test_images=None, models=None) -> Report:
    """FBP, post-processing and aNETT reconstructions for each test phantom.

    Writes images, per-phantom ADMM logs and ``metrics.txt`` into the output
    directory.  A phantom whose solve fails is listed in ``failures.txt``
    and the run continues.
    """
    if cfg.scenario == "convergence-study":
        raise ValueError("use convergence_study for the convergence scenario")
    theta, kappa = models if models is not None else cfg.load_models()
    if test_images is None:
        test_images = read_dataset(cfg.data_dir, "test")
    if cfg.n_test is not None:
        test_images = test_images[: cfg.n_test]
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(i, np.asarray(u, dtype=float), cfg, theta, kappa) for i, u in enumerate(test_images)]
    report = Report(cfg.scenario)

    def consume(i, result):
        if isinstance(result, Exception):
            report.failures.append((i, f"{type(result).__name__}: {result}"))
            log.warning("phantom %d failed: %s", i, result)
            return
        rows, images, diag = result
        report.rows.extend(rows)
        _write_outputs(out_dir, i, images, diag, cfg.geometry(images["truth"].shape[0]))

    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            futures = [pool.submit(_solve_one, job) for job in jobs]
            for job, fut in zip(jobs, futures):
                try:
                    consume(job[0], fut.result())
                except (SolverError, FloatingPointError, ValueError) as exc:
                    consume(job[0], exc)
    else:
        for job in jobs:
            try:
                consume(job[0], _solve_one(job))
            except (SolverError, FloatingPointError, ValueError) as exc:
                consume(job[0], exc)

    (out_dir / "metrics.txt").write_text("\n".join(report.lines()) + "\n")
    fail_lines = ["phantom error"] + [f"{i} {msg}" for i, msg in report.failures]
    (out_dir / "failures.txt").write_text("\n".join(fail_lines) + "\n")
    return report


# -- convergence study ------------------------------------------------------------


@dataclass
class ConvergenceReport:
    levels: list = field(default_factory=list)  # relative noise level per leg
    delta: list = field(default_factory=list)  # ||y_delta - y||
    alpha: list = field(default_factory=list)
    error: list = field(default_factory=list)  # ||u_k - u_+||
    bregman: list = field(default_factory=list)
    data_residual: list = field(default_factory=list)
    fbp_residual: list = field(default_factory=list)
    exact_alpha: float = float("nan")
    exact_error: float = float("nan")
    exact_data_residual: float = float("nan")

    COLUMNS = ("levels", "delta", "alpha", "error", "bregman", "data_residual", "fbp_residual")

    @classmethod
    def read(cls, path) -> "ConvergenceReport":
        """Parse a ``convergence.txt`` table written by :func:`convergence_study`."""
        lines = Path(path).read_text().splitlines()
        rep = cls()
        for line in lines[1:]:
            parts = line.split()
            if parts[0] == "exact":
                rep.exact_alpha, rep.exact_error, rep.exact_data_residual = map(float, parts[2::2])
            elif parts[0].isdigit():
                for name, v in zip(cls.COLUMNS, parts[1:]):
                    getattr(rep, name).append(float(v))
        return rep

    @property
    def slope(self) -> float:
        return loglog_slope(self.delta, self.bregman)

    def lines(self) -> list[str]:
        out = ["k level delta alpha error bregman data_residual fbp_residual"]
        for k, rec in enumerate(zip(self.levels, self.delta, self.alpha, self.error, self.bregman,
                                    self.data_residual, self.fbp_residual)):
            out.append(f"{k} " + " ".join(repr(float(v)) for v in rec))
        out.append(f"exact alpha {self.exact_alpha!r} error {self.exact_error!r} "
                   f"data_residual {self.exact_data_residual!r}")
        out.append(f"slope {self.slope!r}")
        return out


def convergence_study(cfg: ScenarioConfig, test_images=None, models=None) -> ConvergenceReport:
    """Noise levels ``delta0 * 2**-k`` with ``alpha = tau * level``.

    Every leg scales one fixed standard-normal draw, solves the aNETT problem
    with the 5%-noise solver settings and records the distance and the
    smoothed absolute Bregman distance to the ground-truth phantom.  An
    exact-data leg at the smallest ``alpha`` closes the table.
    """
    theta, kappa = models if models is not None else cfg.load_models()
    if test_images is None:
        test_images = read_dataset(cfg.data_dir, "test")
    u_plus = np.asarray(test_images[cfg.phantom_index], dtype=float)
    geom = cfg.geometry(u_plus.shape[0])
    op = RadonOperator(geom)
    prior = NetworkPrior(theta, kappa)
    base = cfg.solver_config()
    tau = cfg.tau if cfg.tau is not None else TABLE1["noisy-5pct"]["alpha"] / cfg.delta0
    y = op.forward(u_plus)
    noise = np.random.default_rng(np.random.SeedSequence([cfg.seed, cfg.phantom_index, 7])).standard_normal(y.shape)
    rp = RegParams(c=base.c, smoothing=cfg.smoothing)
    rep = ConvergenceReport()
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    for k in range(cfg.levels + 1):
        level = cfg.delta0 * 2.0**-k
        y_k = y + level * y.mean() * noise
        alpha = tau * level
        u_k, diag = admm_solve(y_k, op, prior, base.with_(alpha=alpha))
        rep.levels.append(level)
        rep.delta.append(grid.l2_norm(y_k - y))
        rep.alpha.append(alpha)
        rep.error.append(grid.l2_norm(u_k - u_plus))
        rep.bregman.append(bregman_distance(u_k, u_plus, prior, rp))
        rep.data_residual.append(grid.l2_norm(op.forward(u_k) - y_k))
        rep.fbp_residual.append(grid.l2_norm(op.forward(op.pseudo_inverse(y_k)) - y_k))
        grid.write_grid(u_k, out_dir / f"leg_{k}.grd")
        log.info("leg %d level %.4g error %.6g bregman %.6g", k, level, rep.error[-1], rep.bregman[-1])
    rep.exact_alpha = rep.alpha[-1]
    u_0, _ = admm_solve(y, op, prior, base.with_(alpha=rep.exact_alpha))
    rep.exact_error = grid.l2_norm(u_0 - u_plus)
    rep.exact_data_residual = grid.l2_norm(op.forward(u_0) - y)
    grid.write_grid(u_0, out_dir / "exact.grd")
    (out_dir / "convergence.txt").write_text("\n".join(rep.lines()) + "\n")
    return rep


def config_summary(cfg: ScenarioConfig) -> list[str]:
    d = asdict(cfg)
    d["solver"] = asdict(cfg.solver_config())
    return [f"{k} = {v}" for k, v in d.items()]


def nonincreasing_within(values, tol: float) -> bool:
    """True if no later value exceeds an earlier one by more than ``tol`` relative."""
    vals = np.asarray(values, dtype=float)
    return all(vals[j] <= vals[i] * (1.0 + tol) for i in range(len(vals)) for j in range(i + 1, len(vals)))
