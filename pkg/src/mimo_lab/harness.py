"""Experiment runner: entropy and BER curves with CSV and SVG output."""

from __future__ import annotations

import csv
import io
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .channel import (
    SIGMA2_CONVENTION,
    Constellation,
    CorrelationMatrix,
    make_channel,
    random_symbols,
    snr_to_sigma2,
    transmit,
    trial_rng,
)
from .demod import DemodOptions, demod_run
from .perturbation import chain_matrix_stats, discrepancy
from .replica import (
    ber_prediction_mixed,
    chain_state_evolution,
    mi_exact_chain_mc,
    mi_scalar_bpsk,
    transmit_mi,
)
from .spectral import Spectrum, tridiagonal_spectrum

EXPERIMENTS = ("EntropyVsSnr", "EntropyVsRho", "BerVsSnr", "BerVsRho", "SelfTest")
ENTROPY_METHODS = ("exact_mc", "matrix_integration", "perturbative", "identity")
BER_METHODS = ("population_dynamics", "matrix_integration", "demod_sim")
CSV_HEADER = ["x", "method", "y", "stderr", "n", "seed", "k", "l", "rho", "snr_db",
              "sigma2_convention"]
CHI_CONVENTION = "chi=10^(snr_db/10)"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_SELFTEST = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def parse_sweep(value) -> list[float]:
    """A number, a list, or an inclusive ``start:stop:step`` string."""
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) == 1:
            return [float(parts[0])]
        if len(parts) != 3:
            raise ConfigError(f"sweep {value!r} is not of the form start:stop:step")
        a, b, step = map(float, parts)
        if step == 0 or (b - a) / step < 0:
            raise ConfigError(f"sweep {value!r} has an inconsistent step")
        n = int(round((b - a) / step)) + 1
        return [round(a + i * step, 12) for i in range(n)]
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    raise ConfigError(f"cannot interpret sweep {value!r}")


@dataclass
class ExperimentConfig:
    experiment: str = "EntropyVsSnr"
    K: int = 440
    L: int = 400
    rho: object = 0.2
    snr_db: object = "0:10:2"
    trials: int = 128
    seed: int = 0
    methods: list = field(default_factory=list)
    output_dir: str = "results"
    chain_K: int = 64
    mc_samples: int = 20000
    pop_size: int = 100000
    tol: float = 1e-6
    max_iter: int = 200
    damping: float = 0.0
    max_trials: int = 1024
    workers: int = 1

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping of flat keys")
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def rho_grid(self) -> list[float]:
        return parse_sweep(self.rho)

    def snr_grid(self) -> list[float]:
        return parse_sweep(self.snr_db)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if self.trials < 1 or self.K < 1 or self.L < 1:
            raise ConfigError("K, L and trials must be positive")
        for name, grid in (("rho", self.rho_grid()), ("snr_db", self.snr_grid())):
            d = np.diff(grid)
            if len(grid) > 1 and not (np.all(d > 0) or np.all(d < 0)):
                raise ConfigError(f"{name} sweep must be strictly monotone")
        if any(abs(r) > 0.5 for r in self.rho_grid()):
            raise ConfigError("|rho| must not exceed 1/2")
        allowed = ENTROPY_METHODS if self.experiment.startswith("Entropy") else BER_METHODS
        if self.experiment != "SelfTest":
            bad = [m for m in self.methods if m not in allowed]
            if bad:
                raise ConfigError(f"methods {bad} not available for {self.experiment}")

    @property
    def beta(self) -> float:
        return self.K / self.L


@dataclass
class ResultRow:
    x: float
    method: str
    y: float
    stderr: float
    n: int
    seed: int
    k: int
    l: int
    rho: float
    snr_db: float
    sigma2_convention: str
    meta: dict = field(default_factory=dict)
    failed: bool = False


def _grid_points(cfg: ExperimentConfig) -> list[tuple[float, float, float]]:
    """(x, rho, snr_db) triples."""
    if cfg.experiment.endswith("VsSnr"):
        return [(s, r, s) for r in cfg.rho_grid() for s in cfg.snr_grid()]
    return [(r, r, s) for s in cfg.snr_grid() for r in cfg.rho_grid()]


def _entropy_point(cfg: ExperimentConfig, method: str, rho: float, snr: float, index: int):
    chi = 10.0 ** (snr / 10.0)
    ln2 = float(np.log(2.0))
    if method == "identity":
        return ln2 - mi_scalar_bpsk(chi), 0.0, 0
    if method == "matrix_integration":
        return ln2 - transmit_mi(tridiagonal_spectrum(rho), chi)[0], 0.0, 0
    if method == "perturbative":
        mi = transmit_mi(tridiagonal_spectrum(rho), chi)[0]
        return ln2 - mi - discrepancy(chi, rho, chain_matrix_stats()), 0.0, 0
    K = cfg.chain_K
    control = "taylor" if K % 2 == 0 else "zero"
    res = mi_exact_chain_mc(rho, chi, K, cfg.mc_samples, trial_rng(cfg.seed, index, 1),
                            boundary="ring", control=control)
    return ln2 - res.value, res.mc_stderr, res.n


def _demod_trials(cfg: ExperimentConfig, rho: float, snr: float, index: int):
    rr = CorrelationMatrix.identity(cfg.L)
    rt = CorrelationMatrix.tridiagonal(cfg.K, rho)
    s2 = snr_to_sigma2(snr, rr, rt)
    opts = DemodOptions(tol=cfg.tol, max_iter=cfg.max_iter, damping=cfg.damping)
    bers, iters, conv = [], [], 0
    target = cfg.trials
    while True:
        for t in range(len(bers), target):
            rng = trial_rng(cfg.seed, index, 2, t)
            ch = make_channel(cfg.L, cfg.K, rr, rt, s2, rng)
            b = random_symbols(cfg.K, Constellation.BPSK, rng)
            r = transmit(ch, b, rng)
            res = demod_run(ch, r, rt, opts)
            bers.append(float(np.mean(res.b_hat != b)))
            iters.append(res.iterations)
            conv += res.converged
        mean = float(np.mean(bers))
        se = float(np.std(bers, ddof=1) / np.sqrt(len(bers))) if len(bers) > 1 else 0.0
        if mean == 0 or se <= 0.2 * mean or target >= cfg.max_trials:
            break
        target = min(2 * target, cfg.max_trials)
    meta = {"converged": conv, "iterations_p95": float(np.percentile(iters, 95)),
            "sigma2": s2}
    return mean, se, len(bers), meta


def _ber_point(cfg: ExperimentConfig, method: str, rho: float, snr: float, index: int):
    rr = CorrelationMatrix.identity(cfg.L)
    rt = CorrelationMatrix.tridiagonal(cfg.K, rho)
    s2 = snr_to_sigma2(snr, rr, rt)
    if method == "population_dynamics":
        chi, mmse, ber = chain_state_evolution(rho, s2, cfg.beta, cfg.pop_size,
                                               seed=cfg.seed + index)
        se = float(np.sqrt(ber * (1 - ber) / cfg.pop_size))
        return ber, se, cfg.pop_size, {"chi_eff": chi, "mmse": mmse}
    if method == "matrix_integration":
        return ber_prediction_mixed(Spectrum.delta(1.0), tridiagonal_spectrum(rho), s2,
                                    cfg.beta), 0.0, 0, {}
    return _demod_trials(cfg, rho, snr, index)


def _run_point(args) -> ResultRow:
    cfg, method, (x, rho, snr), index = args
    entropy = cfg.experiment.startswith("Entropy")
    conv = CHI_CONVENTION if entropy else SIGMA2_CONVENTION
    k = cfg.chain_K if entropy and method == "exact_mc" else cfg.K
    row = ResultRow(x, method, float("nan"), float("nan"), 0, cfg.seed, k, cfg.L, rho, snr, conv)
    try:
        if entropy:
            y, se, n = _entropy_point(cfg, method, rho, snr, index)
            meta = {}
        else:
            y, se, n, meta = _ber_point(cfg, method, rho, snr, index)
        if not np.isfinite(y):
            raise FloatingPointError(f"non-finite result {y}")
        row.y, row.stderr, row.n, row.meta = float(y), float(se), int(n), meta
    except Exception as exc:  # a failed row is recorded and the run continues
        row.failed = True
        row.meta = {"error": f"{type(exc).__name__}: {exc}",
                    "traceback": traceback.format_exc(limit=3)}
    return row


def default_methods(cfg: ExperimentConfig) -> list[str]:
    if cfg.methods:
        return list(cfg.methods)
    if cfg.experiment == "EntropyVsSnr":
        return ["exact_mc", "matrix_integration", "identity"]
    if cfg.experiment == "EntropyVsRho":
        return ["exact_mc", "matrix_integration", "perturbative"]
    return ["population_dynamics", "matrix_integration", "demod_sim"]


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """Evaluate every (grid point, method) pair; rows sorted by (x, method, rho, snr)."""
    cfg.validate()
    if cfg.experiment == "SelfTest":
        raise ConfigError("use run_selftest for the SelfTest experiment")
    methods = default_methods(cfg)
    tasks = []
    for index, point in enumerate(_grid_points(cfg)):
        for m in methods:
            tasks.append((cfg, m, point, index))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_point, tasks))
    else:
        rows = [_run_point(t) for t in tasks]
    rows.sort(key=lambda r: (r.x, r.method, r.rho, r.snr_db))
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if not np.isfinite(v) else repr(v)
    return str(v)


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_HEADER])
    return buf.getvalue()


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_results(cfg: ExperimentConfig, rows: list[ResultRow], out_dir: str | Path,
                  stem: str | None = None) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or cfg.experiment
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(rows_to_csv(rows))
    meta = {
        "package": "mimo_lab", "version": __version__,
        "config": asdict(cfg),
        "tolerances": {"demod_tol": cfg.tol, "demod_max_iter": cfg.max_iter,
                       "extremum_gradient": 1e-10},
        "conventions": {"ber": SIGMA2_CONVENTION, "entropy": CHI_CONVENTION},
        "rows": [{"x": r.x, "method": r.method, "rho": r.rho, "snr_db": r.snr_db,
                  "failed": r.failed, **r.meta} for r in rows],
    }
    meta_path = out / f"{stem}.meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return csv_path, meta_path


# ---------------------------------------------------------------------------
# plotting


PLOT_SCRIPT = '''import csv
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
curves = defaultdict(list)
with open(path, newline="") as fh:
    for row in csv.DictReader(fh):
        if row["y"] != "nan":
            label = row["method"] + " rho=" + row["rho"] + " snr=" + row["snr_db"]
            curves[label].append((float(row["x"]), float(row["y"]), float(row["stderr"])))
fig, ax = plt.subplots(figsize=(6, 4.5))
for label, pts in sorted(curves.items()):
    pts.sort()
    x, y, e = zip(*pts)
    ax.errorbar(x, y, yerr=e, marker="o", ms=3, capsize=2, label=label)
ax.set_yscale("{yscale}")
ax.set_xlabel("{xlabel}")
ax.set_ylabel("{ylabel}")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".svg")
'''


def _axes_style(rows: list[dict], style: str | None):
    is_ber = style == "ber" if style else any(r["sigma2_convention"] == SIGMA2_CONVENTION for r in rows)
    x_is_snr = all(r["x"] == r["snr_db"] for r in rows)
    xlabel = "SNR [dB]" if x_is_snr else "rho"
    ylabel = "BER" if is_ber else "conditional entropy [nats]"
    return ("log" if is_ber else "linear"), xlabel, ylabel


def emit_plot(table: list[ResultRow] | list[dict] | str | Path, path: str | Path | None = None,
              style: str | None = None) -> tuple[Path, Path]:
    """Write an SVG (log y for BER) and a standalone plotting script next to it.

    The SVG is byte-stable for a fixed table: fixed hash salt, no date stamp.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(table, (str, Path)):
        csv_path = Path(table)
        rows = read_csv(csv_path)
    else:
        csv_path = None
        rows = [r if isinstance(r, dict) else {c: _fmt(getattr(r, c)) for c in CSV_HEADER}
                for r in table]
    if not rows:
        raise ValueError("cannot plot an empty table")
    if path is None:
        if csv_path is None:
            raise ValueError("an output path is required for in-memory tables")
        path = csv_path.with_suffix(".svg")
    path = Path(path)
    yscale, xlabel, ylabel = _axes_style(rows, style)
    curves: dict[str, list] = {}
    for r in rows:
        if r["y"] == "nan":
            continue
        label = f"{r['method']} rho={r['rho']} snr={r['snr_db']}"
        if r["x"] == r["rho"] and r["x"] != r["snr_db"]:
            label = f"{r['method']} snr={r['snr_db']}"
        elif r["x"] == r["snr_db"]:
            label = f"{r['method']} rho={r['rho']}"
        curves.setdefault(label, []).append((float(r["x"]), float(r["y"]), float(r["stderr"])))
    with matplotlib.rc_context({"svg.hashsalt": "mimo-lab", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for label in sorted(curves):
            pts = sorted(curves[label])
            x, y, e = zip(*pts)
            ax.errorbar(x, y, yerr=e, marker="o", ms=3, capsize=2, label=label)
        ax.set_yscale(yscale)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    script = path.with_name(path.stem + "_plot.py")
    script.write_text(PLOT_SCRIPT.format(csv=str(csv_path or path.with_suffix(".csv")),
                                         yscale=yscale, xlabel=xlabel, ylabel=ylabel))
    return path, script


# ---------------------------------------------------------------------------
# self test


def run_selftest() -> list[tuple[str, bool, str]]:
    """Fast invariant checks across modules: (name, passed, detail)."""
    from .demod import DemodState, demod_step2_chain
    from .ising_bp import (brute_force_moments, cavity_marginals, cholesky_chain,
                           exact_chain_marginals)
    from .perturbation import variance_gap
    from .spectral import arcsine_g_hat, transmit_g_hat_numeric

    out = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))

    check("scalar MI saturates at ln 2",
          lambda: (abs(mi_scalar_bpsk(50.0) - np.log(2)) < 1e-6, f"I1(50)={mi_scalar_bpsk(50.0)!r}"))

    def cholesky():
        err = 0.0
        for rho in np.linspace(-0.5, 0.5, 101):
            f = cholesky_chain(rho)
            err = max(err, abs(f.l0**2 + f.l1**2 - 1), abs(f.l0 * f.l1 - rho))
        return err < 1e-14, f"max error {err:.1e}"
    check("Cholesky identities", cholesky)

    def legendre():
        sp = tridiagonal_spectrum(0.2)
        lam = np.linspace(0.62, 1.38, 7)
        err = max(abs(transmit_g_hat_numeric(sp, v) - arcsine_g_hat(0.2, v)) for v in lam)
        return err < 1e-6, f"max error {err:.1e}"
    check("arcsine Legendre transform", legendre)

    def bp():
        rng = np.random.default_rng(0)
        err = 0.0
        for _ in range(5):
            K = int(rng.integers(2, 9))
            fact = cholesky_chain(rng.uniform(-0.5, 0.5))
            tb = rng.choice((-1.0, 1.0), K)
            eta = rng.standard_normal(K)
            chi = rng.uniform(0.1, 4)
            err = max(err, np.max(np.abs(cavity_marginals(chi, fact, tb, eta)
                                         - exact_chain_marginals(chi, fact, tb, eta))))
        return err < 1e-10, f"max error {err:.1e}"
    check("BP exact on chains", bp)

    def step2():
        rng = np.random.default_rng(1)
        K = 8
        st = DemodState(rng.uniform(-1, 1, K), rng.standard_normal(K), 1.0, 0.7, 1)
        rt = CorrelationMatrix.tridiagonal(K, 0.3)
        new = demod_step2_chain(st, rt)
        from .demod import tilted_chain
        f, J = tilted_chain(st, 0.3)
        m, _, _ = brute_force_moments(f, J)
        err = float(np.max(np.abs(new.m - m)))
        return err < 1e-12, f"max error {err:.1e}"
    check("demodulator chain moments", step2)

    def inequality():
        st = chain_matrix_stats()
        worst = max(discrepancy(c, 0.2, st, cst) for c in np.linspace(0, 10, 21)
                    for cst in Constellation)
        gap = min(variance_gap(c) for c in np.linspace(0, 10, 21))
        return worst <= 0 and gap >= 0, f"max discrepancy {worst:.2e}, min variance gap {gap:.2e}"
    check("fourth-order inequality", inequality)
    return out


def config_to_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(asdict(cfg), sort_keys=False)
