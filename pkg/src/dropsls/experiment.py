"""Experiment configuration, the 10-node chain plant, the Riccati baseline and
the offline-vs-online comparison pipeline."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bankio import save_bank
from .dropout import uniform_d_distribution
from .errors import ConfigError, ConvergenceError
from .operators import SystemModel
from .runtime import MODES, cost_metrics, fmt, rollout, write_trace_csv
from .synthesis import (
    ControllerBank,
    SolverSettings,
    certify_bank,
    synthesize_offline,
    synthesize_online_bank,
)

log = logging.getLogger(__name__)

# chain plant constants; the interior diagonal takes the "otherwise" value
CHAIN_GAIN = 1.2
ALPHA_NEIGHBOR = 0.4
ALPHA_OTHER = 0.2
ALPHA_END_DIAG = 0.6


def build_chain10(N=10) -> SystemModel:
    """Scalar-node chain ``x_i+ = 1.2 sum_{|i-j|<=2} a_ij x_j + 1.2 u_i``."""
    A = np.zeros((N, N))
    for i in range(N):
        for j in range(max(0, i - 2), min(N, i + 3)):
            alpha = ALPHA_NEIGHBOR if abs(i - j) == 1 else ALPHA_OTHER
            if i == j and i in (0, N - 1):
                alpha = ALPHA_END_DIAG
            A[i, j] = CHAIN_GAIN * alpha
    return SystemModel.scalar_subsystems(A, CHAIN_GAIN * np.eye(N))


@dataclass
class OracleResult:
    K: np.ndarray  # u = -K x
    P: np.ndarray
    cost: float
    iterations: int
    residual: float


def dare_residual(P, A, B, Q, R):
    BtP = B.T @ P
    return Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A) - P


def dare_lqr_oracle(sys: SystemModel, Q, R, sigma=1.0, tol=1e-10, max_iter=100_000) -> OracleResult:
    """Centralized LQR by Riccati fixed-point iteration.

    The stationary per-step cost under noise covariance ``sigma^2 I`` is
    ``sigma^2 trace(P)``.
    """
    A, B = sys.A, sys.B
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    P = Q.copy()
    for it in range(1, max_iter + 1):
        BtP = B.T @ P
        P = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        P = 0.5 * (P + P.T)
        res = float(np.abs(dare_residual(P, A, B, Q, R)).max())
        if res <= tol:
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return OracleResult(K, P, float(sigma ** 2 * np.trace(P)), it, res)
        if not np.all(np.isfinite(P)):
            break
    raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} iterations")


# ---------------------------------------------------------------- config

DEFAULT_SCENARIOS = [[5], [3, 4, 5], [2, 3, 4, 5]]


@dataclass
class ExperimentConfig:
    plant: object = "chain10"
    T: int = 20
    T_sim: int = 100
    seeds: list = field(default_factory=lambda: list(range(10)))
    sigma: float = 1.0
    x0: list | None = None
    scenarios: list = field(default_factory=lambda: [list(s) for s in DEFAULT_SCENARIOS])
    d_min: int | None = None
    Q: object = 1.0
    R: object = 1.0
    solver: dict = field(default_factory=lambda: dataclasses.asdict(SolverSettings()))
    lambda_interval: list = field(default_factory=lambda: [0.01, 0.99])
    lambda_tol: float = 1e-3
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self):
        if not (isinstance(self.T, int) and self.T >= 1):
            raise ConfigError(f"T must be a positive integer, got {self.T!r}")
        if not (isinstance(self.T_sim, int) and self.T_sim >= 1):
            raise ConfigError(f"T_sim must be a positive integer, got {self.T_sim!r}")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of integers")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        if not self.scenarios or not all(isinstance(s, list) and s for s in self.scenarios):
            raise ConfigError("scenarios must be a nonempty list of nonempty radius lists")
        lo, hi = self.lambda_interval
        if not 0 < lo < hi < 1:
            raise ConfigError(f"lambda_interval must satisfy 0 < lo < hi < 1, got {self.lambda_interval}")
        unknown = set(self.solver) - {f.name for f in dataclasses.fields(SolverSettings)}
        if unknown:
            raise ConfigError(f"unknown solver keys: {', '.join(sorted(unknown))}")
        sys = self.system()
        if self.x0 is not None and len(self.x0) != sys.n:
            raise ConfigError(f"x0 has {len(self.x0)} entries, plant has {sys.n} states")
        self.weights(sys)
        for s in self.scenarios:
            if self.d_min is not None and self.d_min > min(s):
                raise ConfigError(f"d_min={self.d_min} exceeds the smallest radius of scenario {s}")

    def system(self) -> SystemModel:
        if self.plant == "chain10":
            return build_chain10()
        if isinstance(self.plant, dict):
            keys = {"A", "B", "state_partition", "input_partition"}
            if set(self.plant) != keys:
                raise ConfigError(f"explicit plant needs exactly the keys {sorted(keys)}")
            try:
                return SystemModel(np.array(self.plant["A"], dtype=float), np.array(self.plant["B"], dtype=float),
                                   self.plant["state_partition"], self.plant["input_partition"])
            except ValueError as exc:
                raise ConfigError(f"invalid plant: {exc}") from exc
        raise ConfigError(f"unknown plant {self.plant!r}")

    def weights(self, sys: SystemModel):
        """Cost matrices ``(Q, R)``; a scalar means a multiple of the identity."""
        out = []
        for name, val, dim in (("Q", self.Q, sys.n), ("R", self.R, sys.p)):
            M = val * np.eye(dim) if np.isscalar(val) else np.array(val, dtype=float)
            if M.shape != (dim, dim) or not np.allclose(M, M.T):
                raise ConfigError(f"{name} must be a symmetric {dim}x{dim} matrix")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ConfigError(f"{name} must be positive definite")
            out.append(M)
        return tuple(out)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(**self.solver)


def psd_sqrt(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def scenario_name(d_values) -> str:
    return "d" + "".join(str(d) for d in sorted(set(d_values)))


# ---------------------------------------------------------------- pipeline

def synthesize_banks(cfg: ExperimentConfig, modes=MODES) -> dict:
    """Banks keyed by ``(scenario name, mode)`` for every configured scenario."""
    sys = cfg.system()
    Q, R = cfg.weights(sys)
    Qh, Rh = psd_sqrt(Q), psd_sqrt(R)
    settings = cfg.solver_settings()
    banks = {}
    for d_values in cfg.scenarios:
        name = scenario_name(d_values)
        dist = uniform_d_distribution(sys.N, d_values, cfg.d_min)
        for mode in modes:
            synth = synthesize_offline if mode == "offline" else synthesize_online_bank
            log.info("synthesizing %s bank for scenario %s", mode, name)
            banks[(name, mode)] = synth(sys, dist.topology, dist, Qh, Rh, cfg.T,
                                        tuple(cfg.lambda_interval), cfg.lambda_tol, settings)
    return banks


def simulate_banks(cfg: ExperimentConfig, banks: dict, out: Path | None = None, seed_offset=0):
    """Paired rollouts of every bank; returns ``{(scenario, mode): (traces, metrics)}``."""
    results = {}
    if out is not None:
        (out / "traces").mkdir(parents=True, exist_ok=True)
    for (name, mode), bank in banks.items():
        traces = []
        for s in cfg.seeds:
            seed = s + seed_offset
            tr = rollout(bank, mode, sigma=cfg.sigma, T_sim=cfg.T_sim,
                         noise_seed=seed, dropout_seed=seed, x0=cfg.x0)
            traces.append(tr)
            if out is not None:
                write_trace_csv(tr, out / "traces" / f"{name}_{mode}_seed{seed}.csv")
        results[(name, mode)] = (traces, cost_metrics(traces))
    return results


def write_metrics(results, out: Path, seeds):
    """``metrics.csv`` (per-step series) and ``summary.csv`` (total costs)."""
    with (out / "metrics.csv").open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["scenario", "mode", "t", "mean_cost", "moving_average"])
        for (name, mode), (_, m) in results.items():
            for t, (c, M) in enumerate(zip(m.mean_per_step, m.moving_average)):
                wr.writerow([name, mode, t, fmt(c), fmt(M)])
    with (out / "summary.csv").open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["scenario", "mode", "seed", "total_cost"])
        for (name, mode), (_, m) in results.items():
            for s, tot in zip(seeds, m.totals):
                wr.writerow([name, mode, s, fmt(tot)])
            wr.writerow([name, mode, "mean", fmt(m.mean_total)])


def bank_record(bank: ControllerBank) -> dict:
    cert = certify_bank(bank)
    return {"lambda": bank.lam, "bound": bank.bound, "worst_residual": cert.worst_residual,
            "certified": cert.certified}


def run_experiment(cfg: ExperimentConfig, out=None, modes=MODES, seed_offset=0) -> dict:
    """Synthesize, certify, simulate and write every artifact of one run.

    The manifest is written last.
    """
    t0 = time.perf_counter()
    out = Path(cfg.output_dir if out is None else out)
    (out / "banks").mkdir(parents=True, exist_ok=True)
    banks = synthesize_banks(cfg, modes)
    for (name, mode), bank in banks.items():
        save_bank(bank, out / "banks" / f"{name}_{mode}.bank")
    results = simulate_banks(cfg, banks, out, seed_offset)
    seeds = [s + seed_offset for s in cfg.seeds]
    write_metrics(results, out, seeds)

    sys = cfg.system()
    Q, R = cfg.weights(sys)
    try:
        oracle = dare_lqr_oracle(sys, Q, R, cfg.sigma)
        oracle_rec = {"stationary_cost": oracle.cost, "iterations": oracle.iterations}
    except ConvergenceError as exc:
        oracle_rec = {"error": str(exc)}

    scen = {}
    for (name, mode), bank in banks.items():
        rec = bank_record(bank)
        rec["mean_total_cost"] = results[(name, mode)][1].mean_total
        scen.setdefault(name, {})[mode] = rec
    manifest = {
        "format": "dropsls-manifest",
        "version": 1,
        "config": cfg.to_dict(),
        "modes": list(modes),
        "seed_offset": seed_offset,
        "scenarios": scen,
        "oracle": oracle_rec,
        "wall_clock_s": time.perf_counter() - t0,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"banks": banks, "results": results, "manifest": manifest, "out": out}
