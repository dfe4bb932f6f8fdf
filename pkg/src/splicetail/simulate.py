"""Data-generating processes and the Monte Carlo harness."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .distributions import GpdParams, gpd_quantile, splice_sample
from .estimate import CensoringSpec, FitOptions, PotThreshold, fit_pot, fit_splice
from .inference import attach_covariance, default_tau_grid, select_tau
from .panel import LinkConfig, PanelData, ThetaVector, link_eval

__all__ = [
    "ArParams",
    "DgpSpec",
    "McConfig",
    "McReport",
    "DGP1_THETA",
    "gen_covariate",
    "gen_dgp1",
    "gen_dgp2",
    "gen_dgp3",
    "generate",
    "replicate_rng",
    "run_replicate",
    "run_mc",
]

log = logging.getLogger(__name__)

DGP1_THETA = ThetaVector(0.0, [np.log(0.045), -0.5], [np.log(0.08), 0.2], [np.log(0.2), 1.0])


@dataclass(frozen=True)
class ArParams:
    """``x_t = a + b x_{t-1} + e_t``; ``scale`` is the noise std dev unless
    ``noise == "variance"``."""

    a: float = 0.2
    b: float = 0.5
    scale: float = 0.1
    noise: str = "std"
    burn_in: int = 200

    @property
    def noise_sd(self) -> float:
        return float(np.sqrt(self.scale)) if self.noise == "variance" else float(self.scale)

    @property
    def mean(self) -> float:
        return self.a / (1.0 - self.b)


@dataclass(frozen=True)
class DgpSpec:
    kind: str = "splice"
    T: int = 250
    I: int = 40
    theta_true: ThetaVector = DGP1_THETA
    c: float = 0.10
    contaminant_sigma: float = 0.08
    contaminant_xi: float = 0.1
    tls_beta: tuple[float, float] = (-np.log(0.2), -1.0)
    ar: ArParams = ArParams()

    def __post_init__(self):
        if self.kind not in ("splice", "contaminated", "tls"):
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        if not 0 < self.c < 1:
            raise ValueError("contamination rate must lie in (0, 1)")
        if not (self.contaminant_sigma > 0 and self.contaminant_xi > 0):
            raise ValueError("contaminant parameters must be positive")

    @classmethod
    def dgp(cls, number: int, **kw) -> "DgpSpec":
        return cls(kind={1: "splice", 2: "contaminated", 3: "tls"}[int(number)], **kw)

    @property
    def n(self) -> int:
        return self.T * self.I

    def xi_truth(self) -> np.ndarray:
        """True tail-shape regression coefficients (intercept, slopes)."""
        if self.kind == "tls":
            return -np.asarray(self.tls_beta, dtype=float)
        return self.theta_true.beta_xi.copy()

    def to_dict(self) -> dict:
        out = asdict(self)
        th = self.theta_true
        out["theta_true"] = {
            "mu0": th.mu0,
            "beta_s": th.beta_s.tolist(),
            "beta_sigma": th.beta_sigma.tolist(),
            "beta_xi": th.beta_xi.tolist(),
        }
        out["tls_beta"] = list(self.tls_beta)
        return out


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    """Independent stream for replicate ``b`` of master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))


def gen_covariate(T: int, ar: ArParams, rng: np.random.Generator) -> np.ndarray:
    """AR(1) path of length ``T`` started at the stationary mean after burn-in."""
    if T < 1:
        raise ValueError("T must be positive")
    e = rng.standard_normal(ar.burn_in + T) * ar.noise_sd
    x = np.empty(ar.burn_in + T)
    prev = ar.mean
    for t in range(x.size):
        prev = ar.a + ar.b * prev + e[t]
        x[t] = prev
    return x[ar.burn_in :]


def _panel_skeleton(spec: DgpSpec, rng):
    x = gen_covariate(spec.T, spec.ar, rng)
    time_ = np.repeat(np.arange(1, spec.T + 1), spec.I)
    entity = np.tile(np.arange(1, spec.I + 1), spec.T)
    X = np.repeat(x, spec.I)[:, None]
    return entity, time_, X


def gen_dgp1(spec: DgpSpec, rng: np.random.Generator) -> PanelData:
    """Draws from the splice regression at ``spec.theta_true``."""
    entity, time_, X = _panel_skeleton(spec, rng)
    op = link_eval(spec.theta_true, X)
    y = splice_sample(op, rng)
    meta = {"dgp": "I", "u": op.u, "notes": []}
    return PanelData(entity, time_, y, X, ("x1",), meta)


def gen_dgp2(spec: DgpSpec, rng: np.random.Generator) -> PanelData:
    """DGP I with the bottom ``c`` fraction replaced by a reflected GPD below ``t*``."""
    base = gen_dgp1(spec, rng)
    y = base.y.copy()
    t_star = float(np.quantile(y, spec.c))
    low = np.flatnonzero(y < t_star)
    z = rng.uniform(size=low.size)
    y[low] = t_star - gpd_quantile(z, GpdParams(spec.contaminant_xi, spec.contaminant_sigma))
    meta = dict(base.meta, dgp="II", t_star=t_star, contaminated=low, c=spec.c)
    return PanelData(base.entity, base.time, y, base.X, base.columns, meta)


def gen_dgp3(spec: DgpSpec, rng: np.random.Generator) -> PanelData:
    """Location-scale Student t with covariate-dependent degrees of freedom."""
    entity, time_, X = _panel_skeleton(spec, rng)
    x = X[:, 0]
    b0, b1 = spec.tls_beta
    nu = np.exp(b0 + b1 * x)
    s = np.exp(spec.theta_true.beta_s[0] + spec.theta_true.beta_s[1] * x)
    t = rng.standard_normal(x.size) / np.sqrt(rng.chisquare(nu) / nu)
    y = spec.theta_true.mu0 + s * t
    notes = []
    heavy = int(np.sum(nu <= 2.0))
    if heavy:
        notes.append(f"{heavy} observations with nu <= 2 (infinite variance)")
    meta = {"dgp": "III", "nu": nu, "notes": notes}
    return PanelData(entity, time_, y, X, ("x1",), meta)


def generate(spec: DgpSpec, rng: np.random.Generator) -> PanelData:
    return {"splice": gen_dgp1, "contaminated": gen_dgp2, "tls": gen_dgp3}[spec.kind](spec, rng)


# --------------------------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class McConfig:
    estimators: tuple[str, ...] = ("mle", "wmle")
    B: int = 200
    seed: int = 0
    tau_grid: tuple[float, ...] = tuple(float(t) for t in default_tau_grid())
    # fixed censoring level instead of AD^m selection
    tau: float | None = None
    cwmle_degree: int = 1
    pot_degree: int = 2
    level: float = 0.95
    power_halfwidth: float = 1.0
    power_points: int = 21
    workers: int = 1

    def __post_init__(self):
        if self.B < 2:
            raise ValueError("B must be at least 2")
        for e in self.estimators:
            _parse_estimator(e)


def _parse_estimator(label: str):
    label = label.lower()
    if label in ("mle", "wmle", "cwmle"):
        return label, None
    for prefix, kind in (("cpot", "conditional"), ("pot", "unconditional")):
        if label.startswith(prefix) and label[len(prefix) :].isdigit():
            return "pot", (kind, int(label[len(prefix) :]) / 100.0)
    raise ValueError(f"unknown estimator {label!r}")


def power_grid(truth: float, halfwidth: float, points: int) -> np.ndarray:
    return np.linspace(truth - halfwidth, truth + halfwidth, points)


def _fit_estimator(label, panel, cfg: McConfig):
    kind, arg = _parse_estimator(label)
    link = LinkConfig.full(panel.d)
    tau = None
    if kind == "mle":
        fit = fit_splice(panel, link)
        attach_covariance(fit, panel, "hessian")
    elif kind in ("wmle", "cwmle"):
        mode = "unconditional" if kind == "wmle" else "conditional"
        if cfg.tau is not None:
            cens = (
                CensoringSpec.unconditional(panel, cfg.tau)
                if mode == "unconditional"
                else CensoringSpec.conditional(panel, cfg.tau, cfg.cwmle_degree)
            )
            fit = fit_splice(panel, link, cens)
            tau = cfg.tau
        else:
            sel = select_tau(panel, link, mode, cfg.tau_grid, degree=cfg.cwmle_degree)
            fit = sel.best_fit
            tau = sel.tau_opt
        attach_covariance(fit, panel, "sandwich")
    else:
        th_kind, level = arg
        fit = fit_pot(panel, link, PotThreshold(th_kind, level, cfg.pot_degree))
        attach_covariance(fit, panel, "hessian")
    return fit, tau


def run_replicate(spec: DgpSpec, cfg: McConfig, b: int) -> dict:
    """Generate replicate ``b`` and fit every estimator; failures are recorded, not raised."""
    rng = replicate_rng(cfg.seed, b)
    panel = generate(spec, rng)
    truth = spec.xi_truth()
    out = {"replicate": b, "estimators": {}}
    from scipy.stats import norm

    z = norm.ppf(0.5 + cfg.level / 2.0)
    for label in cfg.estimators:
        t0 = time.perf_counter()
        try:
            fit, tau = _fit_estimator(label, panel, cfg)
            idx = fit.xi_index
            est = fit.theta_hat[idx]
            se = fit.std_errors()[idx]
            # boundary fits (xi -> 0) keep a usable estimate but can have a flat,
            # singular information matrix; they count for bias/RMSE only
            rec = {
                "ok": bool(fit.converged and np.all(np.isfinite(est))),
                "inference_ok": bool(np.all(np.isfinite(se)) and np.all(se > 0)),
                "estimate": est.tolist(),
                "se": se.tolist(),
                "ci_lo": (est - z * se).tolist(),
                "ci_hi": (est + z * se).tolist(),
                "tau": tau,
                "converged": fit.converged,
                "power": [
                    (np.abs(est[j] - power_grid(truth[j], cfg.power_halfwidth, cfg.power_points)) / se[j] > z).tolist()
                    for j in range(len(idx))
                ],
            }
        except Exception as exc:  # noqa: BLE001 - replicate failures are isolated
            rec = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        rec["seconds"] = time.perf_counter() - t0
        out["estimators"][label] = rec
    return out


def _replicate_job(args):
    spec, cfg, b = args
    return run_replicate(spec, cfg, b)


@dataclass
class McReport:
    spec: dict
    config: dict
    B: int
    truth: list
    table: dict = field(default_factory=dict)
    replicates: list = field(default_factory=list, repr=False)

    def rows(self):
        """Flat per-estimator, per-coefficient summary rows."""
        for label, per in self.table.items():
            for m in per["coefficients"]:
                yield {"estimator": label, "coefficient": m["name"], **{k: v for k, v in m.items() if k not in ("name", "power")}}

    def to_dict(self, include_replicates: bool = False) -> dict:
        out = {"spec": self.spec, "config": self.config, "B": self.B, "truth": self.truth, "table": self.table}
        if include_replicates:
            out["replicates"] = self.replicates
        return out


def summarize(replicates: list, truth, cfg: McConfig) -> dict:
    truth = np.asarray(truth, dtype=float)
    table = {}
    for label in cfg.estimators:
        recs = [r["estimators"][label] for r in replicates]
        ok = [r for r in recs if r.get("ok")]
        inf = [r for r in ok if r["inference_ok"]]
        entry = {
            "n_ok": len(ok),
            "n_failed": len(recs) - len(ok),
            "n_inference": len(inf),
            "seconds": float(sum(r["seconds"] for r in recs)),
            "coefficients": [],
        }
        taus = [r["tau"] for r in ok if r.get("tau") is not None]
        if taus:
            entry["tau_opt"] = taus
        for j, beta in enumerate(truth):
            m = {"name": f"beta_xi_{j}", "truth": float(beta)}
            entry["coefficients"].append(m)
            if ok:
                est = np.array([r["estimate"][j] for r in ok])
                m["bias"] = float(np.mean(est - beta))
                m["rmse"] = float(np.sqrt(np.mean(((est - beta) / abs(beta)) ** 2)))
            if inf:
                lo = np.array([r["ci_lo"][j] for r in inf])
                hi = np.array([r["ci_hi"][j] for r in inf])
                rej = np.array([r["power"][j] for r in inf], dtype=float)
                m["coverage"] = float(np.mean((lo <= beta) & (beta <= hi)))
                m["median_length"] = float(np.median(hi - lo))
                m["power"] = {
                    "h0": power_grid(beta, cfg.power_halfwidth, cfg.power_points).tolist(),
                    "rejection_rate": rej.mean(axis=0).tolist(),
                }
        table[label] = entry
    return table


def default_workers() -> int:
    return int(os.environ.get("SPLICETAIL_WORKERS", "1"))


def run_mc(spec: DgpSpec, cfg: McConfig, progress=None) -> McReport:
    """Run ``cfg.B`` replicates and aggregate bias, relative RMSE, coverage, CI length and power.

    Replicate ``b`` draws from its own stream, so results do not depend on
    the number of workers or on execution order.
    """
    jobs = [(spec, cfg, b) for b in range(cfg.B)]
    replicates = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            for rec in pool.map(_replicate_job, jobs):
                replicates.append(rec)
                if progress:
                    progress(rec)
    else:
        for job in jobs:
            rec = _replicate_job(job)
            replicates.append(rec)
            if progress:
                progress(rec)
    truth = spec.xi_truth().tolist()
    cfg_dict = asdict(cfg)
    return McReport(spec.to_dict(), cfg_dict, cfg.B, truth, summarize(replicates, truth, cfg), replicates)
