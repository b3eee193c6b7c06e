"""The sequential design loop: train surrogate, fit flow to the limit-state
posterior, select new designs, evaluate, re-estimate, stop.

Per-iteration randomness (surrogate init, flow fitting, selection, scale
calibration) is derived deterministically from the master seed, so a run is
fully reproducible. The failure-probability estimate reuses one fixed Monte
Carlo sample set across iterations (common random numbers), so the trace
reflects surrogate changes only.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import designer
from .flows import FlowTrainConfig, train_flow
from .mc import McEstimate, lhs_sample
from .posterior import LimitStatePosterior, default_lambda
from .problems import Problem
from .surrogate import Dataset, SurrogateModel, TrainConfig, train_surrogate

CRITERIA = ("nfbd", "nfbd-fg", "nfbd-ag")
INITIAL_DESIGNS = ("grid", "lhs")

# seed-derivation stages
_STAGE_INITIAL = 0
_STAGE_SURROGATE = 1
_STAGE_FLOW = 2
_STAGE_SELECT = 3
_STAGE_LAMBDA = 4
_STAGE_MC = 5


def derived_seed(master: int, t: int, stage: int) -> int:
    return int(np.random.SeedSequence([master, t, stage]).generate_state(1)[0])


@dataclass
class DnfConfig:
    n_max: int
    n0: int
    n_d: int
    criterion: str = "nfbd-ag"
    eps0: float = 0.5
    tolerance: float = 0.10          # 0 disables the early stop
    mc_n: int = 100_000
    lambda_frac: float = 0.05
    lambda_mc_n: int = 1024
    seed: int = 0
    initial_design: str = "grid"
    proposal_cap: int = designer.PROPOSAL_CAP
    min_stop_iteration: int = 3
    surrogate: TrainConfig = field(default_factory=TrainConfig)
    flow: FlowTrainConfig = field(default_factory=FlowTrainConfig)

    def __post_init__(self):
        if self.n0 < 2:
            raise ValueError("initial design needs at least 2 points")
        if not 1 <= self.n_d <= self.n_max - self.n0:
            raise ValueError("designs per iteration must satisfy 1 <= n_d <= n_max - n0")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.initial_design not in INITIAL_DESIGNS:
            raise ValueError(f"initial design must be one of {INITIAL_DESIGNS}")
        if self.eps0 <= 0 or self.mc_n < 1 or self.seed < 0:
            raise ValueError("eps0 must be positive, mc_n >= 1 and seed >= 0")


@dataclass
class IterationRecord:
    t: int
    cumulative_calls: int
    points: np.ndarray
    values: np.ndarray
    p_hat: float
    standard_error: float
    rel_change: float | None
    surrogate_loss: float
    lam: float | None = None
    flow_objective: float | None = None
    proposals_used: int | None = None
    shortfall: bool = False
    thresholds: np.ndarray | None = None


@dataclass
class RunTrace:
    problem: str
    criterion: str
    config: dict
    records: list
    final_estimate: float
    final_standard_error: float
    stop_reason: str
    total_calls: int
    final_model: SurrogateModel | None = None  # in-memory only, not serialized

    @property
    def iterations(self) -> int:
        return len(self.records) - 1  # record 0 is the initial design

    @property
    def estimates(self) -> np.ndarray:
        return np.array([r.p_hat for r in self.records])


def iteration_count(n_max: int, n0: int, n_d: int):
    """Number of adaptive iterations and the size of the final batch."""
    t_max = int(np.ceil((n_max - n0) / n_d))
    last = n_max - n0 - (t_max - 1) * n_d
    return t_max, last


def initial_design(problem: Problem, n0: int, mode: str, seed: int) -> Dataset:
    """Evaluate the starting design: an equally spaced lattice or an LHS."""
    if n0 < 2:
        raise ValueError("initial design needs at least 2 points")
    box = problem.box
    if mode == "grid":
        k = int(np.ceil(n0 ** (1.0 / box.dim)))
        while k > 2 and (k - 1) ** box.dim >= n0:
            k -= 1
        while k ** box.dim < n0:
            k += 1
        axes = [np.linspace(box.lower[j], box.upper[j], k) for j in range(box.dim)]
        lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
        X = lattice[:n0]
    elif mode == "lhs":
        X = lhs_sample(n0, box, seed)
    else:
        raise ValueError(f"unknown initial design mode {mode!r}")
    return Dataset(X, problem.g_batch(X))


def surrogate_estimate(model: SurrogateModel, samples: np.ndarray) -> McEstimate:
    vals = model.evaluate_batch(samples)
    return McEstimate.from_counts(int(np.sum(vals <= 0.0)), len(samples))


def run_dnf(problem: Problem, config: DnfConfig) -> RunTrace:
    """Run the adaptive loop until the budget or the tolerance stop."""
    seed = config.seed
    data = initial_design(problem, config.n0, config.initial_design,
                          derived_seed(seed, 0, _STAGE_INITIAL))
    model = train_surrogate(data, replace(config.surrogate,
                                          seed=derived_seed(seed, 0, _STAGE_SURROGATE)))
    mc_samples = problem.sample_inputs(config.mc_n, derived_seed(seed, 0, _STAGE_MC))
    est = surrogate_estimate(model, mc_samples)

    records = [IterationRecord(
        t=0, cumulative_calls=problem.calls, points=data.inputs.copy(),
        values=data.outputs.copy(), p_hat=est.estimate,
        standard_error=est.standard_error, rel_change=None,
        surrogate_loss=model.final_loss)]

    t_max, last_batch = iteration_count(config.n_max, config.n0, config.n_d)
    p_prev = est.estimate
    stop_reason = "budget-exhausted"

    for t in range(1, t_max + 1):
        n_t = config.n_d if t < t_max else last_batch
        lam = default_lambda(model, problem.sample_inputs, config.lambda_mc_n,
                             seed=derived_seed(seed, t, _STAGE_LAMBDA),
                             frac=config.lambda_frac)
        post = LimitStatePosterior(model, lam, problem.box)
        flow = train_flow(post.flow_target(), problem.dim,
                          replace(config.flow, seed=derived_seed(seed, t, _STAGE_FLOW)))
        batch = designer.select(config.criterion, flow, data, n_t, config.eps0,
                                problem.input_pdf, problem.box,
                                seed=derived_seed(seed, t, _STAGE_SELECT),
                                cap=config.proposal_cap)
        pts, thresholds = _drop_duplicates(batch.points, batch.thresholds, data)

        if len(pts):
            values = problem.g_batch(pts)
            data.add_batch(pts, values)
            model = train_surrogate(data, replace(config.surrogate,
                                                  seed=derived_seed(seed, t, _STAGE_SURROGATE)))
            est = surrogate_estimate(model, mc_samples)
        else:
            values = np.empty(0)
            est = McEstimate(p_prev, len(mc_samples),
                             int(round(p_prev * len(mc_samples))),
                             records[-1].standard_error)

        rel = None if p_prev == 0 else abs(est.estimate - p_prev) / p_prev
        records.append(IterationRecord(
            t=t, cumulative_calls=problem.calls, points=pts, values=values,
            p_hat=est.estimate, standard_error=est.standard_error, rel_change=rel,
            surrogate_loss=model.final_loss, lam=lam,
            flow_objective=float(flow.history[-1]) if flow.history is not None else None,
            proposals_used=batch.proposals_used, shortfall=batch.shortfall,
            thresholds=thresholds))
        p_prev = est.estimate
        if (rel is not None and t >= config.min_stop_iteration
                and rel < config.tolerance):
            stop_reason = "tolerance-met"
            break

    return RunTrace(problem=problem.name, criterion=config.criterion,
                    config=_config_dict(config), records=records,
                    final_estimate=p_prev,
                    final_standard_error=records[-1].standard_error,
                    stop_reason=stop_reason, total_calls=problem.calls,
                    final_model=model)


def _drop_duplicates(points, thresholds, data: Dataset):
    # exact duplicates carry no training information and are rejected by the
    # dataset, so they are filtered out (with their thresholds) pre-evaluation
    if len(points) == 0:
        return points, thresholds
    seen = {row.tobytes() for row in data.inputs}
    keep = []
    for i, row in enumerate(points):
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(i)
    if len(keep) == len(points):
        return points, thresholds
    idx = np.array(keep, dtype=int)
    return points[idx], None if thresholds is None else thresholds[idx]


def lhs_baseline(problem: Problem, n_max: int, n_mc: int, seed: int,
                 surrogate_config: TrainConfig | None = None) -> McEstimate:
    """Open-loop comparison: one surrogate on n_max LHS points, then MC."""
    cfg = surrogate_config or TrainConfig()
    X = lhs_sample(n_max, problem.box, derived_seed(seed, 0, _STAGE_INITIAL))
    data = Dataset(X, problem.g_batch(X))
    model = train_surrogate(data, replace(cfg, seed=derived_seed(seed, 0, _STAGE_SURROGATE)))
    mc_samples = problem.sample_inputs(n_mc, derived_seed(seed, 0, _STAGE_MC))
    return surrogate_estimate(model, mc_samples)


# -- trace serialization ------------------------------------------------------


def _config_dict(config: DnfConfig) -> dict:
    doc = asdict(config)
    doc["surrogate"]["hidden"] = list(doc["surrogate"]["hidden"])
    doc["flow"]["hidden"] = list(doc["flow"]["hidden"])
    return doc


def _record_to_dict(r: IterationRecord) -> dict:
    return {
        "t": r.t,
        "cumulative_calls": r.cumulative_calls,
        "points": np.asarray(r.points).tolist(),
        "values": np.asarray(r.values).tolist(),
        "p_hat": r.p_hat,
        "standard_error": r.standard_error,
        "rel_change": r.rel_change,
        "surrogate_loss": r.surrogate_loss,
        "lam": r.lam,
        "flow_objective": r.flow_objective,
        "proposals_used": r.proposals_used,
        "shortfall": r.shortfall,
        "thresholds": None if r.thresholds is None else np.asarray(r.thresholds).tolist(),
    }


def _record_from_dict(doc: dict) -> IterationRecord:
    return IterationRecord(
        t=doc["t"], cumulative_calls=doc["cumulative_calls"],
        points=np.array(doc["points"], dtype=float),
        values=np.array(doc["values"], dtype=float),
        p_hat=doc["p_hat"], standard_error=doc["standard_error"],
        rel_change=doc["rel_change"], surrogate_loss=doc["surrogate_loss"],
        lam=doc["lam"], flow_objective=doc["flow_objective"],
        proposals_used=doc["proposals_used"], shortfall=doc["shortfall"],
        thresholds=None if doc["thresholds"] is None
        else np.array(doc["thresholds"], dtype=float))


def trace_to_dict(trace: RunTrace) -> dict:
    return {
        "format": "flowdesign-trace",
        "version": 1,
        "problem": trace.problem,
        "criterion": trace.criterion,
        "config": trace.config,
        "records": [_record_to_dict(r) for r in trace.records],
        "final_estimate": trace.final_estimate,
        "final_standard_error": trace.final_standard_error,
        "stop_reason": trace.stop_reason,
        "total_calls": trace.total_calls,
    }


def trace_from_dict(doc: dict) -> RunTrace:
    if doc.get("format") != "flowdesign-trace":
        raise ValueError(f"not a trace document: {doc.get('format')!r}")
    return RunTrace(problem=doc["problem"], criterion=doc["criterion"],
                    config=doc["config"],
                    records=[_record_from_dict(r) for r in doc["records"]],
                    final_estimate=doc["final_estimate"],
                    final_standard_error=doc["final_standard_error"],
                    stop_reason=doc["stop_reason"], total_calls=doc["total_calls"])


def trace_json(trace: RunTrace) -> str:
    return json.dumps(trace_to_dict(trace), sort_keys=True, indent=1)


def trace_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "cumulative_calls", "p_hat", "rel_change", "criterion"])
    for r in trace.records:
        writer.writerow([r.t, r.cumulative_calls, repr(float(r.p_hat)),
                         "" if r.rel_change is None else repr(float(r.rel_change)),
                         trace.criterion])
    return buf.getvalue()


def save_trace(trace: RunTrace, json_path=None, csv_path=None) -> None:
    if json_path is not None:
        with open(json_path, "w") as fh:
            fh.write(trace_json(trace))
    if csv_path is not None:
        with open(csv_path, "w") as fh:
            fh.write(trace_csv(trace))


def load_trace(json_path) -> RunTrace:
    with open(json_path) as fh:
        return trace_from_dict(json.load(fh))
