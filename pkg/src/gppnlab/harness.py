"""Training loop, %Optimal/%Success evaluation, sweeps and reporting."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .dataset import PlanningDataset
from .exceptions import ConfigError, ContractError
from .mazes import make_rng
from .planners import PlannerConfig, forward, init_params, state_logits

logger = logging.getLogger(__name__)

NOT_REACHED = "--"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch: int = 32
    clip: float = 40.0
    epochs: int = 30
    seed: int = 0
    dtype: str = "float32"
    # evaluate %Opt/%Suc on the training split after every epoch
    train_metrics: bool = True

    def __post_init__(self):
        if self.batch < 1 or self.epochs < 1:
            raise ConfigError("batch and epochs must be positive")
        if not self.clip > 0:
            raise ConfigError(f"clip must be positive, got {self.clip}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    val_loss: float
    train_pct_opt: float
    train_pct_suc: float
    val_pct_opt: float
    val_pct_suc: float
    seconds: float


@dataclass
class TrainResult:
    params: Dict[str, ad.Tensor]
    reports: List[EpochReport] = field(default_factory=list)
    best_epoch: int = 0
    status: str = "ok"


# -- metrics -----------------------------------------------------------------

def rollout_metrics(dataset: PlanningDataset, actions: Sequence[np.ndarray], max_steps=None):
    """(%Opt, %Suc) of greedy policies, one ``(S,)`` action array per sample.

    Every state is rolled out for at most ``4 m^2`` steps; the goal counts
    as an optimal success of length 0.
    """
    if len(actions) != len(dataset):
        raise ContractError("one action array per sample is required")
    if len(dataset) == 0:
        raise ContractError("cannot evaluate an empty dataset")
    cap = 4 * dataset.m ** 2 if max_steps is None else max_steps
    nxt_parts, dist_parts, goals = [], [], []
    off = 0
    for s, act in zip(dataset.samples, actions):
        succ = s.space.successors
        act = np.asarray(act, dtype=np.int64)
        if act.shape != (len(succ),):
            raise ContractError(f"expected {len(succ)} actions, got shape {act.shape}")
        act = np.clip(act, 0, succ.shape[1] - 1)
        nxt = succ[np.arange(len(succ)), act] + off
        g = s.goal_index + off
        nxt[g - off] = g
        nxt_parts.append(nxt)
        dist_parts.append(np.asarray(s.distances))
        goals.append(g)
        off += len(succ)
    nxt = np.concatenate(nxt_parts)
    dist = np.concatenate(dist_parts)
    is_goal = np.zeros(off, dtype=bool)
    is_goal[goals] = True
    reached = np.where(is_goal, 0, -1)
    cur = np.arange(off)
    for t in range(1, cap + 1):
        cur = nxt[cur]
        hit = is_goal[cur] & (reached < 0)
        reached[hit] = t
        if (reached >= 0).all():
            break
    success = reached >= 0
    optimal = success & (reached == dist)
    return float(100.0 * optimal.mean()), float(100.0 * success.mean())


def greedy_actions(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=-1)


# -- optimisation -------------------------------------------------------------

def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_grad_norm(grads, max_norm: float):
    """Scale ``grads`` so their joint L2 norm is at most ``max_norm``.

    Returns ``(clipped, norm_before)``.
    """
    norm = global_norm(grads)
    if norm > max_norm and np.isfinite(norm):
        factor = max_norm / norm
        return [g * np.asarray(factor, dtype=g.dtype) for g in grads], norm
    return list(grads), norm


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update.astype(p.dtype)).astype(p.dtype)


# -- training -----------------------------------------------------------------

def planning_loss(logit_maps, labels: np.ndarray):
    """Masked cross-entropy over every labelled (non-wall, non-goal) state."""
    B, O, A, m, _ = logit_maps.shape
    flat = ad.reshape(ad.transpose(logit_maps, (0, 1, 3, 4, 2)), (B * O * m * m, A))
    lab = labels.reshape(-1)
    return ad.softmax_cross_entropy(flat, lab, lab >= 0)


def predict_logit_maps(params, cfg: PlannerConfig, inputs: np.ndarray, batch: int = 64) -> np.ndarray:
    outs = [forward(params, inputs[i:i + batch], cfg).data for i in range(0, len(inputs), batch)]
    return np.concatenate(outs)


def dataset_actions(logit_maps: np.ndarray, dataset: PlanningDataset):
    return [greedy_actions(state_logits(lm, s.space)) for lm, s in zip(logit_maps, dataset.samples)]


def evaluate_params(params, cfg: PlannerConfig, dataset: PlanningDataset, batch: int = 64):
    """Returns ``(loss, pct_opt, pct_suc)``."""
    dtype = next(iter(params.values())).dtype
    inputs = dataset.inputs(dtype)
    maps = predict_logit_maps(params, cfg, inputs, batch)
    loss = float(planning_loss(ad.Tensor(maps), dataset.label_grids()).data)
    opt, suc = rollout_metrics(dataset, dataset_actions(maps, dataset))
    return loss, opt, suc


def _check_kernel(cfg, ds, split):
    if ds is not None and ds.kernel is not cfg.kernel:
        raise ConfigError(f"{split} data uses {ds.kernel.name} but the model expects {cfg.kernel.name}")


def _snapshot(params):
    return {k: ad.Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


def train(cfg: PlannerConfig, tcfg: TrainConfig, train_ds: PlanningDataset,
          val_ds: Optional[PlanningDataset] = None, params=None) -> TrainResult:
    """Fit one planner; keeps the parameters with the best validation %Opt.

    A non-finite loss or gradient ends the run with ``status="diverged"``.
    """
    _check_kernel(cfg, train_ds, "training")
    _check_kernel(cfg, val_ds, "validation")
    if len(train_ds) == 0:
        raise ContractError("training set is empty")
    dtype = np.dtype(tcfg.dtype)
    rng = make_rng(tcfg.seed)
    if params is None:
        params = init_params(cfg, rng, dtype)
    names = list(params)
    plist = [params[k] for k in names]
    opt = Adam(plist, lr=tcfg.lr)
    inputs = train_ds.inputs(dtype)
    labels = train_ds.label_grids()
    n = len(train_ds)

    result = TrainResult(params=_snapshot(params))
    best = -math.inf
    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        losses, weights = [], []
        diverged = False
        for start in range(0, n, tcfg.batch):
            idx = np.sort(perm[start:start + tcfg.batch])
            for p in plist:
                p.grad = None
            with ad.Tape() as tape:
                loss = planning_loss(forward(params, inputs[idx], cfg), labels[idx])
            lval = float(loss.data)
            grads = tape.backward(loss, plist)
            grads, norm = clip_grad_norm(grads, tcfg.clip)
            if not (np.isfinite(lval) and np.isfinite(norm)):
                diverged = True
                break
            opt.step(grads)
            losses.append(lval)
            weights.append(len(idx))
        if diverged or not all(np.isfinite(p.data).all() for p in plist):
            logger.warning("%s K=%d F=%d diverged in epoch %d", cfg.arch, cfg.K, cfg.F, epoch)
            result.status = "diverged"
            break
        train_loss = float(np.average(losses, weights=weights))
        if tcfg.train_metrics:
            _, tr_opt, tr_suc = evaluate_params(params, cfg, train_ds)
        else:
            tr_opt = tr_suc = float("nan")
        if val_ds is not None and len(val_ds):
            val_loss, val_opt, val_suc = evaluate_params(params, cfg, val_ds)
        else:
            val_loss, val_opt, val_suc = float("nan"), tr_opt, tr_suc
        report = EpochReport(epoch, train_loss, val_loss, tr_opt, tr_suc, val_opt, val_suc,
                             time.perf_counter() - t0)
        result.reports.append(report)
        logger.info("%s epoch %d loss %.4f val %%Opt %.2f %%Suc %.2f (%.1fs)", cfg.arch, epoch,
                    train_loss, val_opt, val_suc, report.seconds)
        score = val_opt if np.isfinite(val_opt) else -train_loss
        if score > best:
            best = score
            result.best_epoch = epoch
            result.params = _snapshot(params)
    return result


# -- reporting ----------------------------------------------------------------

EPOCH_COLUMNS = ("epoch", "split", "loss", "pct_opt", "pct_suc", "seconds")
SWEEP_COLUMNS = ("arch", "K", "F", "seed", "test_pct_opt", "test_pct_suc", "status")


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6f}"
    return str(x)


def epoch_rows(reports: Sequence[EpochReport]):
    for r in reports:
        yield (r.epoch, "train", r.train_loss, r.train_pct_opt, r.train_pct_suc, r.seconds)
        yield (r.epoch, "val", r.val_loss, r.val_pct_opt, r.val_pct_suc, r.seconds)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_epoch_csv(path, reports):
    write_csv(path, EPOCH_COLUMNS, epoch_rows(reports))


def learning_speed(series, thresholds=(50, 75, 90, 95)) -> dict:
    """First epoch (1-based) whose validation %Opt reaches each threshold, else ``"--"``."""
    values = [r.val_pct_opt if isinstance(r, EpochReport) else float(r) for r in series]
    if not values:
        raise ContractError("learning_speed needs a non-empty series")
    out = {}
    for th in thresholds:
        out[th] = next((i + 1 for i, v in enumerate(values) if v >= th), NOT_REACHED)
    return out


def top_n_curve(scores: Sequence[float]) -> List[float]:
    """Mean of the ``n`` best scores for ``n = 1 .. len(scores)``."""
    ranked = sorted(scores, reverse=True)
    return [float(v) for v in np.cumsum(ranked) / np.arange(1, len(ranked) + 1)]


@dataclass
class SweepRow:
    arch: str
    K: int
    F: int
    seed: int
    test_pct_opt: Optional[float]
    test_pct_suc: Optional[float]
    status: str

    def as_row(self):
        opt = NOT_REACHED if self.test_pct_opt is None else self.test_pct_opt
        suc = NOT_REACHED if self.test_pct_suc is None else self.test_pct_suc
        return (self.arch, self.K, self.F, self.seed, opt, suc, self.status)


def sweep(arch: str, grid, tcfg: TrainConfig, splits: dict, hidden=None, kernel=None):
    """Train every ``(K, F)`` in ``grid``; returns ``(rows ranked by test %Opt, top-n curve)``.

    Diverged runs stay in the table as ``"--"`` rows and are left out of the curve.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep grid is empty")
    kernel = splits["train"].kernel if kernel is None else kernel
    rows = []
    for K, F in grid:
        cfg = PlannerConfig(arch=arch, K=K, F=F, hidden=hidden, kernel=kernel)
        res = train(cfg, tcfg, splits["train"], splits.get("val"))
        if res.status == "ok":
            _, opt, suc = evaluate_params(res.params, cfg, splits["test"])
            rows.append(SweepRow(cfg.arch, K, F, tcfg.seed, opt, suc, "ok"))
        else:
            rows.append(SweepRow(cfg.arch, K, F, tcfg.seed, None, None, res.status))
    ok = [r for r in rows if r.test_pct_opt is not None]
    ranked = sorted(ok, key=lambda r: -r.test_pct_opt) + [r for r in rows if r.test_pct_opt is None]
    curve = top_n_curve([r.test_pct_opt for r in ok])
    return ranked, curve


def seed_variance(cfg: PlannerConfig, tcfg: TrainConfig, train_ds, val_ds, n_seeds: int = 3,
                  seeds=None) -> dict:
    """Mean and sample standard deviation of final-epoch train/val %Opt over seeds."""
    seeds = list(range(tcfg.seed, tcfg.seed + n_seeds)) if seeds is None else list(seeds)
    if len(seeds) < 2:
        raise ConfigError("seed_variance needs at least two runs")
    train_opt, val_opt = [], []
    for s in seeds:
        res = train(cfg, TrainConfig(**{**tcfg.__dict__, "seed": s}), train_ds, val_ds)
        last = res.reports[-1] if res.reports else None
        train_opt.append(last.train_pct_opt if last else float("nan"))
        val_opt.append(last.val_pct_opt if last else float("nan"))
    return {
        "seeds": seeds,
        "train_pct_opt": train_opt,
        "val_pct_opt": val_opt,
        "train_mean": float(np.mean(train_opt)),
        "train_std": float(np.std(train_opt, ddof=1)),
        "val_mean": float(np.mean(val_opt)),
        "val_std": float(np.std(val_opt, ddof=1)),
    }

