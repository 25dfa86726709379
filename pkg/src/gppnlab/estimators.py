"""scikit-learn style wrappers around the planners.

Estimators take a :class:`~gppnlab.dataset.PlanningDataset` as ``X``;
labels travel inside the samples, so ``y`` is accepted and ignored.

    >>> from gppnlab import GPPNPlanner, make_splits
    >>> splits = make_splits(9, "NEWS", (200, 50, 50), seed=0)
    >>> model = GPPNPlanner(K=10, F=5, hidden=32, epochs=5).fit(splits["train"], X_val=splits["val"])
    >>> model.score(splits["test"])  # %Optimal
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import harness
from .dataset import PlanningDataset
from .grid import Kernel
from .oracle import STAY, value_iteration
from .planners import PlannerConfig, load_checkpoint, save_checkpoint, state_logits


def check_planning_data(X, kernel=None, name="X") -> PlanningDataset:
    """Validate estimator input: a non-empty dataset on the expected kernel."""
    if not isinstance(X, PlanningDataset):
        raise TypeError(f"{name} must be a PlanningDataset, got {type(X).__name__}")
    if len(X) == 0:
        raise ValueError(f"{name} contains no samples")
    if kernel is not None and X.kernel is not Kernel.parse(kernel):
        raise ValueError(f"{name} uses the {X.kernel.name} kernel, expected {Kernel.parse(kernel).name}")
    return X


class _PlannerMixin:
    """Shared prediction and scoring given ``_state_logits``."""

    def decision_function(self, X):
        """Per-sample ``(S, A)`` action logits in ``enumerate_states`` order."""
        check_is_fitted(self)
        X = check_planning_data(X, self.kernel)
        return self._state_logits(X)

    def predict(self, X):
        """Per-sample greedy actions, ``(S,)`` each, ties to the lowest index."""
        return [harness.greedy_actions(z) for z in self.decision_function(X)]

    def evaluate(self, X):
        """``{"pct_opt": ..., "pct_suc": ...}`` over every state of every sample."""
        X = check_planning_data(X, self.kernel)
        opt, suc = harness.rollout_metrics(X, self.predict(X))
        return {"pct_opt": float(opt), "pct_suc": float(suc)}

    def score(self, X, y=None):
        return self.evaluate(X)["pct_opt"]


class NeuralPlanner(_PlannerMixin, BaseEstimator):
    arch = None

    def __init__(self, K=20, F=3, hidden=None, kernel="NEWS", lr=1e-3, batch_size=32,
                 clip=40.0, epochs=30, random_state=0, dtype="float32"):
        self.K = K
        self.F = F
        self.hidden = hidden
        self.kernel = kernel
        self.lr = lr
        self.batch_size = batch_size
        self.clip = clip
        self.epochs = epochs
        self.random_state = random_state
        self.dtype = dtype

    def _planner_config(self) -> PlannerConfig:
        return PlannerConfig(arch=self.arch, K=self.K, F=self.F, hidden=self.hidden, kernel=self.kernel)

    def _train_config(self) -> harness.TrainConfig:
        return harness.TrainConfig(lr=self.lr, batch=self.batch_size, clip=self.clip,
                                   epochs=self.epochs, seed=self.random_state, dtype=self.dtype)

    def fit(self, X, y=None, X_val=None):
        """Train on ``X``; with ``X_val`` keep the epoch with the best validation %Opt.

        A diverged run leaves ``status_ == "diverged"`` and the best
        parameters seen before the failure.
        """
        cfg = self._planner_config()
        X = check_planning_data(X, cfg.kernel)
        if X_val is not None:
            X_val = check_planning_data(X_val, cfg.kernel, "X_val")
        result = harness.train(cfg, self._train_config(), X, X_val)
        self.config_ = cfg
        self.params_ = result.params
        self.history_ = result.reports
        self.best_epoch_ = result.best_epoch
        self.status_ = result.status
        return self

    def logit_maps(self, X):
        check_is_fitted(self)
        X = check_planning_data(X, self.kernel)
        return harness.predict_logit_maps(self.params_, self.config_, X.inputs(np.dtype(self.dtype)))

    def _state_logits(self, X):
        maps = harness.predict_logit_maps(self.params_, self.config_, X.inputs(np.dtype(self.dtype)))
        return [state_logits(lm, s.space) for lm, s in zip(maps, X.samples)]

    def save(self, path):
        check_is_fitted(self)
        save_checkpoint(path, self.config_, self.params_,
                        extra={"best_epoch": self.best_epoch_, "status": self.status_})

    @staticmethod
    def load(path) -> "NeuralPlanner":
        return load_planner(path)


class VINPlanner(NeuralPlanner):
    arch = "VIN"


class GPPNPlanner(NeuralPlanner):
    arch = "GPPN"


class HyperVINPlanner(NeuralPlanner):
    arch = "HYPERVIN"


ESTIMATORS = {"VIN": VINPlanner, "GPPN": GPPNPlanner, "HYPERVIN": HyperVINPlanner}


def load_planner(path) -> NeuralPlanner:
    cfg, params, header = load_checkpoint(path)
    est = ESTIMATORS[cfg.arch](K=cfg.K, F=cfg.F, hidden=cfg.hidden, kernel=cfg.kernel.name,
                               dtype=header["precision"])
    extra = header.get("extra", {})
    est.config_ = cfg
    est.params_ = params
    est.history_ = []
    est.best_epoch_ = extra.get("best_epoch", 0)
    est.status_ = extra.get("status", "ok")
    return est


class OraclePlanner(_PlannerMixin, BaseEstimator):
    """Plays the stored optimal labels; closes the evaluation loop at 100/100."""

    def __init__(self, kernel="NEWS"):
        self.kernel = kernel

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def _state_logits(self, X):
        out = []
        for s in X.samples:
            A = s.kernel.action_count
            logits = np.zeros((len(s.labels), A))
            act = np.where(s.labels == STAY, 0, s.labels)
            logits[np.arange(len(act)), act] = 1.0
            out.append(logits)
        return out


class ValueIterationPlanner(_PlannerMixin, BaseEstimator):
    """Tabular value iteration on the true model, truncated at ``K`` sweeps."""

    def __init__(self, K=20, kernel="NEWS", gamma=0.99):
        self.K = K
        self.kernel = kernel
        self.gamma = gamma

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def _state_logits(self, X):
        out = []
        for s in X.samples:
            v, _ = value_iteration(s.maze, s.kernel, s.goal, self.gamma, iters=self.K, space=s.space)
            out.append(-1.0 + self.gamma * v[s.space.successors])
        return out
