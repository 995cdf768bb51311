"""Adam optimization, early-stopped training, and the repeated-split protocol."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset, SplitSpec, split
from .model import (ModelConfig, ModelParams, cross_entropy_loss, forward,
                    init_params, predict, save_checkpoint)


@dataclass
class AdamSettings:
    learning_rate: float = 0.001
    weight_decay: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class OptimState:
    """First/second moment accumulators and step counter for a parameter list."""

    settings: AdamSettings
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params, settings: AdamSettings | None = None) -> "OptimState":
        settings = settings or AdamSettings()
        return cls(settings=settings,
                   m=[np.zeros_like(p.value) for p in params],
                   v=[np.zeros_like(p.value) for p in params])


def adam_step(params, grads, state: OptimState):
    """One Adam update; weight decay is added to the gradient before the moments."""
    s = state.settings
    state.t += 1
    bias1 = 1.0 - s.beta1 ** state.t
    bias2 = 1.0 - s.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if s.weight_decay:
            g = g + s.weight_decay * p.value
        m *= s.beta1
        m += (1.0 - s.beta1) * g
        v *= s.beta2
        v += (1.0 - s.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p.value -= s.learning_rate * m_hat / (np.sqrt(v_hat) + s.epsilon)


@dataclass
class TrainReport:
    """Per-epoch curves plus where early stopping settled."""

    train_losses: list[float] = field(default_factory=list)
    valid_losses: list[float] = field(default_factory=list)
    valid_accs: list[float] = field(default_factory=list)
    best_epoch: int = 0              # 1-based
    test_accuracy: float = float("nan")
    wall_time_s: float = 0.0

    @property
    def num_epochs(self) -> int:
        return len(self.train_losses)


def _mean_loss_and_acc(params, config, dataset, idx) -> tuple[float, float]:
    total, correct = 0.0, 0
    for i in idx:
        g = dataset.graphs[int(i)]
        logits, _ = forward(g, params, config)
        z = logits.value[0]
        m = z.max()
        total += float(m + np.log(np.exp(z - m).sum()) - z[g.label])
        correct += int(predict(logits) == g.label)
    return total / len(idx), correct / len(idx)


def evaluate(params: ModelParams, config: ModelConfig, dataset: Dataset, idx) -> float:
    """Fraction of graphs whose argmax prediction matches the label."""
    idx = np.asarray(idx, dtype=np.intp).ravel()
    if len(idx) == 0:
        raise ad.ContractError("cannot evaluate on an empty index list")
    correct = 0
    for i in idx:
        g = dataset.graphs[int(i)]
        logits, _ = forward(g, params, config)
        correct += int(predict(logits) == g.label)
    return correct / len(idx)


def train(dataset: Dataset, split_spec: SplitSpec, config: ModelConfig,
          optim: AdamSettings | None = None, patience: int = 100,
          max_epochs: int = 1000, batch_size: int = 64, seed: int = 0,
          metrics_path=None) -> tuple[ModelParams, TrainReport]:
    """Train until validation loss stalls; return the best-epoch parameters.

    Stops once validation loss has failed to improve for ``patience``
    consecutive epochs (patience 0 stops at the first non-improving epoch)
    or at ``max_epochs``.  Deterministic given the seed.
    """
    optim = optim or AdamSettings()
    params = init_params(config, seed)
    plist = params.parameters()
    state = OptimState.for_params(plist, optim)
    shuffler = np.random.default_rng(np.random.SeedSequence([seed, 0xB0B]))

    report = TrainReport()
    best_valid = float("inf")
    best_state = params.copy_values()
    stall = 0
    threshold = max(patience, 1)
    started = time.perf_counter()

    metrics = open(metrics_path, "w") if metrics_path is not None else None
    if metrics:
        metrics.write("epoch,train_loss,valid_loss,valid_acc,seconds\n")
    try:
        for epoch in range(1, max_epochs + 1):
            tick = time.perf_counter()
            order = shuffler.permutation(split_spec.train_idx)
            running = 0.0
            for lo in range(0, len(order), batch_size):
                batch = order[lo:lo + batch_size]
                params.zero_grad()
                with ad.Tape() as tape:
                    logits = []
                    labels = []
                    for i in batch:
                        g = dataset.graphs[int(i)]
                        out, _ = forward(g, params, config)
                        logits.append(out)
                        labels.append(g.label)
                    loss = cross_entropy_loss(logits, labels)
                tape.backward(loss)
                adam_step(plist, [p.grad for p in plist], state)
                running += float(loss.value[0, 0])
            train_loss = running / len(order)
            valid_loss, valid_acc = _mean_loss_and_acc(
                params, config, dataset, split_spec.valid_idx)
            report.train_losses.append(train_loss)
            report.valid_losses.append(valid_loss)
            report.valid_accs.append(valid_acc)
            if metrics:
                metrics.write(f"{epoch},{train_loss:.10g},{valid_loss:.10g},"
                              f"{valid_acc:.10g},{time.perf_counter() - tick:.3f}\n")
            if valid_loss < best_valid:
                best_valid = valid_loss
                best_state = params.copy_values()
                report.best_epoch = epoch
                stall = 0
            else:
                stall += 1
                if stall >= threshold:
                    break
    finally:
        if metrics:
            metrics.close()

    params.load_values(best_state)
    report.test_accuracy = evaluate(params, config, dataset, split_spec.test_idx)
    report.wall_time_s = time.perf_counter() - started
    return params, report


@dataclass
class SeedResult:
    seed: int
    test_accuracy: float
    best_epoch: int


def _run_one_seed(payload) -> SeedResult:
    (dataset, config, optim, patience, max_epochs, batch_size, seed,
     metrics_path, ckpt_path) = payload
    spec = split(dataset, seed)
    params, report = train(dataset, spec, config, optim=optim, patience=patience,
                           max_epochs=max_epochs, batch_size=batch_size,
                           seed=seed, metrics_path=metrics_path)
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, params)
    return SeedResult(seed=seed, test_accuracy=report.test_accuracy,
                      best_epoch=report.best_epoch)


@dataclass
class ExperimentSummary:
    results: list[SeedResult]

    @property
    def mean(self) -> float:
        return float(np.mean([r.test_accuracy for r in self.results]))

    @property
    def std(self) -> float:
        # population standard deviation (divide by N)
        return float(np.std([r.test_accuracy for r in self.results]))

    def __str__(self):
        return f"{self.mean:.4f} ± {self.std:.4f}"


def run_experiment(dataset: Dataset, config: ModelConfig,
                   optim: AdamSettings | None = None, repeats: int = 10,
                   seeds=None, patience: int = 100, max_epochs: int = 1000,
                   batch_size: int = 64, out_dir=None, run_name: str = "run",
                   workers: int = 1) -> ExperimentSummary:
    """Fresh split + fresh init + train + test once per seed; mean and std.

    Seeds are independent, so workers > 1 runs them in separate processes;
    results and files are identical either way.
    """
    if seeds is None:
        seeds = list(range(repeats))
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    payloads = [
        (dataset, config, optim, patience, max_epochs, batch_size, s,
         out / f"metrics_{run_name}_seed{s}.csv" if out else None,
         out / f"params_{run_name}_seed{s}.ckpt" if out else None)
        for s in seeds]
    if workers > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_seed, payloads))
    else:
        results = [_run_one_seed(p) for p in payloads]

    summary = ExperimentSummary(results=results)
    if out is not None:
        with open(out / f"summary_{run_name}.csv", "w") as fh:
            fh.write("seed,test_acc,best_epoch\n")
            for r in results:
                fh.write(f"{r.seed},{r.test_accuracy:.10g},{r.best_epoch}\n")
    return summary
