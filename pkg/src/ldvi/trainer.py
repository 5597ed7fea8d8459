"""Adam training of the augmented bound, grid orchestration, persistence.

The desk-scale protocol: pretrain the base distribution with plain VI
(2,000 steps at lr 1e-2), then maximize the method's augmented bound with
Adam over its declared trainable set (default 5,000 steps, batch 32),
finishing with an independent evaluation (default 1,000 samples). Gradients
are clipped by global norm; non-finite gradient steps are skipped and
counted. Every run is fully determined by its plan: noise is keyed by
(seed, step), so identical plans produce byte-identical records.
"""

from __future__ import annotations

import dataclasses
import json
import pathlib
import time
from dataclasses import dataclass, field

import numpy as np

from ldvi.estimator import (MethodConfig, NoiseBundle, config_variant,
                            estimate_elbo, evaluate_elbo_mean, get_method,
                            init_params, lift_model)
from ldvi.tape import Tape
from ldvi.targets import TargetModel, get_target

__all__ = [
    "AdamState", "adam_step", "TrainPlan", "RunRecord", "TrainingDiverged",
    "train", "run_grid", "select_best", "save_checkpoint", "load_checkpoint",
    "global_grad_norm", "clip_gradients",
]

SCHEMA_VERSION = 1
# evaluation noise must not reuse the training stream, which is keyed by
# (seed, step) for step < plan.steps
EVAL_SEED_STRIDE = 1_000_003


class TrainingDiverged(RuntimeError):
    """Raised when the training bound falls below the divergence floor."""


# ------------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    """First/second moment accumulators with bias correction."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict,
              lr: float) -> dict:
    """One bias-corrected Adam update; returns the new parameter dict.

    Only keys present in `grads` move; `state` is updated in place.
    """
    state.step += 1
    t = state.step
    out = dict(params)
    for key, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(key, np.zeros_like(g))
        v = state.v.get(key, np.zeros_like(g))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[key], state.v[key] = m, v
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        out[key] = np.asarray(params[key]
                              - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g)))
    return float(np.sqrt(total))


def clip_gradients(grads: dict, max_norm: float) -> tuple[dict, bool]:
    """Scale all gradients so the global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, False
    scale = max_norm / norm
    return {k: np.asarray(g) * scale for k, g in grads.items()}, True


# ------------------------------------------------------------------- planning

@dataclass(frozen=True)
class TrainPlan:
    """Everything that determines one training run."""

    method: str
    target: str
    num_steps: int = 8            # chain length K
    lr: float = 1e-3
    steps: int = 5000
    batch: int = 32
    eval_samples: int = 1000
    seed: int = 0
    pretrain_steps: int = 2000
    pretrain_lr: float = 1e-2
    grad_clip: float = 100.0
    divergence_floor: float = -1e8
    record_every: int = 50
    score_hidden: int | None = None
    toy_dim: int = 2
    data_dir: str | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunRecord:
    """Persisted outcome of one run; serialization round-trips losslessly."""

    plan: dict
    status: str = "ok"
    error: str = ""
    final_elbo: float | None = None
    final_stderr: float | None = None
    curve: list = field(default_factory=list)   # [(step, batch-mean bound)]
    skipped_steps: int = 0
    clipped_steps: int = 0
    wall_time: float = 0.0
    schema_version: int = SCHEMA_VERSION
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        data = json.loads(text)
        data["curve"] = [tuple(item) for item in data["curve"]]
        return cls(**data)

    def canonical_bytes(self) -> bytes:
        """Deterministic byte form: everything except wall time."""
        data = dataclasses.asdict(self)
        data.pop("wall_time")
        return json.dumps(data, sort_keys=True).encode()


# ------------------------------------------------------------------- training

def _resolve_target(plan: TrainPlan) -> TargetModel:
    return get_target(plan.target, data_dir=plan.data_dir,
                      toy_dim=plan.toy_dim)


def _resolve_config(plan: TrainPlan) -> MethodConfig:
    config = get_method(plan.method)
    if plan.score_hidden is not None:
        config = config_variant(config, score_hidden=plan.score_hidden)
    return config


def _optimize(config, params, target, num_steps, steps, lr, batch, seed,
              grad_clip, divergence_floor, record_every, seed_offset=0):
    """Shared Adam loop; returns (params, curve, skipped, clipped)."""
    state = AdamState()
    curve, skipped, clipped = [], 0, 0
    for step in range(steps):
        noise = NoiseBundle.draw(seed + seed_offset, step, batch,
                                 target.dim, num_steps)
        tape = Tape()
        model = lift_model(tape, config, params, target.dim, num_steps)
        value = tape.mean_all(estimate_elbo(model, target, noise).value)
        elbo = float(value.value)
        if elbo < divergence_floor:
            raise TrainingDiverged(
                f"bound {elbo:.3e} fell below floor {divergence_floor:.3e} "
                f"at step {step}")
        if step % record_every == 0 or step == steps - 1:
            curve.append((step, elbo))
        grads = tape.backward(value)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            skipped += 1
            continue
        grads, was_clipped = clip_gradients(grads, grad_clip)
        clipped += was_clipped
        # ascend the bound: feed Adam the negated gradients
        params = adam_step(state, params,
                           {k: -g for k, g in grads.items()}, lr)
    return params, curve, skipped, clipped


def train(plan: TrainPlan, target: TargetModel | None = None) -> RunRecord:
    """Pretrain q with plain VI, optimize the method's bound, evaluate."""
    start = time.perf_counter()
    if target is None:
        target = _resolve_target(plan)
    config = _resolve_config(plan)
    params = init_params(config, target.dim, plan.num_steps, seed=plan.seed)

    if plan.pretrain_steps > 0 and config.scheme != "plain":
        plain = get_method("plainvi")
        q_params = {"q.mu": params["q.mu"],
                    "q.raw_scale": params["q.raw_scale"]}
        q_params, _, _, _ = _optimize(
            plain, q_params, target, 1, plan.pretrain_steps,
            plan.pretrain_lr, plan.batch, plan.seed, plan.grad_clip,
            plan.divergence_floor, plan.record_every,
            seed_offset=2 * EVAL_SEED_STRIDE)
        params.update(q_params)

    params, curve, skipped, clipped = _optimize(
        config, params, target, plan.num_steps, plan.steps, plan.lr,
        plan.batch, plan.seed, plan.grad_clip, plan.divergence_floor,
        plan.record_every)

    mean, stderr = evaluate_elbo_mean(
        config, params, target, plan.num_steps, plan.eval_samples,
        seed=plan.seed + EVAL_SEED_STRIDE)

    record = RunRecord(
        plan=plan.to_dict(), final_elbo=mean, final_stderr=stderr,
        curve=curve, skipped_steps=skipped, clipped_steps=clipped,
        wall_time=time.perf_counter() - start,
        metadata={"target_dim": target.dim,
                  "trainable": sorted(config.trainable),
                  "score_hidden": config.score_hidden,
                  "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}})
    record.params = params  # in-memory only; persisted via save_checkpoint
    return record


def run_grid(plans, on_record=None) -> list:
    """Run every plan; failures become error records and the grid continues."""
    records = []
    for plan in plans:
        try:
            record = train(plan)
        except Exception as exc:  # recorded, not fatal to the grid
            record = RunRecord(plan=plan.to_dict(), status="failed",
                               error=f"{type(exc).__name__}: {exc}")
        records.append(record)
        if on_record is not None:
            on_record(record)
    return records


def select_best(records) -> dict:
    """Best finished record per (method, target, K), by final bound."""
    best: dict = {}
    for rec in records:
        if rec.status != "ok" or rec.final_elbo is None:
            continue
        key = (rec.plan["method"], rec.plan["target"], rec.plan["num_steps"])
        if key not in best or rec.final_elbo > best[key].final_elbo:
            best[key] = rec
    return best


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(params: dict, path) -> None:
    """Flat little-endian float64 array with a JSON shape header."""
    path = pathlib.Path(path)
    header = {key: list(np.asarray(params[key]).shape)
              for key in sorted(params)}
    flat = np.concatenate(
        [np.asarray(params[key], dtype=np.float64).ravel()
         for key in sorted(params)]) if params else np.zeros(0)
    with open(path, "wb") as fh:
        head = json.dumps(header, sort_keys=True).encode()
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path) -> dict:
    path = pathlib.Path(path)
    with open(path, "rb") as fh:
        head_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(head_len).decode())
        flat = np.frombuffer(fh.read(), dtype="<f8")
    params, offset = {}, 0
    for key in sorted(header):
        shape = tuple(header[key])
        size = int(np.prod(shape)) if shape else 1
        params[key] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    if offset != flat.size:
        raise ValueError("checkpoint payload size does not match header")
    return params
