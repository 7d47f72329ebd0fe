"""Training loop with schedule, selection-noise annealing, logging and resume."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..dqs import anneal_beta
from ..network import PQDT, loss
from ..pointops import chamfer
from .checkpoint import Checkpoint, CheckpointError, load_model_weights, model_checkpoint
from .config import RunConfig, config_digest
from .dataset import Prefetcher, Sample, fit_count, load_pair, read_manifest
from ..datagen.streams import sample_rng


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainState:
    model: PQDT
    opt: ad.Adam
    rng: np.random.Generator
    epoch: int = 0          # next epoch to run
    step: int = 0
    last_checkpoint: Path | None = None
    history: list[dict] = field(default_factory=list)


def training_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5452])))


def new_state(cfg: RunConfig) -> TrainState:
    model = PQDT(cfg.net)
    o = cfg.optimizer
    opt = ad.Adam(model.parameters(), lr=o.lr, betas=tuple(o.betas), eps=o.eps)
    return TrainState(model, opt, training_rng(cfg.seed))


def state_checkpoint(state: TrainState, cfg: RunConfig) -> Checkpoint:
    digest = config_digest(state.model.cfg)
    ck = model_checkpoint(state.model, digest, dtype="f8", meta={
        "epoch": state.epoch,
        "step": state.step,
        "adam_t": state.opt.t,
        "rng_state": state.rng.bit_generator.state,
        "run_config": json.loads(cfg.to_json()),
    })
    names = [n for n, _ in state.model.named_parameters()]
    for name, m, v in zip(names, state.opt.m, state.opt.v):
        ck.add(f"adam.m.{name}", m, "f8")
        ck.add(f"adam.v.{name}", v, "f8")
    return ck


def restore_state(cfg: RunConfig, path) -> TrainState:
    ck = Checkpoint.load(path)
    state = new_state(cfg)
    load_model_weights(state.model, ck, config_digest(state.model.cfg))
    names = [n for n, _ in state.model.named_parameters()]
    try:
        state.opt.m = [ck.tensors[f"adam.m.{n}"].astype(np.float64) for n in names]
        state.opt.v = [ck.tensors[f"adam.v.{n}"].astype(np.float64) for n in names]
    except KeyError as exc:
        raise CheckpointError(f"{path}: no optimizer state for {exc.args[0]}") from None
    state.opt.t = int(ck.meta["adam_t"])
    state.rng.bit_generator.state = ck.meta["rng_state"]
    state.epoch = int(ck.meta["epoch"])
    state.step = int(ck.meta["step"])
    state.last_checkpoint = Path(path)
    return state


def _memory_loader(pairs, n_in, n_out, seed):
    def load(item, epoch):
        sid, x, g = item
        rng = sample_rng(seed, sid, epoch)
        return fit_count(np.asarray(x, np.float64), n_in, rng), fit_count(np.asarray(g, np.float64), n_out, rng)
    return load


def _file_loader(n_in, n_out, seed):
    def load(item: Sample, epoch):
        return load_pair(item, n_in, n_out, seed, epoch)
    return load


def train(cfg: RunConfig, data=None, resume=None, stop_after: int | None = None,
          log_path=None, out_dir=None) -> TrainState:
    """Run (or continue) training.

    ``data`` is a list of ``(id, input, target)`` arrays; without it the
    training manifest from the config is read. ``stop_after`` ends the run
    once that many epochs are complete (a checkpoint is always written at
    the stop). Returns the final state; ``state.history`` holds one record
    per optimizer step.
    """
    net = cfg.net
    if data is None:
        if not cfg.data.train_manifest:
            raise ValueError("train: no data given and data.train_manifest is not set")
        _, items = read_manifest(cfg.data.train_manifest)
        loader = _file_loader(net.n_in, net.n_out, cfg.seed)
    else:
        items = list(data)
        loader = _memory_loader(items, net.n_in, net.n_out, cfg.seed)
    if not items:
        raise ValueError("train: empty dataset")

    state = restore_state(cfg, resume) if resume else new_state(cfg)
    out_dir = Path(out_dir or cfg.checkpoint_dir)
    log_path = log_path or cfg.log_path
    total = cfg.schedule.epochs
    end = total if stop_after is None else min(total, stop_after)
    bs = cfg.batch_size

    while state.epoch < end:
        epoch = state.epoch
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        beta = anneal_beta(epoch / cfg.anneal_horizon)
        state.opt.lr = lr
        order = state.rng.permutation(len(items))
        batches = [order[i:i + bs] for i in range(0, len(order), bs)]
        sums: dict[str, float] = {}
        count = 0
        for batch in Prefetcher(lambda b: [loader(items[i], epoch) for i in b], batches,
                                depth=cfg.data.prefetch):
            state.opt.zero_grad()
            step_loss = 0.0
            for x, g in batch:
                res = state.model.forward(x, rng=state.rng, mode="train", beta=beta)
                total_loss, terms = loss(res.levels, res.pseudo, g)
                if not math.isfinite(total_loss.item()):
                    where = state.last_checkpoint or "none written yet"
                    raise TrainingAborted(f"non-finite loss at epoch {epoch}, step {state.step}; "
                                          f"last good checkpoint: {where}")
                (total_loss * (1.0 / len(batch))).backward()
                step_loss += total_loss.item() / len(batch)
                terms["cd_l1"] = chamfer(res.fine.data, g, "L1")
                for k, v in terms.items():
                    sums[k] = sums.get(k, 0.0) + v
                count += 1
            state.opt.step()
            state.history.append({"step": state.step, "epoch": epoch, "loss": step_loss})
            state.step += 1
        state.epoch = epoch + 1
        record = {"epoch": epoch, "step": state.step, "lr": lr, "beta": beta,
                  "loss": sum(v for k, v in sums.items() if k != "cd_l1") / count,
                  **{k: v / count for k, v in sorted(sums.items())},
                  "wall_time": time.perf_counter() - t0}
        if log_path:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if state.epoch % cfg.checkpoint_every == 0 or state.epoch == end:
            path = out_dir / f"epoch_{state.epoch:04d}.ckpt"
            state_checkpoint(state, cfg).save(path)
            state.last_checkpoint = path
    return state
