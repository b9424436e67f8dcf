"""Training loop with online augmentation, AdamW, warmup+cosine schedule,
validation tracking, and a binary checkpoint container."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, augment_batch, finalize_target, passthrough_target
from .model import ModelConfig, SpectrumTransformer, batch_loss, init_model
from .spectrum import PSM, PreprocessConfig, preprocess_spectrum
from .vocab import PeptideSequence, Vocabulary

CHECKPOINT_MAGIC = b"RNVO"
CHECKPOINT_VERSION = 1

PRETRAIN = "pretrain"
FINETUNE = "finetune"


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 30
    total_steps: int | None = None
    peak_lr: float = 1e-3
    warmup_steps: int = 200
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = 1.0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    init_seed: int = 0
    data_seed: int = 1
    augment_seed: int = 2
    validation_interval: int = 100
    mode: str = PRETRAIN

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ValueError("peak learning rate must be positive")
        if self.total_steps is not None and self.warmup_steps > self.total_steps:
            raise ValueError("warmup cannot exceed total steps")
        if self.mode not in (PRETRAIN, FINETUNE):
            raise ValueError(f"unknown mode {self.mode!r}")


def lr_at_step(peak_lr: float, warmup_steps: int, total_steps: int, step: int) -> float:
    """Linear warmup to ``peak_lr`` over ``warmup_steps``, then cosine decay
    to zero at ``total_steps``."""
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    if total_steps == warmup_steps:
        return peak_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    """First/second moment estimates plus the shared step count."""

    step: int
    exp_avg: dict[str, torch.Tensor]
    exp_avg_sq: dict[str, torch.Tensor]

    @classmethod
    def fresh(cls, model: SpectrumTransformer) -> "AdamWState":
        return cls(
            step=0,
            exp_avg={n: torch.zeros_like(p) for n, p in model.named_parameters()},
            exp_avg_sq={n: torch.zeros_like(p) for n, p in model.named_parameters()},
        )


def adamw_update(
    model: SpectrumTransformer,
    grads: dict[str, torch.Tensor],
    state: AdamWState,
    lr: float,
    cfg: TrainConfig,
) -> AdamWState:
    """One decoupled-weight-decay Adam step with bias correction, in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    with torch.no_grad():
        for name, param in model.named_parameters():
            grad = grads[name]
            if not torch.isfinite(grad).all():
                raise FloatingPointError(f"non-finite gradient for {name}")
            m = state.exp_avg[name]
            v = state.exp_avg_sq[name]
            m.mul_(cfg.beta1).add_(grad, alpha=1.0 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(grad, grad, value=1.0 - cfg.beta2)
            if cfg.weight_decay:
                param.mul_(1.0 - lr * cfg.weight_decay)
            denom = (v / bc2).sqrt_().add_(cfg.eps)
            param.addcdiv_(m, denom, value=-lr / bc1)
    return state


def _clip_gradients(grads: dict[str, torch.Tensor], max_norm: float) -> None:
    total = math.sqrt(sum(float(g.pow(2).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g.mul_(scale)


def _prepare_psms(
    psms: list[PSM], preprocess: PreprocessConfig
) -> list[tuple[object, PeptideSequence]]:
    pairs = []
    for psm in psms:
        if psm.label is None:
            raise ValueError(f"PSM {psm.id} has no label; cannot train on it")
        pairs.append((preprocess_spectrum(psm.spectrum, preprocess), psm.label))
    return pairs


def _eval_loss(model: SpectrumTransformer, pairs, batch_size: int) -> float:
    """Unaugmented loss (alpha forced to 0, all-true masks)."""
    losses = []
    counts = []
    with torch.no_grad():
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i : i + batch_size]
            batch = []
            for spectrum, seq in chunk:
                dec_in, sup, mask = finalize_target(passthrough_target(seq), model.vocab)
                batch.append((spectrum, dec_in, sup, mask))
            losses.append(float(batch_loss(model, batch)))
            counts.append(len(chunk))
    return float(np.average(losses, weights=counts))


@dataclass
class MetricsRow:
    step: int
    train_loss: float
    val_loss: float | None
    lr: float

    def render(self) -> str:
        val = "" if self.val_loss is None else f"{self.val_loss:.6f}"
        return f"{self.step}\t{self.train_loss:.6f}\t{val}\t{self.lr:.8f}"


@dataclass
class Checkpoint:
    """Everything needed to resume or serve a model."""

    model_config: ModelConfig
    vocab: Vocabulary
    model: SpectrumTransformer
    optimizer: AdamWState
    metadata: dict


def train(
    train_psms: list[PSM],
    val_psms: list[PSM],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    vocab: Vocabulary,
    source: Checkpoint | None = None,
    preprocess: PreprocessConfig = PreprocessConfig(),
    out_dir: Path | None = None,
    log=None,
) -> tuple[Checkpoint, list[MetricsRow]]:
    """Run the training loop.

    Every epoch reshuffles with a seeded rng; every batch is re-augmented
    online (fresh randomness, never cached). Validation loss is computed
    with augmentation off. In finetune mode, parameters start from
    ``source``; otherwise from seeded initialization.
    """
    if not train_psms:
        raise ValueError("empty training set")
    if cfg.mode == FINETUNE:
        if source is None:
            raise ValueError("finetune mode requires a source checkpoint")
        if source.model_config != model_cfg:
            raise ValueError("source checkpoint architecture differs from model config")
        if source.vocab.residues != vocab.residues:
            raise ValueError("source checkpoint vocabulary differs from the requested one")
        model = copy.deepcopy(source.model)
    else:
        model = init_model(model_cfg, vocab, seed=cfg.init_seed)
    train_pairs = _prepare_psms(train_psms, preprocess)
    val_pairs = _prepare_psms(val_psms, preprocess) if val_psms else []

    steps_per_epoch = math.ceil(len(train_pairs) / cfg.batch_size)
    total_steps = (
        cfg.total_steps if cfg.total_steps is not None else cfg.epochs * steps_per_epoch
    )
    if total_steps > 0 and cfg.warmup_steps > total_steps:
        raise ValueError("warmup cannot exceed total steps")

    state = AdamWState.fresh(model)
    metrics: list[MetricsRow] = []
    best_val = math.inf
    loss_digest = hashlib.sha256()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    def snapshot(step_count: int) -> Checkpoint:
        metadata = {
            "step": step_count,
            "mode": cfg.mode,
            "seeds": {
                "init": cfg.init_seed,
                "data": cfg.data_seed,
                "augment": cfg.augment_seed,
            },
            "alpha": cfg.augment.alpha,
            "strategy_mix": cfg.augment.strategy_mix,
            "grad_clip": cfg.grad_clip,
            "loss_digest": loss_digest.hexdigest(),
        }
        return Checkpoint(
            model_config=model_cfg,
            vocab=vocab,
            model=model,
            optimizer=state,
            metadata=metadata,
        )

    step = 0
    epoch = 0
    model.train()
    while step < total_steps:
        order = np.random.default_rng([cfg.data_seed, epoch]).permutation(
            len(train_pairs)
        )
        for batch_idx in range(steps_per_epoch):
            if step >= total_steps:
                break
            rows = order[batch_idx * cfg.batch_size : (batch_idx + 1) * cfg.batch_size]
            raw_batch = [train_pairs[i] for i in rows]
            batch_rng = np.random.default_rng([cfg.augment_seed, epoch, batch_idx])
            augmented = augment_batch(raw_batch, cfg.augment, vocab, batch_rng)
            batch = []
            for spectrum, target in augmented:
                dec_in, sup, mask = finalize_target(target, vocab)
                batch.append((spectrum, dec_in, sup, mask))
            lr = lr_at_step(cfg.peak_lr, cfg.warmup_steps, total_steps, step)
            model.zero_grad(set_to_none=True)
            loss = batch_loss(model, batch)
            if not math.isfinite(float(loss.detach())):
                raise FloatingPointError(f"training diverged at step {step}")
            loss.backward()
            grads = {
                n: p.grad if p.grad is not None else torch.zeros_like(p)
                for n, p in model.named_parameters()
            }
            if cfg.grad_clip is not None:
                _clip_gradients(grads, cfg.grad_clip)
            adamw_update(model, grads, state, lr, cfg)
            step += 1
            train_loss = float(loss.detach())
            loss_digest.update(struct.pack("<f", train_loss))
            val_loss = None
            if val_pairs and (
                step % cfg.validation_interval == 0 or step == total_steps
            ):
                model.eval()
                val_loss = _eval_loss(model, val_pairs, cfg.batch_size)
                model.train()
            metrics.append(MetricsRow(step, train_loss, val_loss, lr))
            if log is not None and (step % 100 == 0 or step == total_steps):
                log(metrics[-1])
            if val_loss is not None and val_loss < best_val:
                best_val = val_loss
                if out_dir is not None:
                    model.eval()
                    save_checkpoint(snapshot(step), out_dir / "best.ckpt")
                    model.train()
        epoch += 1

    model.eval()
    ckpt = snapshot(step)
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir / "final.ckpt")
    return ckpt, metrics


def _tensor_entries(ckpt: Checkpoint):
    for name, param in ckpt.model.named_parameters():
        yield f"param.{name}", param.detach()
    for name, m in ckpt.optimizer.exp_avg.items():
        yield f"opt.m.{name}", m
    for name, v in ckpt.optimizer.exp_avg_sq.items():
        yield f"opt.v.{name}", v


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary container: magic, version, JSON header (config, vocabulary,
    tensor manifest, metadata), then raw little-endian float32 tensor data."""
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in _tensor_entries(ckpt):
        data = tensor.to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = {
        "model_config": asdict(ckpt.model_config),
        "vocabulary": {
            "residues": list(ckpt.vocab.residues),
            "masses": list(ckpt.vocab.masses),
        },
        "optimizer": {"step": ckpt.optimizer.step},
        "metadata": ckpt.metadata,
        "manifest": manifest,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", raw, 8)
    header_end = 12 + header_len
    if header_end > len(raw):
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(raw[12:header_end].decode("utf-8"))
    vocab = Vocabulary(
        residues=tuple(header["vocabulary"]["residues"]),
        masses=tuple(header["vocabulary"]["masses"]),
    )
    model_cfg = ModelConfig(**header["model_config"])
    model = SpectrumTransformer(model_cfg, vocab)
    tensors = {}
    data_start = header_end
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = data_start + entry["offset"]
        end = start + 4 * count
        if end > len(raw):
            raise CheckpointError(f"truncated tensor data for {entry['name']}")
        array = np.frombuffer(raw[start:end], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = torch.from_numpy(array.copy())
    params = dict(model.named_parameters())
    state = AdamWState(step=header["optimizer"]["step"], exp_avg={}, exp_avg_sq={})
    with torch.no_grad():
        for name, tensor in tensors.items():
            if name.startswith("param."):
                key = name[len("param.") :]
                if key not in params:
                    raise CheckpointError(f"unknown tensor {name} in manifest")
                if params[key].shape != tensor.shape:
                    raise CheckpointError(f"shape mismatch for {name}")
                params[key].copy_(tensor)
            elif name.startswith("opt.m."):
                state.exp_avg[name[len("opt.m.") :]] = tensor
            elif name.startswith("opt.v."):
                state.exp_avg_sq[name[len("opt.v.") :]] = tensor
            else:
                raise CheckpointError(f"unknown tensor {name} in manifest")
    missing = set(params) - {
        n[len("param.") :] for n in tensors if n.startswith("param.")
    }
    if missing:
        raise CheckpointError(f"manifest missing tensors: {sorted(missing)}")
    model.eval()
    return Checkpoint(
        model_config=model_cfg,
        vocab=vocab,
        model=model,
        optimizer=state,
        metadata=header["metadata"],
    )
