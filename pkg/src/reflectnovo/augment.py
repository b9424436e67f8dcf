"""Reflection error injection for training targets.

Two strategies corrupt a target peptide at a sampled position t: the wrong
token is written, followed by the reflection token, followed by the original
token, so the tail of the sequence is untouched. RPRE draws the wrong token
uniformly from all residues; RPLE draws it from the tokens appearing later
in the same sequence, which produces harder, sequence-consistent confusions.

The loss mask marks injected-error positions as unsupervised: they act as
context the model must react to (by emitting the reflection token), never as
prediction targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .vocab import PeptideSequence, Vocabulary

RPRE = "RPRE"
RPLE = "RPLE"


@dataclass(frozen=True)
class AugmentConfig:
    """Batch-level injection policy.

    ``alpha`` is the per-sequence injection probability; given injection,
    RPLE is chosen with probability ``strategy_mix`` (else RPRE).
    """

    alpha: float = 0.0
    strategy_mix: float = 0.5
    max_injections_per_seq: int = 1

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must be in [0, 1]")
        if not (0.0 <= self.strategy_mix <= 1.0):
            raise ValueError("strategy_mix must be in [0, 1]")
        if self.max_injections_per_seq < 1:
            raise ValueError("max_injections_per_seq must be >= 1")


@dataclass(frozen=True)
class InjectionRecord:
    """One injected error: 1-based position in the original sequence, the
    wrong token written there, and the strategy that chose it."""

    position: int
    error_token: int
    strategy: str
    is_noop: bool


@dataclass(frozen=True)
class AugmentedTarget:
    """A target sequence with reflection insertions and its loss mask.

    ``loss_mask[i]`` is False exactly where ``tokens[i]`` is an injected
    error; reflection tokens and restored tokens stay supervised. Stripping
    each (error, reflect) pair recovers the original sequence.
    """

    tokens: tuple[int, ...]
    loss_mask: tuple[bool, ...]
    records: tuple[InjectionRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.tokens) != len(self.loss_mask):
            raise ValueError("loss mask length must match token length")


def _build_target(
    seq: PeptideSequence, records: list[InjectionRecord], vocab: Vocabulary
) -> AugmentedTarget:
    by_pos = {r.position: r for r in records}
    tokens: list[int] = []
    mask: list[bool] = []
    for i, tok in enumerate(seq.tokens, start=1):
        rec = by_pos.get(i)
        if rec is not None:
            tokens.extend([rec.error_token, vocab.reflect_id, tok])
            mask.extend([False, True, True])
        else:
            tokens.append(tok)
            mask.append(True)
    return AugmentedTarget(
        tokens=tuple(tokens),
        loss_mask=tuple(mask),
        records=tuple(sorted(records, key=lambda r: r.position)),
    )


def passthrough_target(seq: PeptideSequence) -> AugmentedTarget:
    """The unmodified sequence with an all-true mask and no records."""
    return AugmentedTarget(
        tokens=tuple(seq.tokens), loss_mask=(True,) * len(seq), records=()
    )


def inject_rpre(
    seq: PeptideSequence,
    vocab: Vocabulary,
    rng: np.random.Generator,
    position: int | None = None,
    error_token: int | None = None,
) -> AugmentedTarget:
    """Random Position, Random Error: t ~ Uniform{1..n}, wrong token uniform
    over all residues. When the draw happens to equal the original token the
    reflection is a no-op, teaching retention rather than correction.

    ``position``/``error_token`` override the random draws (used by tests).
    """
    n = len(seq)
    t = int(rng.integers(1, n + 1)) if position is None else position
    if error_token is None:
        ids = vocab.residue_ids
        error_token = int(rng.integers(ids.start, ids.stop))
    record = InjectionRecord(
        position=t,
        error_token=error_token,
        strategy=RPRE,
        is_noop=error_token == seq.tokens[t - 1],
    )
    return _build_target(seq, [record], vocab)


def inject_rple(
    seq: PeptideSequence,
    vocab: Vocabulary,
    rng: np.random.Generator,
    position: int | None = None,
    error_token: int | None = None,
) -> AugmentedTarget:
    """Random Position, Lookahead Error: t ~ Uniform{1..n-1}, wrong token
    drawn uniformly from the multiset of tokens after position t. Sequences
    of length 1 have no lookahead set and fall back to RPRE.
    """
    n = len(seq)
    if n < 2:
        return inject_rpre(seq, vocab, rng, position=position, error_token=error_token)
    t = int(rng.integers(1, n)) if position is None else position
    if error_token is None:
        error_token = seq.tokens[int(rng.integers(t, n))]
    record = InjectionRecord(
        position=t,
        error_token=error_token,
        strategy=RPLE,
        is_noop=error_token == seq.tokens[t - 1],
    )
    return _build_target(seq, [record], vocab)


def _inject_multi(
    seq: PeptideSequence,
    vocab: Vocabulary,
    rng: np.random.Generator,
    strategy: str,
    count: int,
) -> AugmentedTarget:
    n = len(seq)
    if strategy == RPLE and n < 2:
        strategy = RPRE
    limit = n if strategy == RPRE else n - 1
    k = min(count, limit)
    positions = sorted(int(p) + 1 for p in rng.choice(limit, size=k, replace=False))
    records = []
    for t in positions:
        if strategy == RPRE:
            ids = vocab.residue_ids
            err = int(rng.integers(ids.start, ids.stop))
        else:
            err = seq.tokens[int(rng.integers(t, n))]
        records.append(
            InjectionRecord(
                position=t,
                error_token=err,
                strategy=strategy,
                is_noop=err == seq.tokens[t - 1],
            )
        )
    return _build_target(seq, records, vocab)


def augment_batch(
    batch: list[tuple[object, PeptideSequence]],
    cfg: AugmentConfig,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> list[tuple[object, AugmentedTarget]]:
    """Online dynamic injection over one batch.

    Each item is independently modified with probability ``alpha``; chosen
    items use RPLE with probability ``strategy_mix``, else RPRE. Per-item
    rng streams are spawned from ``rng`` so batch assembly can be
    parallelized without changing the output. Augmentation happens at batch
    assembly time, every epoch, and is never cached.
    """
    if not batch:
        raise ValueError("empty batch")
    out = []
    for item_rng, (spectrum, seq) in zip(rng.spawn(len(batch)), batch):
        if item_rng.random() >= cfg.alpha:
            out.append((spectrum, passthrough_target(seq)))
            continue
        strategy = RPLE if item_rng.random() < cfg.strategy_mix else RPRE
        if cfg.max_injections_per_seq == 1:
            inject = inject_rple if strategy == RPLE else inject_rpre
            out.append((spectrum, inject(seq, vocab, item_rng)))
        else:
            out.append(
                (
                    spectrum,
                    _inject_multi(
                        seq, vocab, item_rng, strategy, cfg.max_injections_per_seq
                    ),
                )
            )
    return out


def finalize_target(
    aug: AugmentedTarget, vocab: Vocabulary
) -> tuple[list[int], list[int], list[bool]]:
    """Shift-by-one teacher forcing: decoder input ``[sos] + tokens``,
    supervision ``tokens + [eos]``, mask extended with True for eos."""
    decoder_input = [vocab.sos_id, *aug.tokens]
    supervision = [*aug.tokens, vocab.eos_id]
    loss_mask = [*aug.loss_mask, True]
    return decoder_input, supervision, loss_mask


def strip_reflections(tokens, reflect_id: int) -> list[int]:
    """Undo reflection insertions: each reflect token deletes itself and the
    nearest preceding surviving token (a leading reflect deletes only
    itself)."""
    out: list[int] = []
    for tok in tokens:
        if tok == reflect_id:
            if out:
                out.pop()
        else:
            out.append(tok)
    return out
