"""Corpus metrics: amino-acid precision, peptide precision/recall, and
reflection-usage statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

from .decode import (
    RawPrediction,
    beam_decode,
    greedy_decode_batch,
    postprocess_reflection,
    render_tokens,
)
from .model import SpectrumTransformer
from .spectrum import PSM, PreprocessConfig, preprocess_spectrum
from .vocab import PeptideSequence, Vocabulary


def aa_precision_counts(pred: list[int], label: PeptideSequence) -> tuple[int, int]:
    """(matched, predicted): positional token matches over the overlap, and
    the number of predicted residues."""
    matched = sum(1 for p, l in zip(pred, label.tokens) if p == l)
    return matched, len(pred)


def peptide_match(pred: list[int], label: PeptideSequence) -> bool:
    """Exact token-for-token equality, length included."""
    return tuple(pred) == label.tokens


@dataclass
class ReflectionUsage:
    """Aggregate reflection behavior over raw predictions.

    ``use`` is the fraction of sequences containing at least one reflect.
    Each reflect event retracts a pre-token and (usually) restores a
    post-token: ``same`` events restore the retracted token, ``corrected``
    events change it so the final answer matches the label at the landing
    position where the retracted token would not have.
    """

    sequences: int = 0
    sequences_with_reflect: int = 0
    events: int = 0
    same: int = 0
    corrected: int = 0

    @property
    def use(self) -> float:
        return self.sequences_with_reflect / self.sequences if self.sequences else 0.0

    @property
    def same_rate(self) -> float:
        return self.same / self.events if self.events else 0.0

    @property
    def corrected_rate(self) -> float:
        return self.corrected / self.events if self.events else 0.0

    @property
    def changed_uncorrected_rate(self) -> float:
        if not self.events:
            return 0.0
        return (self.events - self.same - self.corrected) / self.events


def classify_reflections(
    raw: RawPrediction, label: PeptideSequence | None, vocab: Vocabulary
) -> list[str]:
    """Classify each reflect event in a raw prediction as ``same``,
    ``corrected``, or ``changed_uncorrected``."""
    tokens = list(raw.tokens)
    if tokens and tokens[-1] == vocab.eos_id:
        tokens = tokens[:-1]
    # Simulate stripping while remembering, for each event, the retracted
    # token and where its replacement lands in the final answer.
    stack: list[tuple[int, int]] = []  # (token, raw index)
    events: list[tuple[int | None, int | None, int]] = []  # (pre, post_idx, landing)
    for idx, tok in enumerate(tokens):
        if tok == vocab.reflect_id:
            pre = stack.pop()[0] if stack else None
            post_idx = idx + 1 if idx + 1 < len(tokens) and tokens[idx + 1] != vocab.reflect_id else None
            events.append((pre, post_idx, len(stack)))
        else:
            stack.append((tok, idx))
    answer = [tok for tok, _ in stack]
    survivors = {idx: pos for pos, (_, idx) in enumerate(stack)}
    labels = []
    for pre, post_idx, landing in events:
        post = tokens[post_idx] if post_idx is not None else None
        if pre is not None and post is not None and post == pre:
            labels.append("same")
        elif (
            pre is not None
            and post is not None
            and label is not None
            and post_idx in survivors
            and survivors[post_idx] == landing
            and landing < len(label.tokens)
            and label.tokens[landing] == post
            and pre != label.tokens[landing]
        ):
            labels.append("corrected")
        else:
            labels.append("changed_uncorrected")
    return labels


def reflection_usage(
    raws: list[RawPrediction],
    labels: list[PeptideSequence | None],
    vocab: Vocabulary,
) -> ReflectionUsage:
    usage = ReflectionUsage(sequences=len(raws))
    for raw, label in zip(raws, labels):
        kinds = classify_reflections(raw, label, vocab)
        if vocab.reflect_id in raw.tokens:
            usage.sequences_with_reflect += 1
        usage.events += len(kinds)
        usage.same += sum(1 for k in kinds if k == "same")
        usage.corrected += sum(1 for k in kinds if k == "corrected")
    return usage


@dataclass
class DetailRow:
    psm_id: str
    raw: str
    answer: str
    label: str
    matched: int
    predicted: int
    exact: bool
    log_probs: tuple[float, ...]


@dataclass
class EvalReport:
    matched_aa: int
    total_aa: int
    matched_peptides: int
    total_peptides: int
    spectra: int
    usage: ReflectionUsage
    details: list[DetailRow] = field(default_factory=list)

    @property
    def aa_precision(self) -> float:
        return self.matched_aa / self.total_aa if self.total_aa else 0.0

    @property
    def peptide_precision(self) -> float:
        return self.matched_peptides / self.total_peptides if self.total_peptides else 0.0

    @property
    def peptide_recall(self) -> float:
        return self.matched_peptides / self.spectra if self.spectra else 0.0

    def summary(self) -> str:
        lines = [
            f"spectra\t{self.spectra}",
            f"aa_precision\t{self.aa_precision:.4f}\t({self.matched_aa}/{self.total_aa})",
            f"peptide_precision\t{self.peptide_precision:.4f}\t({self.matched_peptides}/{self.total_peptides})",
            f"peptide_recall\t{self.peptide_recall:.4f}",
            f"reflect_use\t{self.usage.use:.4f}",
            f"reflect_corrected\t{self.usage.corrected_rate:.4f}",
            f"reflect_same\t{self.usage.same_rate:.4f}",
            f"reflect_changed_uncorrected\t{self.usage.changed_uncorrected_rate:.4f}",
        ]
        return "\n".join(lines)


def evaluate(
    model: SpectrumTransformer,
    psms: list[PSM],
    beam: int = 1,
    max_len: int | None = None,
    preprocess: PreprocessConfig = PreprocessConfig(),
) -> EvalReport:
    """Decode every PSM, post-process, and aggregate the metrics."""
    if not psms:
        raise ValueError("cannot evaluate an empty PSM list")
    for psm in psms:
        if psm.label is None:
            raise ValueError(f"PSM {psm.id} has no label")
    vocab = model.vocab
    spectra = [preprocess_spectrum(p.spectrum, preprocess) for p in psms]
    if beam == 1:
        raws = greedy_decode_batch(model, spectra, max_len=max_len)
    else:
        raws = [
            beam_decode(model, s, beam=beam, max_len=max_len)[0].prediction
            for s in spectra
        ]
    usage = reflection_usage(raws, [p.label for p in psms], vocab)
    matched_aa = total_aa = matched_pep = 0
    details = []
    for psm, raw in zip(psms, raws):
        answer = postprocess_reflection(raw.tokens, vocab)
        matched, predicted = aa_precision_counts(answer, psm.label)
        exact = peptide_match(answer, psm.label)
        matched_aa += matched
        total_aa += predicted
        matched_pep += int(exact)
        details.append(
            DetailRow(
                psm_id=psm.id,
                raw=render_tokens(vocab, raw.tokens),
                answer=render_tokens(vocab, answer),
                label=render_tokens(vocab, psm.label.tokens),
                matched=matched,
                predicted=predicted,
                exact=exact,
                log_probs=raw.log_probs,
            )
        )
    return EvalReport(
        matched_aa=matched_aa,
        total_aa=total_aa,
        matched_peptides=matched_pep,
        total_peptides=len(psms),
        spectra=len(psms),
        usage=usage,
        details=details,
    )
