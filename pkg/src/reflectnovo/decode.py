"""Autoregressive decoding and reflection post-processing.

All decoders operate on preprocessed spectra. Predicted raw sequences may
contain the reflection token; post-processing removes each reflection
together with the token it retracts, yielding the final answer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import torch

from .augment import strip_reflections
from .model import SpectrumTransformer
from .spectrum import Spectrum
from .vocab import Vocabulary


@dataclass(frozen=True)
class RawPrediction:
    """Decoded tokens (reflects included, eos last when terminated), their
    log-probabilities, and the cumulative score."""

    tokens: tuple[int, ...]
    log_probs: tuple[float, ...]
    terminated: bool

    @property
    def score(self) -> float:
        return float(sum(self.log_probs))


@dataclass(frozen=True)
class Hypothesis:
    prediction: RawPrediction
    rank: int

    @property
    def score(self) -> float:
        return self.prediction.score


_RAW_TOKEN_RE = re.compile(r"(<reflect>|\$|[A-Z](?:[+-]\d+(?:\.\d+)?)?)")


def parse_token_string(vocab: Vocabulary, text: str) -> list[int]:
    """Parse case-study notation (residues, ``<reflect>``, terminal ``$``)."""
    pieces = _RAW_TOKEN_RE.findall(text)
    if "".join(pieces) != text:
        raise ValueError(f"malformed token string {text!r}")
    return [vocab.id_of(piece) for piece in pieces]


def render_tokens(vocab: Vocabulary, tokens) -> str:
    return "".join(vocab.symbol_of(t) for t in tokens)


def _validate_prefix(vocab: Vocabulary, prefix) -> None:
    for tok in prefix:
        if not (vocab.is_residue(tok) or tok == vocab.reflect_id):
            raise ValueError(
                f"prefix may contain only residues and <reflect>, got {vocab.symbol_of(tok)!r}"
            )


def _spectrum_state(model: SpectrumTransformer, spectrum: Spectrum):
    mz = torch.as_tensor(spectrum.mz, dtype=model.dtype).unsqueeze(0)
    intensity = torch.as_tensor(spectrum.intensity, dtype=model.dtype).unsqueeze(0)
    padding = torch.zeros(1, spectrum.num_peaks, dtype=torch.bool)
    with torch.no_grad():
        memory = model.encode_batch(mz, intensity, padding)
    mass = torch.tensor([spectrum.precursor_mass], dtype=model.dtype)
    charge = torch.tensor([spectrum.precursor_charge], dtype=torch.long)
    return memory, padding, mass, charge


def _step_log_probs(
    model: SpectrumTransformer, memory, padding, mass, charge, token_rows: list[list[int]]
) -> np.ndarray:
    """Masked next-token log-probabilities for each hypothesis row."""
    n = len(token_rows)
    tokens = torch.tensor(token_rows, dtype=torch.long)
    with torch.no_grad():
        logits = model.decoder_logits(
            memory.expand(n, -1, -1),
            padding.expand(n, -1),
            tokens,
            mass.expand(n),
            charge.expand(n),
        )[:, -1, :]
        logits = logits.clone()
        logits[:, model.vocab.pad_id] = float("-inf")
        logits[:, model.vocab.sos_id] = float("-inf")
        return torch.log_softmax(logits.double(), dim=-1).numpy()


def greedy_decode(
    model: SpectrumTransformer,
    spectrum: Spectrum,
    max_len: int | None = None,
    prefix: tuple[int, ...] = (),
) -> RawPrediction:
    """Argmax decoding; stops at eos or ``max_len`` raw tokens. Ties break
    toward the lowest token id. An optional prefix is forced verbatim."""
    vocab = model.vocab
    prefix = tuple(prefix)
    _validate_prefix(vocab, prefix)
    if max_len is None:
        max_len = model.cfg.max_decode_len - 1
    if len(prefix) >= max_len:
        raise ValueError("prefix must be shorter than max_len")
    memory, padding, mass, charge = _spectrum_state(model, spectrum)
    tokens: list[int] = []
    lps: list[float] = []
    terminated = False
    while len(tokens) < max_len:
        row = _step_log_probs(
            model, memory, padding, mass, charge, [[vocab.sos_id, *tokens]]
        )[0]
        if len(tokens) < len(prefix):
            tok = prefix[len(tokens)]
        else:
            tok = int(np.argmax(row))
        tokens.append(tok)
        lps.append(float(row[tok]))
        if tok == vocab.eos_id:
            terminated = True
            break
    return RawPrediction(tokens=tuple(tokens), log_probs=tuple(lps), terminated=terminated)


def forced_prefix_decode(
    model: SpectrumTransformer,
    spectrum: Spectrum,
    prefix,
    max_len: int | None = None,
    beam: int = 1,
) -> RawPrediction:
    """Decode with the given residue/reflect prefix forced verbatim; the
    continuation is greedy (or beam when ``beam > 1``)."""
    prefix = tuple(prefix)
    _validate_prefix(model.vocab, prefix)
    if beam == 1:
        return greedy_decode(model, spectrum, max_len=max_len, prefix=prefix)
    hyps = beam_decode(model, spectrum, beam=beam, max_len=max_len, prefix=prefix)
    return hyps[0].prediction


def beam_decode(
    model: SpectrumTransformer,
    spectrum: Spectrum,
    beam: int,
    max_len: int | None = None,
    prefix: tuple[int, ...] = (),
) -> list[Hypothesis]:
    """Length-synchronous beam search by cumulative log-probability.

    Finished hypotheses (eos) are retired; expansion continues until all
    live hypotheses finish or hit ``max_len`` raw tokens. Returns up to
    ``beam`` hypotheses sorted by descending score, ties broken by token
    ids ascending.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    vocab = model.vocab
    _validate_prefix(vocab, prefix)
    if max_len is None:
        max_len = model.cfg.max_decode_len - 1
    if len(prefix) >= max_len:
        raise ValueError("prefix must be shorter than max_len")
    memory, padding, mass, charge = _spectrum_state(model, spectrum)

    # Each live entry: (tokens-after-sos, log_probs)
    live: list[tuple[list[int], list[float]]] = [([], [])]
    for forced in prefix:
        rows = [[vocab.sos_id, *tokens] for tokens, _ in live]
        log_probs = _step_log_probs(model, memory, padding, mass, charge, rows)
        tokens, lps = live[0]
        live = [([*tokens, forced], [*lps, float(log_probs[0][forced])])]

    finished: list[tuple[list[int], list[float], bool]] = []
    while live and len(live[0][0]) < max_len:
        rows = [[vocab.sos_id, *tokens] for tokens, _ in live]
        log_probs = _step_log_probs(model, memory, padding, mass, charge, rows)
        candidates = []
        for (tokens, lps), row in zip(live, log_probs):
            base = sum(lps)
            for tok in range(len(row)):
                if np.isfinite(row[tok]):
                    candidates.append(
                        (base + row[tok], tokens, lps, tok, float(row[tok]))
                    )
        candidates.sort(key=lambda c: (-c[0], c[1] + [c[3]]))
        next_live = []
        for score, tokens, lps, tok, lp in candidates[:beam]:
            new_tokens = [*tokens, tok]
            new_lps = [*lps, lp]
            if tok == vocab.eos_id:
                finished.append((new_tokens, new_lps, True))
            else:
                next_live.append((new_tokens, new_lps))
        live = next_live
    for tokens, lps in live:
        finished.append((tokens, lps, False))

    finished.sort(key=lambda f: (-sum(f[1]), f[0]))
    out = []
    for rank, (tokens, lps, terminated) in enumerate(finished[:beam]):
        out.append(
            Hypothesis(
                prediction=RawPrediction(
                    tokens=tuple(tokens), log_probs=tuple(lps), terminated=terminated
                ),
                rank=rank,
            )
        )
    return out


def greedy_decode_batch(
    model: SpectrumTransformer,
    spectra: list[Spectrum],
    max_len: int | None = None,
    batch_size: int = 64,
) -> list[RawPrediction]:
    """Greedy decode many spectra at once (used by corpus evaluation)."""
    if max_len is None:
        max_len = model.cfg.max_decode_len - 1
    vocab = model.vocab
    results: list[RawPrediction | None] = [None] * len(spectra)
    for start in range(0, len(spectra), batch_size):
        chunk = spectra[start : start + batch_size]
        B = len(chunk)
        K = max(s.num_peaks for s in chunk)
        mz = torch.zeros(B, K, dtype=model.dtype)
        intensity = torch.zeros(B, K, dtype=model.dtype)
        padding = torch.ones(B, K, dtype=torch.bool)
        mass = torch.zeros(B, dtype=model.dtype)
        charge = torch.zeros(B, dtype=torch.long)
        for i, s in enumerate(chunk):
            mz[i, : s.num_peaks] = torch.as_tensor(s.mz, dtype=model.dtype)
            intensity[i, : s.num_peaks] = torch.as_tensor(s.intensity, dtype=model.dtype)
            padding[i, : s.num_peaks] = False
            mass[i] = s.precursor_mass
            charge[i] = s.precursor_charge
        with torch.no_grad():
            memory = model.encode_batch(mz, intensity, padding)
        rows = torch.full((B, 1), vocab.sos_id, dtype=torch.long)
        done = [False] * B
        tokens: list[list[int]] = [[] for _ in range(B)]
        lps: list[list[float]] = [[] for _ in range(B)]
        terminated = [False] * B
        for _ in range(max_len):
            with torch.no_grad():
                logits = model.decoder_logits(memory, padding, rows, mass, charge)[
                    :, -1, :
                ].clone()
                logits[:, vocab.pad_id] = float("-inf")
                logits[:, vocab.sos_id] = float("-inf")
                log_probs = torch.log_softmax(logits.double(), dim=-1).numpy()
            next_tokens = np.argmax(log_probs, axis=-1)
            for i in range(B):
                if done[i]:
                    next_tokens[i] = vocab.pad_id
                    continue
                tok = int(next_tokens[i])
                tokens[i].append(tok)
                lps[i].append(float(log_probs[i][tok]))
                if tok == vocab.eos_id:
                    done[i] = True
                    terminated[i] = True
            if all(done):
                break
            rows = torch.cat(
                [rows, torch.as_tensor(next_tokens, dtype=torch.long).unsqueeze(1)],
                dim=1,
            )
        for i in range(B):
            results[start + i] = RawPrediction(
                tokens=tuple(tokens[i]),
                log_probs=tuple(lps[i]),
                terminated=terminated[i],
            )
    return results


def postprocess_reflection(tokens, vocab: Vocabulary) -> list[int]:
    """Strip reflections: scanning left to right, each reflect deletes
    itself and the nearest preceding surviving token; a leading reflect
    deletes only itself. A trailing eos is removed. The result contains
    residues only."""
    toks = list(tokens)
    if toks and toks[-1] == vocab.eos_id:
        toks = toks[:-1]
    for tok in toks:
        if not (vocab.is_residue(tok) or tok == vocab.reflect_id):
            raise ValueError(
                f"unexpected token {vocab.symbol_of(tok)!r} in raw prediction"
            )
    return strip_reflections(toks, vocab.reflect_id)
