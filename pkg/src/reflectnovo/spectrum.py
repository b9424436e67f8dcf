"""Spectrum data model, MGF ingestion/emission, preprocessing, fragment
theory, and a seeded synthetic corpus generator for desk-scale training."""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

from .vocab import (
    PROTON_MASS,
    WATER_MASS,
    PeptideSequence,
    Vocabulary,
    decode_tokens,
    encode_peptide,
    peptide_neutral_mass,
)


class MgfError(ValueError):
    """Malformed MGF input; message carries the offending line number."""


class EmptySpectrumError(ValueError):
    """No peaks survive preprocessing."""


@dataclass(frozen=True)
class Spectrum:
    """An observed spectrum: peak list, precursor charge, neutral precursor mass.

    ``mz`` and ``intensity`` are parallel float64 arrays sorted ascending by
    m/z. ``precursor_mass`` is neutral (uncharged); conversions to and from
    the MGF PEPMASS convention are explicit in :func:`parse_mgf` /
    :func:`emit_mgf`.
    """

    mz: np.ndarray
    intensity: np.ndarray
    precursor_charge: int
    precursor_mass: float

    def __post_init__(self):
        mz = np.asarray(self.mz, dtype=np.float64)
        intensity = np.asarray(self.intensity, dtype=np.float64)
        if mz.shape != intensity.shape or mz.ndim != 1:
            raise ValueError("mz and intensity must be 1-d arrays of equal length")
        if np.any(intensity < 0):
            raise ValueError("intensities must be nonnegative")
        if self.precursor_charge < 1:
            raise ValueError("precursor charge must be >= 1")
        if not self.precursor_mass > 0:
            raise ValueError("precursor mass must be positive")
        order = np.argsort(mz, kind="stable")
        object.__setattr__(self, "mz", mz[order])
        object.__setattr__(self, "intensity", intensity[order])

    @property
    def num_peaks(self) -> int:
        return int(self.mz.shape[0])


@dataclass(frozen=True)
class PSM:
    """A spectrum with an optional ground-truth peptide label."""

    spectrum: Spectrum
    label: PeptideSequence | None
    id: str


@dataclass(frozen=True)
class PreprocessConfig:
    mz_min: float = 50.0
    mz_max: float = 2500.0
    top_k: int = 150


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic spectrum generator."""

    n_min: int = 6
    n_max: int = 12
    noise_peaks_mean: float = 10.0
    peak_dropout: float = 0.1
    intensity_range: tuple[float, float] = (0.1, 1.0)
    mz_jitter: float = 0.01
    max_frag_charge: int = 2

    def __post_init__(self):
        if not (1 <= self.n_min <= self.n_max):
            raise ValueError("need 1 <= n_min <= n_max")
        # p_drop == 1 is allowed so the all-peaks-dropped edge case is testable.
        if not (0.0 <= self.peak_dropout <= 1.0):
            raise ValueError("peak dropout must be in [0, 1]")
        if self.mz_jitter < 0:
            raise ValueError("m/z jitter must be nonnegative")


def parse_mgf(stream, vocab: Vocabulary | None = None) -> list[PSM]:
    """Parse the MGF subset (BEGIN IONS / TITLE / PEPMASS / CHARGE / SEQ /
    peak lines / END IONS) into PSMs.

    The neutral precursor mass is reconstructed as
    ``pepmass * charge - charge * proton``. SEQ lines are tokenized with
    ``vocab`` (default: the full-20 vocabulary).
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    if vocab is None:
        from .vocab import build_vocabulary

        vocab = build_vocabulary()
    psms: list[PSM] = []
    in_block = False
    begin_line = 0
    title = None
    pepmass = None
    charge = None
    seq_text = None
    mz: list[float] = []
    intensity: list[float] = []

    lineno = 0
    for lineno, raw_line in enumerate(stream, start=1):
        line = raw_line.strip()
        if not line:
            continue
        if line == "BEGIN IONS":
            if in_block:
                raise MgfError(f"line {lineno}: nested BEGIN IONS")
            in_block = True
            begin_line = lineno
            title, pepmass, charge, seq_text = None, None, None, None
            mz, intensity = [], []
        elif line == "END IONS":
            if not in_block:
                raise MgfError(f"line {lineno}: END IONS without BEGIN IONS")
            if pepmass is None:
                raise MgfError(f"line {begin_line}: block missing PEPMASS")
            c = 1 if charge is None else charge
            neutral = pepmass * c - c * PROTON_MASS
            spectrum = Spectrum(
                mz=np.array(mz, dtype=np.float64),
                intensity=np.array(intensity, dtype=np.float64),
                precursor_charge=c,
                precursor_mass=neutral,
            )
            label = encode_peptide(vocab, seq_text) if seq_text else None
            psms.append(
                PSM(spectrum=spectrum, label=label, id=title or f"scan={len(psms)}")
            )
            in_block = False
        elif not in_block:
            raise MgfError(f"line {lineno}: content outside BEGIN IONS block")
        elif line.startswith("TITLE="):
            title = line[len("TITLE=") :]
        elif line.startswith("PEPMASS="):
            try:
                pepmass = float(line[len("PEPMASS=") :].split()[0])
            except ValueError:
                raise MgfError(f"line {lineno}: non-numeric PEPMASS") from None
        elif line.startswith("CHARGE="):
            value = line[len("CHARGE=") :].rstrip("+")
            try:
                charge = int(value)
            except ValueError:
                raise MgfError(f"line {lineno}: malformed CHARGE") from None
        elif line.startswith("SEQ="):
            seq_text = line[len("SEQ=") :]
        else:
            fields = line.split()
            if len(fields) != 2:
                raise MgfError(f"line {lineno}: malformed peak line {line!r}")
            try:
                mz.append(float(fields[0]))
                intensity.append(float(fields[1]))
            except ValueError:
                raise MgfError(f"line {lineno}: non-numeric peak line") from None
    if in_block:
        raise MgfError(f"line {begin_line}: BEGIN IONS without END IONS")
    return psms


def emit_mgf(psms: list[PSM], vocab: Vocabulary | None = None) -> str:
    """Render PSMs in the MGF subset; 5 decimals for m/z, 6 for intensity."""
    out = []
    for psm in psms:
        s = psm.spectrum
        out.append("BEGIN IONS")
        out.append(f"TITLE={psm.id}")
        pepmass = (s.precursor_mass + s.precursor_charge * PROTON_MASS) / s.precursor_charge
        out.append(f"PEPMASS={pepmass:.5f}")
        out.append(f"CHARGE={s.precursor_charge}+")
        if psm.label is not None:
            if vocab is None:
                from .vocab import build_vocabulary

                vocab = build_vocabulary()
            out.append(f"SEQ={decode_tokens(vocab, psm.label)}")
        for m, i in zip(s.mz, s.intensity):
            out.append(f"{m:.5f} {i:.6f}")
        out.append("END IONS")
    return "\n".join(out) + ("\n" if out else "")


def preprocess_spectrum(raw: Spectrum, cfg: PreprocessConfig = PreprocessConfig()) -> Spectrum:
    """Filter to the m/z window, keep the top-k peaks by intensity, and
    rescale intensities to unit Euclidean norm."""
    if raw.num_peaks == 0:
        raise EmptySpectrumError("empty spectrum")
    keep = (raw.mz >= cfg.mz_min) & (raw.mz <= cfg.mz_max)
    mz, intensity = raw.mz[keep], raw.intensity[keep]
    if mz.size == 0:
        raise EmptySpectrumError("empty spectrum")
    if mz.size > cfg.top_k:
        top = np.argsort(intensity, kind="stable")[-cfg.top_k :]
        mz, intensity = mz[top], intensity[top]
    norm = float(np.linalg.norm(intensity))
    if norm > 0:
        intensity = intensity / norm
    return replace(raw, mz=mz, intensity=intensity)


def theoretical_ions(
    vocab: Vocabulary, peptide: PeptideSequence, max_frag_charge: int = 1
) -> np.ndarray:
    """Theoretical b/y fragment m/z values, deduplicated and sorted.

    For prefix length i in 1..n-1 and fragment charge z:
    ``b = (prefix_mass + z * proton) / z`` and
    ``y = (suffix_mass + water + z * proton) / z``.
    """
    n = len(peptide)
    if n < 2:
        raise ValueError("fragment ions require peptide length >= 2")
    masses = np.array([vocab.residue_mass(t) for t in peptide.tokens])
    prefix = np.cumsum(masses)[:-1]
    suffix = prefix[-1] + masses[-1] - prefix
    ions = []
    for z in range(1, max_frag_charge + 1):
        ions.append((prefix + z * PROTON_MASS) / z)
        ions.append((suffix + WATER_MASS + z * PROTON_MASS) / z)
    return np.unique(np.concatenate(ions))


def synthesize_psm(
    vocab: Vocabulary,
    peptide: PeptideSequence,
    cfg: SynthConfig,
    rng: np.random.Generator,
    psm_id: str = "synth",
) -> PSM:
    """Simulate a spectrum for a peptide: jittered b/y ions with dropout,
    Poisson noise peaks, and an exact neutral precursor mass."""
    charge = int(rng.integers(1, 3))
    frag_charge = min(charge, cfg.max_frag_charge) if len(peptide) >= 2 else 1
    if len(peptide) >= 2:
        ions = theoretical_ions(vocab, peptide, max_frag_charge=frag_charge)
    else:
        ions = np.empty(0)
    keep = rng.random(ions.shape[0]) >= cfg.peak_dropout
    ions = ions[keep]
    if cfg.mz_jitter > 0 and ions.size:
        ions = ions + rng.normal(0.0, cfg.mz_jitter, size=ions.shape[0])
    neutral = peptide_neutral_mass(vocab, peptide)
    n_noise = int(rng.poisson(cfg.noise_peaks_mean))
    noise = rng.uniform(50.0, neutral + 20.0, size=n_noise)
    mz = np.concatenate([ions, noise])
    lo, hi = cfg.intensity_range
    intensity = rng.uniform(lo, hi, size=mz.shape[0])
    spectrum = Spectrum(
        mz=mz,
        intensity=intensity,
        precursor_charge=charge,
        precursor_mass=neutral,
    )
    return PSM(spectrum=spectrum, label=peptide, id=psm_id)


def generate_corpus(
    vocab: Vocabulary,
    cfg: SynthConfig,
    count: int,
    seed: int,
) -> tuple[list[PSM], list[PSM]]:
    """Generate ``count`` PSMs over distinct peptides and split 90/10.

    Distinct peptide strings guarantee the train/test sets are disjoint.
    Each PSM derives its own rng stream from (seed, index), so generation
    is reproducible and order-independent.
    """
    if count < 2:
        raise ValueError("need count >= 2 to split train/test")
    n_res = len(vocab.residues)
    capacity = sum(n_res**n for n in range(cfg.n_min, cfg.n_max + 1))
    if capacity < count:
        raise ValueError(
            f"alphabet too small: {capacity} distinct peptides available, {count} requested"
        )
    pep_rng = np.random.default_rng([seed, 0])
    seen: set[tuple[int, ...]] = set()
    peptides: list[PeptideSequence] = []
    while len(peptides) < count:
        n = int(pep_rng.integers(cfg.n_min, cfg.n_max + 1))
        tokens = tuple(
            int(t)
            for t in pep_rng.integers(
                vocab.first_residue_id, vocab.first_residue_id + n_res, size=n
            )
        )
        if tokens in seen:
            continue
        seen.add(tokens)
        peptides.append(PeptideSequence(tokens=tokens))
    psms = [
        synthesize_psm(
            vocab, pep, cfg, np.random.default_rng([seed, 1 + i]), psm_id=f"synth-{i}"
        )
        for i, pep in enumerate(peptides)
    ]
    n_test = max(1, count // 10)
    return psms[:-n_test], psms[-n_test:]
