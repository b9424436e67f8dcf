"""Residue vocabulary: tokens, masses, and peptide string conversion.

The token inventory is the set of amino acid residues (cysteine always
carries the carbamidomethyl adduct as a single ``C+57.021`` token, oxidized
methionine is the separate token ``M+15.995``) plus four special tokens:
padding, start-of-sequence, end-of-sequence (printed ``$``) and the
reflection token (printed ``<reflect>``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# Monoisotopic residue masses in Da (residue = free amino acid minus water).
CANONICAL_MASSES = {
    "G": 57.021464,
    "A": 71.037114,
    "S": 87.032028,
    "P": 97.052764,
    "V": 99.068414,
    "T": 101.047670,
    "C": 103.009185,
    "L": 113.084064,
    "I": 113.084064,
    "N": 114.042927,
    "D": 115.026943,
    "Q": 128.058578,
    "K": 128.094963,
    "E": 129.042593,
    "M": 131.040485,
    "H": 137.058912,
    "F": 147.068414,
    "R": 156.101111,
    "Y": 163.063329,
    "W": 186.079313,
}

CARBAMIDOMETHYL = 57.021464
OXIDATION = 15.994915

WATER_MASS = 18.010565
PROTON_MASS = 1.007276

PAD_TOKEN = "<pad>"
SOS_TOKEN = "<sos>"
EOS_TOKEN = "$"
REFLECT_TOKEN = "<reflect>"

# Modifications supported by build_vocabulary, keyed by name.
_KNOWN_MODIFICATIONS = {
    "M+15.995": ("M", OXIDATION),
    "C+57.021": ("C", CARBAMIDOMETHYL),
}

_TOKEN_RE = re.compile(r"([A-Z](?:[+-]\d+(?:\.\d+)?)?)")


class VocabularyError(ValueError):
    """Raised for malformed vocabulary configuration or unknown tokens."""


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token table with residue masses and id bijection.

    Ids are contiguous from 0 in the order pad, sos, eos, reflect, then the
    residues in their configured order. Special tokens carry no mass.
    """

    residues: tuple[str, ...]
    masses: tuple[float, ...]
    pad_id: int = 0
    sos_id: int = 1
    eos_id: int = 2
    reflect_id: int = 3
    _symbol_to_id: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(set(self.residues)) != len(self.residues):
            raise VocabularyError("duplicate residue symbols")
        if any(m <= 0 for m in self.masses):
            raise VocabularyError("residue masses must be positive")
        mapping = {
            PAD_TOKEN: self.pad_id,
            SOS_TOKEN: self.sos_id,
            EOS_TOKEN: self.eos_id,
            REFLECT_TOKEN: self.reflect_id,
        }
        for i, sym in enumerate(self.residues):
            mapping[sym] = self.first_residue_id + i
        object.__setattr__(self, "_symbol_to_id", mapping)

    @property
    def first_residue_id(self) -> int:
        return 4

    @property
    def residue_ids(self) -> range:
        return range(self.first_residue_id, self.size)

    @property
    def size(self) -> int:
        return len(self.residues) + 4

    def is_residue(self, token_id: int) -> bool:
        return self.first_residue_id <= token_id < self.size

    def id_of(self, symbol: str) -> int:
        try:
            return self._symbol_to_id[symbol]
        except KeyError:
            raise VocabularyError(f"unknown token {symbol!r}") from None

    def symbol_of(self, token_id: int) -> str:
        if token_id == self.pad_id:
            return PAD_TOKEN
        if token_id == self.sos_id:
            return SOS_TOKEN
        if token_id == self.eos_id:
            return EOS_TOKEN
        if token_id == self.reflect_id:
            return REFLECT_TOKEN
        if self.is_residue(token_id):
            return self.residues[token_id - self.first_residue_id]
        raise VocabularyError(f"token id {token_id} out of range")

    def residue_mass(self, token_id: int) -> float:
        """Monoisotopic mass of a residue token; specials are massless."""
        if not self.is_residue(token_id):
            raise VocabularyError(
                f"token {self.symbol_of(token_id)!r} is not a residue"
            )
        return self.masses[token_id - self.first_residue_id]


@dataclass(frozen=True)
class PeptideSequence:
    """A peptide as residue token ids (no special tokens), length >= 1."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise VocabularyError("peptide must contain at least one residue")

    def __len__(self) -> int:
        return len(self.tokens)


def build_vocabulary(
    alphabet: str | list[str] = "full20",
    modifications: tuple[str, ...] = ("C+57.021", "M+15.995"),
) -> Vocabulary:
    """Build the residue vocabulary.

    ``alphabet`` is either ``"full20"`` or an explicit list of one-letter
    residue symbols. Fixed modifications replace their base residue token
    (carbamidomethyl-C); variable ones add a separate token (oxidized M).
    """
    if alphabet == "full20":
        symbols = list(CANONICAL_MASSES)
    else:
        symbols = list(alphabet)
    if len(set(symbols)) != len(symbols):
        raise VocabularyError("duplicate residue symbols")
    for sym in symbols:
        if sym not in CANONICAL_MASSES:
            raise VocabularyError(f"unknown residue symbol {sym!r}")

    residues: list[str] = []
    masses: list[float] = []
    for sym in symbols:
        if sym == "C" and "C+57.021" in modifications:
            residues.append("C+57.021")
            masses.append(CANONICAL_MASSES["C"] + CARBAMIDOMETHYL)
        else:
            residues.append(sym)
            masses.append(CANONICAL_MASSES[sym])
    for mod in modifications:
        if mod not in _KNOWN_MODIFICATIONS:
            raise VocabularyError(f"unknown modification {mod!r}")
        base, delta = _KNOWN_MODIFICATIONS[mod]
        if mod == "C+57.021":
            continue  # fixed: replaces the base token above
        if base in symbols:
            residues.append(mod)
            masses.append(CANONICAL_MASSES[base] + delta)
    return Vocabulary(residues=tuple(residues), masses=tuple(masses))


def encode_peptide(vocab: Vocabulary, text: str) -> PeptideSequence:
    """Tokenize a peptide string, e.g. ``"KYFHNELM+15.995NY"``.

    Greedy left-to-right: each one-letter symbol optionally carries a
    ``+<mass>`` suffix naming a configured modification.
    """
    if not text:
        raise VocabularyError("empty peptide string")
    pieces = _TOKEN_RE.findall(text)
    if "".join(pieces) != text:
        raise VocabularyError(f"malformed peptide string {text!r}")
    ids = []
    for piece in pieces:
        tid = vocab.id_of(piece)
        if not vocab.is_residue(tid):
            raise VocabularyError(f"{piece!r} is not a residue token")
        ids.append(tid)
    return PeptideSequence(tokens=tuple(ids))


def decode_tokens(vocab: Vocabulary, tokens) -> str:
    """Render residue (and reflect/eos) token ids in string notation."""
    seq = tokens.tokens if isinstance(tokens, PeptideSequence) else tokens
    return "".join(vocab.symbol_of(t) for t in seq)


def peptide_neutral_mass(vocab: Vocabulary, seq: PeptideSequence) -> float:
    """Neutral monoisotopic peptide mass: residue masses plus one water."""
    return sum(vocab.residue_mass(t) for t in seq.tokens) + WATER_MASS
