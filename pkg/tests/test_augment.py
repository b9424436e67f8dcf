import itertools

import numpy as np
import pytest

from reflectnovo import (
    AugmentConfig,
    PeptideSequence,
    augment_batch,
    build_vocabulary,
    finalize_target,
    inject_rple,
    inject_rpre,
)
from reflectnovo.augment import RPLE, RPRE, AugmentedTarget, strip_reflections


def recursive_strip(seq, reflect_id):
    """Independent oracle: repeatedly resolve the leftmost reflect."""
    seq = list(seq)
    for i, tok in enumerate(seq):
        if tok == reflect_id:
            if i == 0:
                return recursive_strip(seq[1:], reflect_id)
            return recursive_strip(seq[: i - 1] + seq[i + 1 :], reflect_id)
    return seq


@pytest.fixture(scope="module")
def vocab():
    return build_vocabulary(alphabet=list("GAS"))


def ids(vocab, text):
    return [vocab.id_of(ch) for ch in text]


def test_rpre_forced_example(vocab):
    # A = [G, A, S], inject at t=2 with error G
    seq = PeptideSequence(tuple(ids(vocab, "GAS")))
    g, a, s = ids(vocab, "GAS")
    out = inject_rpre(seq, vocab, np.random.default_rng(0), position=2, error_token=g)
    assert list(out.tokens) == [g, g, vocab.reflect_id, a, s]
    assert list(out.loss_mask) == [True, False, True, True, True]
    assert out.records[0].strategy == RPRE
    assert not out.records[0].is_noop


def test_rpre_noop(vocab):
    seq = PeptideSequence(tuple(ids(vocab, "GAS")))
    a = vocab.id_of("A")
    out = inject_rpre(seq, vocab, np.random.default_rng(0), position=2, error_token=a)
    assert out.records[0].is_noop
    # masked even when the injected token equals the original
    assert list(out.loss_mask) == [True, False, True, True, True]


def test_rpre_length_one(vocab):
    g, a = vocab.id_of("G"), vocab.id_of("A")
    seq = PeptideSequence((g,))
    out = inject_rpre(seq, vocab, np.random.default_rng(0), position=1, error_token=a)
    assert list(out.tokens) == [a, vocab.reflect_id, g]


def test_rple_draws_from_lookahead(vocab):
    seq = PeptideSequence(tuple(ids(vocab, "GASA")))
    for trial in range(50):
        out = inject_rple(seq, vocab, np.random.default_rng(trial))
        rec = out.records[0]
        assert rec.strategy == RPLE
        lookahead = seq.tokens[rec.position :]
        assert rec.error_token in lookahead


def test_rple_singleton_lookahead(vocab):
    g, a = vocab.id_of("G"), vocab.id_of("A")
    seq = PeptideSequence((g, a))
    out = inject_rple(seq, vocab, np.random.default_rng(0), position=1)
    assert out.records[0].error_token == a


def test_rple_length_one_falls_back_to_rpre(vocab):
    seq = PeptideSequence((vocab.id_of("G"),))
    out = inject_rple(seq, vocab, np.random.default_rng(0))
    assert out.records[0].strategy == RPRE


def test_exhaustive_strip_pairs(vocab):
    """Recoverability over every sequence of length <= 4 over a 3-residue
    alphabet and every (position, error token) choice."""
    residues = [vocab.id_of(ch) for ch in "GAS"]
    cases = 0
    for n in range(1, 5):
        for tokens in itertools.product(residues, repeat=n):
            seq = PeptideSequence(tokens)
            for t in range(1, n + 1):
                for err in residues:
                    out = inject_rpre(
                        seq, vocab, np.random.default_rng(0), position=t, error_token=err
                    )
                    stripped = strip_reflections(out.tokens, vocab.reflect_id)
                    oracle = recursive_strip(out.tokens, vocab.reflect_id)
                    assert stripped == list(tokens)
                    assert oracle == list(tokens)
                    cases += 1
    assert cases == sum(3**n * n * 3 for n in range(1, 5))


def test_mask_marks_exactly_the_errors(vocab):
    rng = np.random.default_rng(5)
    residues = [vocab.id_of(ch) for ch in "GAS"]
    for _ in range(200):
        n = int(rng.integers(1, 8))
        seq = PeptideSequence(tuple(int(rng.choice(residues)) for _ in range(n)))
        out = inject_rpre(seq, vocab, rng)
        false_positions = [i for i, m in enumerate(out.loss_mask) if not m]
        assert len(false_positions) == len(out.records)
        for idx in false_positions:
            assert out.tokens[idx] == out.records[0].error_token


def test_augment_batch_alpha_zero(vocab):
    seqs = [PeptideSequence(tuple(ids(vocab, "GAS"))) for _ in range(8)]
    batch = [(None, s) for s in seqs]
    out = augment_batch(batch, AugmentConfig(alpha=0.0), vocab, np.random.default_rng(0))
    for (_, target), seq in zip(out, seqs):
        assert target.tokens == seq.tokens
        assert all(target.loss_mask)
        assert target.records == ()


def test_augment_batch_alpha_one(vocab):
    seqs = [PeptideSequence(tuple(ids(vocab, "GASG"))) for _ in range(8)]
    batch = [(None, s) for s in seqs]
    out = augment_batch(batch, AugmentConfig(alpha=1.0), vocab, np.random.default_rng(0))
    for _, target in out:
        assert vocab.reflect_id in target.tokens


def test_augment_batch_statistics(vocab):
    rng = np.random.default_rng(7)
    residues = [vocab.id_of(ch) for ch in "GAS"]
    seqs = []
    for _ in range(10_000):
        n = int(rng.integers(4, 9))
        seqs.append(PeptideSequence(tuple(int(rng.choice(residues)) for _ in range(n))))
    batch = [(None, s) for s in seqs]
    cfg = AugmentConfig(alpha=0.9, strategy_mix=0.5)
    out = augment_batch(batch, cfg, vocab, np.random.default_rng(7))
    injected = [t for _, t in out if t.records]
    frac = len(injected) / len(out)
    assert 0.88 <= frac <= 0.92
    rple = sum(1 for t in injected if t.records[0].strategy == RPLE)
    assert 0.47 <= rple / len(injected) <= 0.53


def test_augment_batch_online_freshness(vocab):
    seqs = [PeptideSequence(tuple(ids(vocab, "GASGAS"))) for _ in range(64)]
    batch = [(None, s) for s in seqs]
    cfg = AugmentConfig(alpha=1.0)
    rng = np.random.default_rng(3)
    first = augment_batch(batch, cfg, vocab, rng)
    second = augment_batch(batch, cfg, vocab, rng)
    differing = sum(
        1 for (_, a), (_, b) in zip(first, second) if a.tokens != b.tokens
    )
    assert differing > len(batch) // 2


def test_multi_injection(vocab):
    seq = PeptideSequence(tuple(ids(vocab, "GASGAS")))
    cfg = AugmentConfig(alpha=1.0, strategy_mix=0.0, max_injections_per_seq=3)
    out = augment_batch([(None, seq)], cfg, vocab, np.random.default_rng(1))
    target = out[0][1]
    assert len(target.records) == 3
    positions = [r.position for r in target.records]
    assert len(set(positions)) == 3
    assert strip_reflections(target.tokens, vocab.reflect_id) == list(seq.tokens)
    assert recursive_strip(target.tokens, vocab.reflect_id) == list(seq.tokens)
    false_count = sum(1 for m in target.loss_mask if not m)
    assert false_count == 3


def test_finalize_target(vocab):
    g, a, s = ids(vocab, "GAS")
    target = AugmentedTarget(
        tokens=(g, a, vocab.reflect_id, s),
        loss_mask=(True, False, True, True),
    )
    dec_in, sup, mask = finalize_target(target, vocab)
    assert dec_in == [vocab.sos_id, g, a, vocab.reflect_id, s]
    assert sup == [g, a, vocab.reflect_id, s, vocab.eos_id]
    assert mask == [True, False, True, True, True]
    assert len(dec_in) == len(sup) == len(mask)


def test_finalize_single_token(vocab):
    g = vocab.id_of("G")
    target = AugmentedTarget(tokens=(g,), loss_mask=(True,))
    dec_in, sup, _ = finalize_target(target, vocab)
    assert dec_in == [vocab.sos_id, g]
    assert sup == [g, vocab.eos_id]


def test_mismatched_mask_rejected(vocab):
    g = vocab.id_of("G")
    with pytest.raises(ValueError):
        AugmentedTarget(tokens=(g, g), loss_mask=(True,))


def test_empty_batch_rejected(vocab):
    with pytest.raises(ValueError):
        augment_batch([], AugmentConfig(), vocab, np.random.default_rng(0))
