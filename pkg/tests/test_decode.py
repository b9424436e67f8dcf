import itertools

import numpy as np
import pytest
import torch

from reflectnovo import (
    ModelConfig,
    PeptideSequence,
    beam_decode,
    build_vocabulary,
    forced_prefix_decode,
    greedy_decode,
    init_model,
    parse_token_string,
    postprocess_reflection,
    preprocess_spectrum,
    render_tokens,
)
from reflectnovo.augment import inject_rple, inject_rpre
from reflectnovo.decode import greedy_decode_batch


def recursive_strip(seq, reflect_id):
    seq = list(seq)
    for i, tok in enumerate(seq):
        if tok == reflect_id:
            if i == 0:
                return recursive_strip(seq[1:], reflect_id)
            return recursive_strip(seq[: i - 1] + seq[i + 1 :], reflect_id)
    return seq


@pytest.fixture(scope="module")
def full_vocab():
    return build_vocabulary()


@pytest.fixture(scope="module")
def test_spectra(tiny_corpus, preprocess_cfg):
    _, test_psms = tiny_corpus
    return [preprocess_spectrum(p.spectrum, preprocess_cfg) for p in test_psms]


class TestPostprocess:
    def test_case_study_corrected(self, full_vocab):
        raw = parse_token_string(
            full_vocab, "R<reflect>KYFHNELM+15.995NYVQEC+57.021QFDSETSL$"
        )
        out = postprocess_reflection(raw, full_vocab)
        assert render_tokens(full_vocab, out) == "KYFHNELM+15.995NYVQEC+57.021QFDSETSL"

    def test_case_study_noop(self, full_vocab):
        raw = parse_token_string(full_vocab, "KDFFTYME<reflect>E$")
        out = postprocess_reflection(raw, full_vocab)
        assert render_tokens(full_vocab, out) == "KDFFTYME"

    def test_steering_case(self, full_vocab):
        raw = parse_token_string(full_vocab, "RL<reflect>MNFYGFL")
        out = postprocess_reflection(raw, full_vocab)
        assert render_tokens(full_vocab, out) == "RMNFYGFL"

    def test_leading_reflect(self, full_vocab):
        raw = parse_token_string(full_vocab, "<reflect>KD$")
        out = postprocess_reflection(raw, full_vocab)
        assert render_tokens(full_vocab, out) == "KD"

    def test_exhaustive_against_recursive_oracle(self, full_vocab):
        """All sequences of length <= 6 over {K, D, <reflect>}."""
        k, d_tok = full_vocab.id_of("K"), full_vocab.id_of("D")
        alphabet = [k, d_tok, full_vocab.reflect_id]
        cases = 0
        for n in range(0, 7):
            for seq in itertools.product(alphabet, repeat=n):
                got = postprocess_reflection(list(seq), full_vocab)
                want = recursive_strip(list(seq), full_vocab.reflect_id)
                assert got == want, seq
                cases += 1
        assert cases == sum(3**n for n in range(7))

    def test_idempotent(self, full_vocab):
        rng = np.random.default_rng(0)
        k, d_tok = full_vocab.id_of("K"), full_vocab.id_of("D")
        alphabet = [k, d_tok, full_vocab.reflect_id]
        for _ in range(200):
            n = int(rng.integers(0, 10))
            seq = [int(rng.choice(alphabet)) for _ in range(n)]
            once = postprocess_reflection(seq, full_vocab)
            twice = postprocess_reflection(once, full_vocab)
            assert once == twice

    def test_augment_postprocess_consistency(self, full_vocab):
        rng = np.random.default_rng(1)
        residues = list(full_vocab.residue_ids)
        for trial in range(300):
            n = int(rng.integers(1, 12))
            seq = PeptideSequence(tuple(int(rng.choice(residues)) for _ in range(n)))
            inject = inject_rple if trial % 2 else inject_rpre
            target = inject(seq, full_vocab, rng)
            assert postprocess_reflection(target.tokens, full_vocab) == list(seq.tokens)

    def test_rejects_embedded_specials(self, full_vocab):
        with pytest.raises(ValueError):
            postprocess_reflection([full_vocab.sos_id, full_vocab.id_of("K")], full_vocab)

    def test_output_never_contains_reflect(self, full_vocab):
        rng = np.random.default_rng(2)
        alphabet = [full_vocab.id_of("K"), full_vocab.reflect_id]
        for _ in range(100):
            n = int(rng.integers(0, 12))
            seq = [int(rng.choice(alphabet)) for _ in range(n)]
            out = postprocess_reflection(seq, full_vocab)
            assert full_vocab.reflect_id not in out


class TestTokenStrings:
    def test_round_trip(self, full_vocab):
        text = "RL<reflect>MNFYGFL$"
        assert render_tokens(full_vocab, parse_token_string(full_vocab, text)) == text

    def test_malformed(self, full_vocab):
        with pytest.raises(ValueError):
            parse_token_string(full_vocab, "K<reflec>")


class TestDecoding:
    def test_beam_one_equals_greedy(self, tiny_model, test_spectra):
        for spectrum in test_spectra:
            greedy = greedy_decode(tiny_model, spectrum)
            beam = beam_decode(tiny_model, spectrum, beam=1)
            assert len(beam) == 1
            assert beam[0].prediction.tokens == greedy.tokens

    def test_batch_greedy_equals_greedy(self, tiny_model, test_spectra):
        batched = greedy_decode_batch(tiny_model, test_spectra)
        for spectrum, out in zip(test_spectra, batched):
            single = greedy_decode(tiny_model, spectrum)
            assert out.tokens == single.tokens
            # padded-batch matmuls reorder float32 sums slightly
            np.testing.assert_allclose(out.log_probs, single.log_probs, atol=1e-6)

    def test_beam_scores_sorted(self, tiny_model, test_spectra):
        hyps = beam_decode(tiny_model, test_spectra[0], beam=4)
        scores = [h.score for h in hyps]
        assert scores == sorted(scores, reverse=True)
        assert [h.rank for h in hyps] == list(range(len(hyps)))

    def test_raw_predictions_well_formed(self, tiny_model, test_spectra):
        vocab = tiny_model.vocab
        for spectrum in test_spectra:
            raw = greedy_decode(tiny_model, spectrum)
            eos_positions = [i for i, t in enumerate(raw.tokens) if t == vocab.eos_id]
            assert len(eos_positions) <= 1
            if eos_positions:
                assert eos_positions[0] == len(raw.tokens) - 1
            assert vocab.sos_id not in raw.tokens
            assert vocab.pad_id not in raw.tokens
            assert len(raw.log_probs) == len(raw.tokens)

    def test_forced_prefix_fidelity(self, tiny_model, test_spectra):
        vocab = tiny_model.vocab
        prefix = (vocab.id_of("G"), vocab.id_of("A"), vocab.reflect_id)
        raw = forced_prefix_decode(tiny_model, test_spectra[0], prefix)
        assert raw.tokens[: len(prefix)] == prefix

    def test_forced_prefix_beam(self, tiny_model, test_spectra):
        vocab = tiny_model.vocab
        prefix = (vocab.id_of("G"), vocab.reflect_id)
        raw = forced_prefix_decode(tiny_model, test_spectra[0], prefix, beam=3)
        assert raw.tokens[: len(prefix)] == prefix

    def test_empty_prefix_equals_greedy(self, tiny_model, test_spectra):
        greedy = greedy_decode(tiny_model, test_spectra[0])
        forced = forced_prefix_decode(tiny_model, test_spectra[0], ())
        assert forced.tokens == greedy.tokens

    def test_prefix_with_eos_rejected(self, tiny_model, test_spectra):
        vocab = tiny_model.vocab
        with pytest.raises(ValueError):
            forced_prefix_decode(tiny_model, test_spectra[0], (vocab.eos_id,))

    def test_eos_favoring_model(self, tiny_vocab, test_spectra):
        """All-zero logits tie-break to the lowest allowed id, which is eos."""
        cfg = ModelConfig(vocab_size=tiny_vocab.size, d=16, layers=0, heads=2, ffn=32)
        model = init_model(cfg, tiny_vocab, seed=0)
        with torch.no_grad():
            model.output_projection.weight.zero_()
        raw = greedy_decode(model, test_spectra[0])
        assert raw.tokens == (tiny_vocab.eos_id,)
        assert raw.terminated
        assert postprocess_reflection(raw.tokens, tiny_vocab) == []

    def test_truncation_flagged(self, tiny_model, test_spectra):
        natural = greedy_decode(tiny_model, test_spectra[0])
        assert natural.terminated and len(natural.tokens) >= 2
        cut = len(natural.tokens) - 1
        raw = greedy_decode(tiny_model, test_spectra[0], max_len=cut)
        assert len(raw.tokens) == cut
        assert not raw.terminated
        # greedy decoding is prefix-stable, so the truncation is a prefix
        assert raw.tokens == natural.tokens[:cut]
