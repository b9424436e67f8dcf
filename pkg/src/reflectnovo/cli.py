"""Command-line entry point: generate | augment | train | eval | predict | serve.

Configuration comes from an optional YAML file (nested sections, unknown
keys rejected) overridden by flags. Every run echoes the fully-resolved
configuration to stderr. Exit codes: 0 success, 1 usage, 2 data error,
3 runtime error.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from .augment import AugmentConfig, augment_batch
from .decode import (
    beam_decode,
    forced_prefix_decode,
    parse_token_string,
    postprocess_reflection,
    render_tokens,
)
from .evaluate import evaluate
from .model import ModelConfig
from .spectrum import (
    MgfError,
    PreprocessConfig,
    SynthConfig,
    emit_mgf,
    generate_corpus,
    parse_mgf,
    preprocess_spectrum,
)
from .train import (
    FINETUNE,
    PRETRAIN,
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    train,
)
from .vocab import VocabularyError, build_vocabulary

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class DataError(Exception):
    """Bad input data (malformed MGF, missing labels, bad checkpoints)."""


_SECTION_TYPES = {
    "vocab": None,  # handled by hand: alphabet + modifications
    "synth": SynthConfig,
    "preprocess": PreprocessConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "augment": AugmentConfig,
    "decode": None,  # beam, max_len
    "data": None,  # train_mgf, val_mgf, out_dir
}

_DECODE_KEYS = {"beam", "max_len"}
_DATA_KEYS = {"train_mgf", "val_mgf", "out_dir"}
_VOCAB_KEYS = {"alphabet", "modifications"}


def load_config(path: str | None) -> dict:
    """Load and validate the nested YAML configuration."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise click.UsageError(f"cannot read config: {exc}")
    except yaml.YAMLError as exc:
        raise click.UsageError(f"malformed config: {exc}")
    if not isinstance(raw, dict):
        raise click.UsageError("config root must be a mapping")
    for section, content in raw.items():
        if section not in _SECTION_TYPES:
            raise click.UsageError(f"unknown config section {section!r}")
        if not isinstance(content, dict):
            raise click.UsageError(f"config section {section!r} must be a mapping")
        cls = _SECTION_TYPES[section]
        if cls is not None:
            allowed = {f.name for f in dataclasses.fields(cls)}
            if cls is ModelConfig:
                allowed.discard("vocab_size")  # derived from the vocabulary
        elif section == "decode":
            allowed = _DECODE_KEYS
        elif section == "data":
            allowed = _DATA_KEYS
        else:
            allowed = _VOCAB_KEYS
        unknown = set(content) - allowed
        if unknown:
            raise click.UsageError(
                f"unknown keys in config section {section!r}: {sorted(unknown)}"
            )
    return raw


def _build_section(cls, data: dict, **overrides):
    kwargs = dict(data)
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(str(exc))


def _vocab_from_config(cfg: dict):
    section = cfg.get("vocab", {})
    alphabet = section.get("alphabet", "full20")
    modifications = tuple(section.get("modifications", ("C+57.021", "M+15.995")))
    try:
        return build_vocabulary(alphabet=alphabet, modifications=modifications)
    except VocabularyError as exc:
        raise click.UsageError(str(exc))


def _echo_resolved(name: str, resolved: dict) -> None:
    click.echo(f"# resolved {name} configuration", err=True)
    click.echo(yaml.safe_dump(resolved, sort_keys=True).rstrip(), err=True)


def _read_psms(path: str, vocab):
    try:
        with open(path) as fh:
            return parse_mgf(fh, vocab)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}")
    except (MgfError, VocabularyError) as exc:
        raise DataError(f"{path}: {exc}")


@click.group(context_settings={"show_default": True})
def cli():
    """Reflection-token de novo peptide sequencing pipeline."""


@cli.command("generate")
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")
@click.option("--count", type=int, default=5000, show_default=True, help="Total PSMs to generate.")
@click.option("--seed", type=int, default=42, show_default=True, help="Corpus rng seed.")
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Output directory for train/test MGF.")
def cmd_generate(config_path, count, seed, out_dir):
    """Generate a synthetic labeled corpus as train/test MGF files."""
    cfg = load_config(config_path)
    if count < 2:
        raise click.UsageError("count must be >= 2 to split train/test")
    vocab = _vocab_from_config(cfg)
    synth = _build_section(SynthConfig, cfg.get("synth", {}))
    _echo_resolved("generate", {"synth": dataclasses.asdict(synth), "count": count, "seed": seed})
    train_psms, test_psms = generate_corpus(vocab, synth, count, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train.mgf").write_text(emit_mgf(train_psms, vocab))
    (out / "test.mgf").write_text(emit_mgf(test_psms, vocab))
    click.echo(f"wrote {len(train_psms)} train / {len(test_psms)} test PSMs to {out}")


@cli.command("augment")
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")
@click.option("--mgf", "mgf_path", type=click.Path(), required=True, help="Labeled corpus to augment.")
@click.option("--alpha", type=float, default=None, help="Injection ratio.")
@click.option("--strategy-mix", type=float, default=None, help="P(RPLE | injected).")
@click.option("--injections", type=int, default=None, help="Max injections per sequence.")
@click.option("--seed", type=int, default=0, show_default=True, help="Augmentation rng seed.")
def cmd_augment(config_path, mgf_path, alpha, strategy_mix, injections, seed):
    """Emit augmented targets and loss masks as tab-separated text."""
    cfg = load_config(config_path)
    vocab = _vocab_from_config(cfg)
    aug_cfg = _build_section(
        AugmentConfig,
        cfg.get("augment", {}),
        alpha=alpha,
        strategy_mix=strategy_mix,
        max_injections_per_seq=injections,
    )
    _echo_resolved("augment", {"augment": dataclasses.asdict(aug_cfg), "seed": seed})
    psms = _read_psms(mgf_path, vocab)
    unlabeled = [p.id for p in psms if p.label is None]
    if unlabeled:
        raise DataError(f"PSMs without SEQ labels: {unlabeled[:3]}")
    batch = [(p.spectrum, p.label) for p in psms]
    rng = np.random.default_rng(seed)
    for _, target in augment_batch(batch, aug_cfg, vocab, rng):
        bits = "".join("1" if m else "0" for m in target.loss_mask)
        click.echo(f"{render_tokens(vocab, target.tokens)}\t{bits}")


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")
@click.option("--train-mgf", type=click.Path(), default=None, help="Training corpus.")
@click.option("--val-mgf", type=click.Path(), default=None, help="Validation corpus.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Checkpoint/metrics directory.")
@click.option("--alpha", type=float, default=None, help="Injection ratio.")
@click.option("--strategy-mix", type=float, default=None, help="P(RPLE | injected).")
@click.option("--injections", type=int, default=None, help="Max injections per sequence.")
@click.option("--seed", type=int, default=None, help="Base seed (init/data/augment derive from it).")
@click.option("--mode", type=click.Choice([PRETRAIN, FINETUNE]), default=None, help="Training mode.")
@click.option("--from", "from_ckpt", type=click.Path(), default=None, help="Source checkpoint for finetuning.")
def cmd_train(config_path, train_mgf, val_mgf, out_dir, alpha, strategy_mix, injections, seed, mode, from_ckpt):
    """Train a model with online reflection-error injection."""
    cfg = load_config(config_path)
    data = cfg.get("data", {})
    train_path = train_mgf or data.get("train_mgf")
    if train_path is None:
        raise click.UsageError("--train-mgf (or data.train_mgf in the config) is required")
    val_path = val_mgf or data.get("val_mgf")
    out_path = out_dir or data.get("out_dir")
    vocab = _vocab_from_config(cfg)
    aug_cfg = _build_section(
        AugmentConfig,
        cfg.get("augment", {}),
        alpha=alpha,
        strategy_mix=strategy_mix,
        max_injections_per_seq=injections,
    )
    seeds = {}
    if seed is not None:
        seeds = {"init_seed": seed, "data_seed": seed + 1, "augment_seed": seed + 2}
    train_cfg = _build_section(
        TrainConfig,
        {**cfg.get("train", {}), **seeds},
        augment=aug_cfg,
        mode=mode,
    )
    if train_cfg.mode == FINETUNE and from_ckpt is None:
        raise click.UsageError("--mode finetune requires --from <checkpoint>")
    model_cfg = _build_section(
        ModelConfig, cfg.get("model", {}), vocab_size=vocab.size
    )
    preprocess = _build_section(PreprocessConfig, cfg.get("preprocess", {}))
    _echo_resolved(
        "train",
        {
            "model": dataclasses.asdict(model_cfg),
            "train": dataclasses.asdict(train_cfg),
            "preprocess": dataclasses.asdict(preprocess),
        },
    )
    train_psms = _read_psms(train_path, vocab)
    val_psms = _read_psms(val_path, vocab) if val_path else []
    source = None
    if from_ckpt is not None:
        try:
            source = load_checkpoint(from_ckpt)
        except (OSError, CheckpointError) as exc:
            raise DataError(f"cannot load checkpoint {from_ckpt}: {exc}")
    try:
        ckpt, metrics = train(
            train_psms,
            val_psms,
            model_cfg,
            train_cfg,
            vocab,
            source=source,
            preprocess=preprocess,
            out_dir=Path(out_path) if out_path else None,
            log=lambda row: click.echo(row.render(), err=True),
        )
    except ValueError as exc:
        raise DataError(str(exc))
    if out_path:
        metrics_path = Path(out_path) / "metrics.tsv"
        metrics_path.write_text("\n".join(r.render() for r in metrics) + "\n")
        click.echo(f"checkpoint and metrics written to {out_path}")
    click.echo(f"finished at step {ckpt.metadata['step']}")


@cli.command("eval")
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True, help="Model checkpoint.")
@click.option("--mgf", "mgf_path", type=click.Path(), required=True, help="Labeled evaluation corpus.")
@click.option("--beam", type=int, default=None, help="Beam width (1 = greedy).")
@click.option("--emit-detail", "detail_path", type=click.Path(), default=None, help="Write per-PSM rows here.")
def cmd_eval(config_path, ckpt_path, mgf_path, beam, detail_path):
    """Evaluate a checkpoint: AA/peptide precision and reflection usage."""
    cfg = load_config(config_path)
    decode_cfg = cfg.get("decode", {})
    beam = beam if beam is not None else int(decode_cfg.get("beam", 1))
    max_len = decode_cfg.get("max_len")
    preprocess = _build_section(PreprocessConfig, cfg.get("preprocess", {}))
    _echo_resolved("eval", {"beam": beam, "max_len": max_len})
    try:
        ckpt = load_checkpoint(ckpt_path)
    except (OSError, CheckpointError) as exc:
        raise DataError(f"cannot load checkpoint {ckpt_path}: {exc}")
    psms = _read_psms(mgf_path, ckpt.vocab)
    try:
        report = evaluate(ckpt.model, psms, beam=beam, max_len=max_len, preprocess=preprocess)
    except ValueError as exc:
        raise DataError(str(exc))
    click.echo(report.summary())
    if detail_path:
        rows = ["psm_id\traw\tanswer\tlabel\tmatched\tpredicted\texact\ttoken_probs"]
        for d in report.details:
            probs = ",".join(f"{math.exp(lp):.4f}" for lp in d.log_probs)
            rows.append(
                f"{d.psm_id}\t{d.raw}\t{d.answer}\t{d.label}\t{d.matched}"
                f"\t{d.predicted}\t{int(d.exact)}\t{probs}"
            )
        Path(detail_path).write_text("\n".join(rows) + "\n")
        click.echo(f"detail rows written to {detail_path}", err=True)


@cli.command("predict")
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True, help="Model checkpoint.")
@click.option("--mgf", "mgf_path", type=click.Path(), required=True, help="Spectra to decode.")
@click.option("--beam", type=int, default=None, help="Beam width (1 = greedy).")
@click.option("--prefix", type=str, default=None, help="Forced prefix in token notation, e.g. 'RL<reflect>'.")
def cmd_predict(config_path, ckpt_path, mgf_path, beam, prefix):
    """Decode spectra and print raw plus post-processed sequences."""
    cfg = load_config(config_path)
    decode_cfg = cfg.get("decode", {})
    beam = beam if beam is not None else int(decode_cfg.get("beam", 1))
    max_len = decode_cfg.get("max_len")
    preprocess = _build_section(PreprocessConfig, cfg.get("preprocess", {}))
    _echo_resolved("predict", {"beam": beam, "max_len": max_len, "prefix": prefix})
    try:
        ckpt = load_checkpoint(ckpt_path)
    except (OSError, CheckpointError) as exc:
        raise DataError(f"cannot load checkpoint {ckpt_path}: {exc}")
    vocab = ckpt.vocab
    prefix_tokens = ()
    if prefix:
        try:
            prefix_tokens = tuple(parse_token_string(vocab, prefix))
        except ValueError as exc:
            raise click.UsageError(str(exc))
        bad = [t for t in prefix_tokens if not (vocab.is_residue(t) or t == vocab.reflect_id)]
        if bad:
            raise click.UsageError(
                f"prefix may contain only residues and <reflect>, got {vocab.symbol_of(bad[0])!r}"
            )
    psms = _read_psms(mgf_path, vocab)
    for psm in psms:
        spectrum = preprocess_spectrum(psm.spectrum, preprocess)
        if beam > 1:
            raw = beam_decode(ckpt.model, spectrum, beam=beam, max_len=max_len, prefix=prefix_tokens)[0].prediction
        else:
            raw = forced_prefix_decode(ckpt.model, spectrum, prefix_tokens, max_len)
        answer = postprocess_reflection(raw.tokens, vocab)
        click.echo(f"# {psm.id}")
        click.echo(f"Raw prediction:        {render_tokens(vocab, raw.tokens)}")
        click.echo(f"Post-processed output: {render_tokens(vocab, answer)}")
        if psm.label is not None:
            click.echo(f"Ground-truth label:    {render_tokens(vocab, psm.label.tokens)}")


@cli.command("serve")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True, help="Model checkpoint.")
@click.option("--dataset", "dataset_path", type=click.Path(), default=None, help="MGF the UI can browse.")
@click.option("--bind", type=str, default="127.0.0.1:8000", show_default=True, help="addr:port to listen on.")
def cmd_serve(ckpt_path, dataset_path, bind):
    """Run the steering service."""
    from .serve import serve as run_server

    if ":" not in bind:
        raise click.UsageError("--bind must look like addr:port")
    host, _, port_text = bind.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        raise click.UsageError(f"malformed port {port_text!r}")
    try:
        load_checkpoint(ckpt_path)
    except (OSError, CheckpointError) as exc:
        raise DataError(f"cannot load checkpoint {ckpt_path}: {exc}")
    _echo_resolved("serve", {"bind": bind, "dataset": dataset_path})
    run_server(ckpt_path, dataset_path=dataset_path, host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - defensive catch-all
        click.echo(f"runtime error: {exc}", err=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
