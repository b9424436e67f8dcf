"""Inference service: prediction and human-in-the-loop steering over JSON.

Endpoints: ``GET /info``, ``GET /dataset``, ``GET /dataset/{id}``,
``POST /predict``, ``POST /steer``. The model snapshot is loaded once at
startup and never mutated, so any number of decodes may run concurrently.
Errors are ``{"error": <message>, "at": <field>}`` with a 4xx status.
"""

from __future__ import annotations

import asyncio
import hashlib
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .decode import (
    RawPrediction,
    forced_prefix_decode,
    parse_token_string,
    postprocess_reflection,
    render_tokens,
)
from .spectrum import (
    PSM,
    EmptySpectrumError,
    PreprocessConfig,
    Spectrum,
    parse_mgf,
    preprocess_spectrum,
)
from .train import load_checkpoint
from .vocab import WATER_MASS


class ApiError(Exception):
    def __init__(self, status: int, message: str, at: str | None = None):
        self.status = status
        self.message = message
        self.at = at


def _error_response(status: int, message: str, at: str | None) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message, "at": at})


def create_app(
    checkpoint_path,
    dataset_path=None,
    max_in_flight: int = 8,
    preprocess: PreprocessConfig = PreprocessConfig(),
) -> FastAPI:
    """Build the service around one immutable checkpoint snapshot."""
    ckpt = load_checkpoint(checkpoint_path)
    model = ckpt.model
    vocab = ckpt.vocab
    with open(checkpoint_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    dataset: dict[str, PSM] = {}
    dataset_order: list[str] = []
    if dataset_path is not None:
        with open(dataset_path) as fh:
            for psm in parse_mgf(fh, vocab):
                dataset[psm.id] = psm
                dataset_order.append(psm.id)

    app = FastAPI(title="reflectnovo", version="0.1.0")
    gate = asyncio.Semaphore(max_in_flight)

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return _error_response(exc.status, exc.message, exc.at)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        at = ".".join(str(p) for p in first.get("loc", ()) if p != "body")
        return _error_response(400, first.get("msg", "invalid request"), at or None)

    @app.middleware("http")
    async def _backpressure(request: Request, call_next):
        async with gate:
            return await call_next(request)

    def parse_spectrum(body: dict) -> Spectrum:
        if "psm_id" in body and body["psm_id"] is not None:
            psm_id = body["psm_id"]
            if psm_id not in dataset:
                raise ApiError(404, f"unknown PSM id {psm_id!r}", at="psm_id")
            return dataset[psm_id].spectrum
        spec = body.get("spectrum")
        if not isinstance(spec, dict):
            raise ApiError(400, "spectrum or psm_id required", at="spectrum")
        try:
            peaks = spec["peaks"]
            mz = np.array([float(p[0]) for p in peaks])
            intensity = np.array([float(p[1]) for p in peaks])
            charge = int(spec["precursor_charge"])
            mass = float(spec["precursor_mass"])
            return Spectrum(
                mz=mz, intensity=intensity, precursor_charge=charge, precursor_mass=mass
            )
        except ApiError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ApiError(400, f"malformed spectrum: {exc}", at="spectrum") from None

    def parse_prefix(body: dict) -> tuple[int, ...]:
        text = body.get("prefix", "") or ""
        try:
            tokens = parse_token_string(vocab, text)
        except ValueError as exc:
            raise ApiError(400, str(exc), at="prefix") from None
        for tok in tokens:
            if not (vocab.is_residue(tok) or tok == vocab.reflect_id):
                raise ApiError(
                    400,
                    f"prefix token {vocab.symbol_of(tok)!r} not allowed",
                    at="prefix",
                )
        return tuple(tokens)

    def respond(
        raw: RawPrediction, spectrum: Spectrum, label=None
    ) -> dict:
        answer = postprocess_reflection(raw.tokens, vocab)
        predicted_mass = (
            sum(vocab.residue_mass(t) for t in answer) + WATER_MASS if answer else 0.0
        )
        out = {
            "raw": render_tokens(vocab, raw.tokens),
            "raw_tokens": [vocab.symbol_of(t) for t in raw.tokens],
            "log_probs": list(raw.log_probs),
            "answer": render_tokens(vocab, answer),
            "terminated": raw.terminated,
            "mass": {
                "predicted": predicted_mass,
                "precursor": spectrum.precursor_mass,
                "delta": predicted_mass - spectrum.precursor_mass,
            },
        }
        if label is not None:
            out["label"] = render_tokens(vocab, label.tokens)
            out["matches"] = [
                i < len(label.tokens) and tok == label.tokens[i]
                for i, tok in enumerate(answer)
            ]
        return out

    def run_decode(body: dict, require_prefix: bool) -> dict:
        spectrum = parse_spectrum(body)
        prefix = parse_prefix(body) if (require_prefix or body.get("prefix")) else ()
        try:
            beam = int(body.get("beam") or 1)
            if beam < 1:
                raise ValueError
        except (TypeError, ValueError):
            raise ApiError(400, "beam must be a positive integer", at="beam") from None
        max_len = body.get("max_len")
        if max_len is not None:
            try:
                max_len = int(max_len)
                if max_len < 1:
                    raise ValueError
            except (TypeError, ValueError):
                raise ApiError(400, "max_len must be a positive integer", at="max_len") from None
        try:
            prepared = preprocess_spectrum(spectrum, preprocess)
        except EmptySpectrumError:
            raise ApiError(422, "no peaks survive preprocessing", at="spectrum")
        try:
            raw = forced_prefix_decode(model, prepared, prefix, max_len, beam=beam)
        except ValueError as exc:
            raise ApiError(400, str(exc), at="prefix") from None
        label = None
        if body.get("psm_id") in dataset:
            label = dataset[body["psm_id"]].label
        return respond(raw, spectrum, label)

    @app.get("/info")
    async def info():
        return {
            "model_config": {
                "d": model.cfg.d,
                "layers": model.cfg.layers,
                "heads": model.cfg.heads,
                "ffn": model.cfg.ffn,
                "max_decode_len": model.cfg.max_decode_len,
                "vocab_size": model.cfg.vocab_size,
            },
            "vocabulary": [vocab.symbol_of(i) for i in range(vocab.size)],
            "checkpoint_digest": digest,
            "checkpoint_version": ckpt.metadata.get("step"),
            "mode": ckpt.metadata.get("mode"),
            "dataset_size": len(dataset),
        }

    @app.get("/dataset")
    async def dataset_list():
        return {
            "psms": [
                {
                    "id": psm_id,
                    "labeled": dataset[psm_id].label is not None,
                    "peaks": dataset[psm_id].spectrum.num_peaks,
                    "precursor_charge": dataset[psm_id].spectrum.precursor_charge,
                    "precursor_mass": dataset[psm_id].spectrum.precursor_mass,
                }
                for psm_id in dataset_order
            ]
        }

    @app.get("/dataset/{psm_id}")
    async def dataset_get(psm_id: str):
        if psm_id not in dataset:
            raise ApiError(404, f"unknown PSM id {psm_id!r}", at="psm_id")
        psm = dataset[psm_id]
        out = {
            "id": psm.id,
            "peaks": [[float(m), float(i)] for m, i in zip(psm.spectrum.mz, psm.spectrum.intensity)],
            "precursor_charge": psm.spectrum.precursor_charge,
            "precursor_mass": psm.spectrum.precursor_mass,
        }
        if psm.label is not None:
            out["label"] = render_tokens(vocab, psm.label.tokens)
        return out

    async def read_body(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "request body must be JSON", at=None) from None
        if not isinstance(body, dict):
            raise ApiError(400, "request body must be a JSON object", at=None)
        return body

    @app.post("/predict")
    async def predict(request: Request):
        return run_decode(await read_body(request), require_prefix=False)

    @app.post("/steer")
    async def steer(request: Request):
        return run_decode(await read_body(request), require_prefix=True)

    return app


def serve(checkpoint_path, dataset_path=None, host="127.0.0.1", port=8000):
    """Run the service under uvicorn until interrupted."""
    import uvicorn

    app = create_app(checkpoint_path, dataset_path=dataset_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")
