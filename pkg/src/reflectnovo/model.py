"""Transformer encoder-decoder over spectra.

Peaks are embedded with sinusoidal m/z features plus a linear intensity
projection and pass through a bidirectional pre-layer-norm encoder (no
positional encoding, so peak order is irrelevant). The decoder is causal
with cross-attention to the encoder output; the start token carries the
precursor conditioning (sinusoidal neutral mass plus a charge embedding).

Each decoder position additionally receives a sinusoidal encoding of the
mass consumed so far by its reflection-stripped prefix, mirroring how
sequencing models expose cumulative prefix mass to the decoder. The feature
is parameter-free and strictly causal.

Loss is cross-entropy averaged over unmasked supervision positions only;
masked (injected-error) positions contribute exactly zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .spectrum import Spectrum
from .vocab import Vocabulary


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters."""

    vocab_size: int
    d: int = 512
    layers: int = 9
    heads: int = 8
    ffn: int = 1024
    max_decode_len: int = 100
    lambda_min: float = 0.001
    lambda_max: float = 10000.0
    max_charge: int = 10

    def __post_init__(self):
        if self.d % 2 != 0:
            raise ValueError("embedding width must be even")
        if self.d % self.heads != 0:
            raise ValueError("embedding width must be divisible by head count")
        # layers == 0 is permitted as an identity-stack test mode.
        if self.layers < 0:
            raise ValueError("layer count must be nonnegative")
        if self.max_decode_len < 2:
            raise ValueError("max_decode_len must be >= 2")
        if self.vocab_size < 5:
            raise ValueError("vocabulary must contain at least one residue")


def sinusoidal_features(
    values: torch.Tensor, d: int, lambda_min: float, lambda_max: float
) -> torch.Tensor:
    """Encode scalars with d/2 geometric frequencies: sine components in the
    first half of the feature vector, cosine in the second."""
    half = d // 2
    exponents = torch.arange(half, dtype=values.dtype, device=values.device)
    if half > 1:
        exponents = exponents / (half - 1)
    wavelengths = lambda_min * (lambda_max / lambda_min) ** exponents
    angles = values.unsqueeze(-1) * (2.0 * math.pi / wavelengths)
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class SpectrumTransformer(nn.Module):
    """Model parameters plus the forward computation."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary):
        super().__init__()
        if cfg.vocab_size != vocab.size:
            raise ValueError("config vocab_size disagrees with the vocabulary")
        self.cfg = cfg
        self.vocab = vocab
        d = cfg.d
        self.token_embedding = nn.Embedding(cfg.vocab_size, d, padding_idx=vocab.pad_id)
        self.intensity_projection = nn.Linear(1, d, bias=False)
        self.charge_embedding = nn.Embedding(cfg.max_charge + 1, d)
        if cfg.layers > 0:
            enc_layer = nn.TransformerEncoderLayer(
                d, cfg.heads, cfg.ffn, dropout=0.0, batch_first=True, norm_first=True
            )
            self.encoder = nn.TransformerEncoder(
                enc_layer, cfg.layers, norm=nn.LayerNorm(d), enable_nested_tensor=False
            )
            dec_layer = nn.TransformerDecoderLayer(
                d, cfg.heads, cfg.ffn, dropout=0.0, batch_first=True, norm_first=True
            )
            self.decoder = nn.TransformerDecoder(
                dec_layer, cfg.layers, norm=nn.LayerNorm(d)
            )
        else:
            # Identity test mode: no attention layers at all.
            self.encoder = None
            self.decoder = None
        self.decoder_norm = nn.LayerNorm(d) if cfg.layers == 0 else None
        self.output_projection = nn.Linear(d, cfg.vocab_size, bias=False)
        mass_table = torch.zeros(cfg.vocab_size)
        for tid in vocab.residue_ids:
            mass_table[tid] = vocab.residue_mass(tid)
        self.register_buffer("residue_mass_table", mass_table)

    @property
    def dtype(self) -> torch.dtype:
        return self.output_projection.weight.dtype

    def mz_features(self, values: torch.Tensor) -> torch.Tensor:
        return sinusoidal_features(
            values.to(self.dtype), self.cfg.d, self.cfg.lambda_min, self.cfg.lambda_max
        )

    def position_features(self, length: int) -> torch.Tensor:
        positions = torch.arange(length, dtype=self.dtype)
        return sinusoidal_features(positions, self.cfg.d, 1.0, 10000.0)

    def stripped_prefix_mass(self, tokens: torch.Tensor) -> torch.Tensor:
        """Cumulative residue mass of the reflection-stripped prefix ending
        at each position (reflect pops the most recent surviving residue)."""
        ids = tokens.detach().cpu().numpy()
        table = self.residue_mass_table.detach().cpu().numpy()
        reflect = self.vocab.reflect_id
        out = np.zeros(ids.shape)
        for b in range(ids.shape[0]):
            stack: list[float] = []
            acc = 0.0
            for t in range(ids.shape[1]):
                tok = ids[b, t]
                if tok == reflect:
                    if stack:
                        acc -= stack.pop()
                else:
                    m = float(table[tok])
                    if m > 0.0:
                        stack.append(m)
                        acc += m
                out[b, t] = acc
        return torch.as_tensor(out, dtype=self.dtype)

    def embed_peak_batch(
        self, mz: torch.Tensor, intensity: torch.Tensor
    ) -> torch.Tensor:
        """Per-peak embedding: sinusoidal m/z features plus the projected
        intensity. Shape (B, K, d)."""
        return self.mz_features(mz) + self.intensity_projection(
            intensity.to(self.dtype).unsqueeze(-1)
        )

    def encode_batch(
        self, mz: torch.Tensor, intensity: torch.Tensor, peak_padding: torch.Tensor
    ) -> torch.Tensor:
        x = self.embed_peak_batch(mz, intensity)
        if self.encoder is None:
            return x
        return self.encoder(x, src_key_padding_mask=peak_padding)

    def decoder_logits(
        self,
        memory: torch.Tensor,
        peak_padding: torch.Tensor,
        tokens: torch.Tensor,
        precursor_mass: torch.Tensor,
        precursor_charge: torch.Tensor,
    ) -> torch.Tensor:
        """Logits for each decoder input position. ``tokens`` start with sos."""
        B, T = tokens.shape
        if T > self.cfg.max_decode_len:
            raise ValueError(
                f"decoder input length {T} exceeds max_decode_len {self.cfg.max_decode_len}"
            )
        emb = self.token_embedding(tokens)
        emb = emb + self.position_features(T)
        emb = emb + self.mz_features(self.stripped_prefix_mass(tokens))
        start = self.mz_features(precursor_mass) + self.charge_embedding(
            torch.clamp(precursor_charge, max=self.cfg.max_charge)
        )
        emb = torch.cat([(emb[:, :1] + start.unsqueeze(1)), emb[:, 1:]], dim=1)
        if self.decoder is None:
            return self.output_projection(self.decoder_norm(emb))
        causal = torch.triu(
            torch.full((T, T), float("-inf"), dtype=self.dtype), diagonal=1
        )
        h = self.decoder(
            emb, memory, tgt_mask=causal, memory_key_padding_mask=peak_padding
        )
        return self.output_projection(h)


@dataclass(frozen=True)
class ForwardOutput:
    """Logits and normalized next-token distributions for one spectrum."""

    logits: np.ndarray
    probabilities: np.ndarray


def init_model(
    cfg: ModelConfig,
    vocab: Vocabulary,
    seed: int,
    dtype: torch.dtype = torch.float32,
) -> SpectrumTransformer:
    """Deterministic initialization: Xavier-uniform matrices, zero biases,
    N(0, 0.02) embeddings, unit LayerNorm gains."""
    model = SpectrumTransformer(cfg, vocab)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, module in model.named_modules():
            if isinstance(module, nn.Linear):
                fan_out, fan_in = module.weight.shape
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.Embedding):
                module.weight.normal_(0.0, 0.02, generator=gen)
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
            elif isinstance(module, nn.MultiheadAttention):
                d = module.embed_dim
                bound = math.sqrt(6.0 / (d + d))
                module.in_proj_weight.uniform_(-bound, bound, generator=gen)
                module.in_proj_bias.zero_()
    model.eval()
    return model.to(dtype)


def _spectrum_tensors(model: SpectrumTransformer, spectrum: Spectrum):
    if spectrum.num_peaks == 0:
        raise ValueError("cannot embed a spectrum with no peaks")
    mz = torch.as_tensor(spectrum.mz, dtype=model.dtype).unsqueeze(0)
    intensity = torch.as_tensor(spectrum.intensity, dtype=model.dtype).unsqueeze(0)
    padding = torch.zeros(1, spectrum.num_peaks, dtype=torch.bool)
    return mz, intensity, padding


def embed_peaks(model: SpectrumTransformer, spectrum: Spectrum) -> np.ndarray:
    """Encoder input rows for one spectrum, shape (K, d)."""
    mz, intensity, _ = _spectrum_tensors(model, spectrum)
    with torch.no_grad():
        return model.embed_peak_batch(mz, intensity)[0].numpy()


def encode(model: SpectrumTransformer, spectrum: Spectrum) -> np.ndarray:
    """Encoder output E for one spectrum, shape (K, d)."""
    mz, intensity, padding = _spectrum_tensors(model, spectrum)
    with torch.no_grad():
        return model.encode_batch(mz, intensity, padding)[0].numpy()


def forward(
    model: SpectrumTransformer, spectrum: Spectrum, decoder_input: list[int]
) -> ForwardOutput:
    """Teacher-forced forward pass for one spectrum.

    ``decoder_input`` must start with sos; logits row t depends only on
    rows <= t and the spectrum.
    """
    if not decoder_input or decoder_input[0] != model.vocab.sos_id:
        raise ValueError("decoder input must start with the sos token")
    mz, intensity, padding = _spectrum_tensors(model, spectrum)
    tokens = torch.tensor([decoder_input], dtype=torch.long)
    mass = torch.tensor([spectrum.precursor_mass], dtype=model.dtype)
    charge = torch.tensor([spectrum.precursor_charge], dtype=torch.long)
    with torch.no_grad():
        memory = model.encode_batch(mz, intensity, padding)
        logits = model.decoder_logits(memory, padding, tokens, mass, charge)[0]
        probabilities = torch.softmax(logits, dim=-1)
    return ForwardOutput(logits=logits.numpy(), probabilities=probabilities.numpy())


def _collate(model: SpectrumTransformer, batch):
    """Pad a batch of (spectrum, decoder_input, supervision, loss_mask)."""
    B = len(batch)
    K = max(item[0].num_peaks for item in batch)
    T = max(len(item[1]) for item in batch)
    dtype = model.dtype
    mz = torch.zeros(B, K, dtype=dtype)
    intensity = torch.zeros(B, K, dtype=dtype)
    peak_padding = torch.ones(B, K, dtype=torch.bool)
    tokens = torch.full((B, T), model.vocab.pad_id, dtype=torch.long)
    supervision = torch.full((B, T), model.vocab.pad_id, dtype=torch.long)
    mask = torch.zeros(B, T, dtype=torch.bool)
    mass = torch.zeros(B, dtype=dtype)
    charge = torch.zeros(B, dtype=torch.long)
    for i, (spectrum, dec_in, sup, loss_mask) in enumerate(batch):
        if len(dec_in) != len(sup) or len(sup) != len(loss_mask):
            raise ValueError("decoder input, supervision, and mask lengths differ")
        k = spectrum.num_peaks
        mz[i, :k] = torch.as_tensor(spectrum.mz, dtype=dtype)
        intensity[i, :k] = torch.as_tensor(spectrum.intensity, dtype=dtype)
        peak_padding[i, :k] = False
        t = len(dec_in)
        tokens[i, :t] = torch.tensor(dec_in, dtype=torch.long)
        supervision[i, :t] = torch.tensor(sup, dtype=torch.long)
        mask[i, :t] = torch.tensor(loss_mask, dtype=torch.bool)
        mass[i] = spectrum.precursor_mass
        charge[i] = spectrum.precursor_charge
    return mz, intensity, peak_padding, tokens, supervision, mask, mass, charge


def batch_loss(model: SpectrumTransformer, batch) -> torch.Tensor:
    """Masked cross-entropy, averaged over unmasked supervision positions.

    Only unmasked positions are gathered into the loss, so masked logits
    receive exactly zero gradient and the supervision tokens there are
    never read.
    """
    mz, intensity, peak_padding, tokens, supervision, mask, mass, charge = _collate(
        model, batch
    )
    if not bool(mask.any()):
        raise ValueError("all supervision positions are masked")
    memory = model.encode_batch(mz, intensity, peak_padding)
    logits = model.decoder_logits(memory, peak_padding, tokens, mass, charge)
    flat = mask.reshape(-1)
    picked = logits.reshape(-1, model.cfg.vocab_size)[flat]
    targets = supervision.reshape(-1)[flat]
    return nn.functional.cross_entropy(picked, targets)


def loss_and_gradients(
    model: SpectrumTransformer, batch
) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss and exact reverse-mode gradients for every parameter."""
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, batch)
    loss.backward()
    grads = {
        name: param.grad.detach().clone()
        if param.grad is not None
        else torch.zeros_like(param)
        for name, param in model.named_parameters()
    }
    model.zero_grad(set_to_none=True)
    return float(loss.detach()), grads


def finite_difference_check(
    model: SpectrumTransformer,
    batch,
    step: float = 1e-4,
    max_coords: int = 2000,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences over sampled parameter coordinates. Run in float64."""
    if model.dtype != torch.float64:
        raise ValueError("finite differences require a float64 model")
    _, grads = loss_and_gradients(model, batch)
    names = [name for name, _ in model.named_parameters()]
    sizes = np.array([model.get_parameter(n).numel() for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    chosen = (
        np.arange(total) if total <= max_coords
        else rng.choice(total, size=max_coords, replace=False)
    )
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    with torch.no_grad():
        for flat_index in chosen:
            param_idx = int(np.searchsorted(offsets, flat_index, side="right") - 1)
            inner = int(flat_index - offsets[param_idx])
            param = model.get_parameter(names[param_idx])
            view = param.view(-1)
            original = float(view.detach()[inner])
            view[inner] = original + step
            hi = float(batch_loss(model, batch))
            view[inner] = original - step
            lo = float(batch_loss(model, batch))
            view[inner] = original
            numeric = (hi - lo) / (2.0 * step)
            analytic = float(grads[names[param_idx]].view(-1)[inner])
            err = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
