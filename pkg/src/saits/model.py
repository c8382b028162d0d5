"""SAITS imputer, its ablation variants and the encoder-only Transformer
baseline, plus the joint ORT + MIT objective."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError, EmptyMaskError
from .nn import Dropout, EncoderLayer, Linear, Module, positional_encoding
from .tensor import Tensor

VARIANTS = (
    "saits",
    "saits_no_diag",
    "saits_1block",
    "saits_r2",
    "saits_residual",
    "saits_3residual",
    "saits_3cascade",
    "transformer",
    "transformer_ort_only",
    "transformer_mit_only",
)

ALIASES = {"saits_base": "saits", "saits-base": "saits"}


def canonical_variant(name):
    name = ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return name


@dataclass
class SaitsConfig:
    T: int
    D: int
    n_layers: int = 2
    d_model: int = 256
    d_ffn: int = 128
    n_heads: int = 4
    d_k: int = 64
    d_v: int = 64
    dropout: float = 0.1
    lambda_mit: float = 1.0
    mit_rate: float = 0.2
    variant: str = "saits"

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        for name in ("T", "D", "n_layers", "d_model", "d_ffn", "n_heads", "d_k", "d_v"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value}")
            setattr(self, name, int(value))
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if not 0.0 < self.mit_rate < 1.0:
            raise ConfigError(f"mit_rate must lie in (0, 1), got {self.mit_rate}")
        if self.lambda_mit < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lambda_mit}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.diagonal_mask_enabled and self.T < 2:
            raise ConfigError("diagonal masking needs T >= 2")

    @property
    def diagonal_mask_enabled(self):
        return self.variant.startswith("saits") and self.variant != "saits_no_diag"

    @property
    def objective(self):
        """Which loss terms train the model: 'joint', 'ort' or 'mit'."""
        if self.variant == "transformer_ort_only":
            return "ort"
        if self.variant == "transformer_mit_only":
            return "mit"
        return "joint"

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def saits_base(T, D, **overrides):
    """Fixed SAITS-base hyper-parameters (lr 0.001 is set on the trainer)."""
    params = dict(n_layers=2, d_model=256, d_ffn=128, n_heads=4, d_k=64, d_v=64, dropout=0.1)
    params.update(overrides)
    return SaitsConfig(T=T, D=D, **params)


def tiny(T, D, **overrides):
    """Desk-scale configuration used by the acceptance runs."""
    params = dict(n_layers=2, d_model=32, d_ffn=32, n_heads=2, d_k=16, d_v=16, dropout=0.0)
    params.update(overrides)
    return SaitsConfig(T=T, D=D, **params)


PRESETS = {"saits-base": saits_base, "tiny": tiny}


@dataclass
class ForwardOutput:
    """Learned representations of one forward pass.

    ``representations`` lists every tensor that enters the reconstruction
    loss; ``x3`` is always the final representation used for imputation.
    """

    x1: Tensor
    x2: Tensor | None
    x3: Tensor
    imputed: Tensor
    attention: Tensor | None = None
    eta: Tensor | None = None
    representations: list = field(default_factory=list)


def replace_missing(x_hat, m_hat, estimate):
    """Keep observed entries of ``x_hat`` and fill the rest from ``estimate``."""
    return m_hat * x_hat + (1.0 - m_hat) * estimate


class DMSABlock(Module):
    """Embedding + N encoder layers + projection back to D features.

    ``head='linear'`` gives ``zW + b``; ``head='mlp'`` gives
    ``ReLU(zW_beta + b_beta) W_gamma + b_gamma``.
    """

    def __init__(self, cfg, rng, dropout_rng, diag_mask, head="linear"):
        self.embedding = Linear(2 * cfg.D, cfg.d_model, rng)
        self.dropout = Dropout(cfg.dropout, dropout_rng)
        self.layers = [
            EncoderLayer(cfg.d_model, cfg.d_ffn, cfg.n_heads, cfg.d_k, cfg.d_v, cfg.dropout,
                         rng, diag_mask=diag_mask, dropout_rng=dropout_rng)
            for _ in range(cfg.n_layers)
        ]
        self.head = head
        if head == "linear":
            self.reduce = Linear(cfg.d_model, cfg.D, rng)
        else:
            self.reduce_hidden = Linear(cfg.d_model, cfg.D, rng)
            self.reduce_out = Linear(cfg.D, cfg.D, rng)

    def forward(self, x, m, pe):
        h = self.dropout(self.embedding(tn.concat_lastaxis(x, m)) + pe)
        weights = None
        for layer in self.layers:
            h, weights = layer(h)
        if self.head == "linear":
            out = self.reduce(h)
        else:
            out = self.reduce_out(tn.relu(self.reduce_hidden(h)))
        return out, weights


class WeightedCombination(Module):
    """Sigmoid gate over the head-averaged attention map and the mask."""

    def __init__(self, T, D, rng):
        self.gate = Linear(T + D, D, rng)

    def forward(self, first, second, head_weights, m):
        if head_weights.ndim != 4:
            raise DimensionError(f"expected per-head weights (B, h, T, T), got {head_weights.shape}")
        avg = head_weights.mean(axis=1)
        eta = tn.sigmoid(self.gate(tn.concat_lastaxis(avg, m)))
        combined = (1.0 - eta) * first + eta * second
        return combined, eta, avg


class SAITS(Module):
    """Two (or three) diagonally-masked self-attention blocks.

    The variant in ``config`` selects how the block outputs are merged:
    weighted combination (``saits``/``saits_no_diag``), a single block,
    block 2 alone, a residual sum, or the three-block designs.
    """

    def __init__(self, config: SaitsConfig, seed=0):
        if not config.variant.startswith("saits"):
            raise ConfigError(f"SAITS cannot build variant {config.variant!r}")
        self.config = config
        init_rng, drop_seed = _split_seed(seed)
        self.dropout_rng = np.random.default_rng(drop_seed)
        diag = config.diagonal_mask_enabled
        v = config.variant
        self.first_block = DMSABlock(config, init_rng, self.dropout_rng, diag, "linear")
        if v != "saits_1block":
            self.second_block = DMSABlock(config, init_rng, self.dropout_rng, diag, "mlp")
        if v in ("saits", "saits_no_diag", "saits_3cascade"):
            self.combination = WeightedCombination(config.T, config.D, init_rng)
        if v in ("saits_3residual", "saits_3cascade"):
            self.third_block = DMSABlock(config, init_rng, self.dropout_rng, diag, "mlp")
        if v == "saits_3cascade":
            self.final_combination = WeightedCombination(config.T, config.D, init_rng)

    def first_block_forward(self, x_hat, m_hat):
        x1, _ = self.first_block(x_hat, m_hat, self._pe())
        return x1, replace_missing(x_hat, m_hat, x1)

    def second_block_forward(self, x_prime, m_hat):
        return self.second_block(x_prime, m_hat, self._pe())

    def _pe(self):
        return positional_encoding(self.config.T, self.config.d_model)

    def forward(self, x_hat, m_hat):
        x_hat, m_hat = _check_inputs(self.config, x_hat, m_hat)
        v = self.config.variant
        x1, x_prime = self.first_block_forward(x_hat, m_hat)
        if v == "saits_1block":
            return ForwardOutput(x1, None, x1, replace_missing(x_hat, m_hat, x1),
                                 representations=[x1])
        x2, weights = self.second_block_forward(x_prime, m_hat)
        if v == "saits_r2":
            return ForwardOutput(x1, x2, x2, replace_missing(x_hat, m_hat, x2),
                                 representations=[x2])
        if v == "saits_residual":
            x3 = x1 + x2
            return ForwardOutput(x1, x2, x3, replace_missing(x_hat, m_hat, x3),
                                 representations=[x1, x2, x3])
        if v == "saits_3residual":
            x_second = replace_missing(x_hat, m_hat, x2)
            x_third, _ = self.third_block(x_second, m_hat, self._pe())
            final = x1 + x2 + x_third
            return ForwardOutput(x1, x2, final, replace_missing(x_hat, m_hat, final),
                                 representations=[x1, x2, x_third, final])
        x3, eta, avg = self.combination(x1, x2, weights, m_hat)
        if v == "saits_3cascade":
            x_second = replace_missing(x_hat, m_hat, x3)
            x_third, weights3 = self.third_block(x_second, m_hat, self._pe())
            final, eta2, avg3 = self.final_combination(x3, x_third, weights3, m_hat)
            return ForwardOutput(x1, x2, final, replace_missing(x_hat, m_hat, final),
                                 attention=avg3, eta=eta2,
                                 representations=[x1, x2, x3, x_third, final])
        return ForwardOutput(x1, x2, x3, replace_missing(x_hat, m_hat, x3),
                             attention=avg, eta=eta, representations=[x1, x2, x3])


class TransformerImputer(Module):
    """Encoder-only Transformer: input embedding, N standard (unmasked)
    encoder layers, linear output projection."""

    def __init__(self, config: SaitsConfig, seed=0):
        if not config.variant.startswith("transformer"):
            raise ConfigError(f"TransformerImputer cannot build variant {config.variant!r}")
        self.config = config
        init_rng, drop_seed = _split_seed(seed)
        self.dropout_rng = np.random.default_rng(drop_seed)
        self.encoder = DMSABlock(config, init_rng, self.dropout_rng, diag_mask=False, head="linear")

    def forward(self, x_hat, m_hat):
        x_hat, m_hat = _check_inputs(self.config, x_hat, m_hat)
        pe = positional_encoding(self.config.T, self.config.d_model)
        out, _ = self.encoder(x_hat, m_hat, pe)
        return ForwardOutput(out, None, out, replace_missing(x_hat, m_hat, out),
                             representations=[out])


def build_model(config: SaitsConfig, seed=0):
    if config.variant.startswith("transformer"):
        return TransformerImputer(config, seed)
    return SAITS(config, seed)


def _split_seed(seed):
    init_ss, drop_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), drop_ss


def _check_inputs(cfg, x_hat, m_hat):
    x_hat, m_hat = tn.as_tensor(x_hat), tn.as_tensor(m_hat)
    if x_hat.shape != m_hat.shape or x_hat.ndim != 3 or x_hat.shape[1:] != (cfg.T, cfg.D):
        raise DimensionError(
            f"inputs must be (B, {cfg.T}, {cfg.D}); got values {x_hat.shape}, mask {m_hat.shape}")
    return x_hat, m_hat


def joint_loss(out: ForwardOutput, X, m_hat, indicating, lambda_mit=1.0, objective="joint"):
    """Return ``(L, L_ORT, L_MIT)``.

    ``L_ORT`` averages the masked MAE of every representation against the
    observed inputs; ``L_MIT`` is the masked MAE of the imputed output on
    artificially masked entries. ``objective='ort'`` drops the MIT term
    (``L_MIT`` is None when nothing was masked) and ``'mit'`` drops ORT.
    """
    X = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    m_hat = m_hat.data if isinstance(m_hat, Tensor) else np.asarray(m_hat, dtype=np.float64)
    indicating = indicating.data if isinstance(indicating, Tensor) else np.asarray(indicating, dtype=np.float64)
    reps = out.representations or [out.x3]
    l_ort = None
    for rep in reps:
        term = tn.masked_mae(rep, X, m_hat)
        l_ort = term if l_ort is None else l_ort + term
    l_ort = l_ort / float(len(reps))

    needs_mit = objective == "mit" or (objective == "joint" and lambda_mit > 0)
    l_mit = None
    if indicating.sum() > 0:
        l_mit = tn.masked_mae(out.imputed, X, indicating)
    elif needs_mit:
        raise EmptyMaskError("indicating mask is empty but the MIT term is required")

    if objective == "ort":
        total = l_ort
    elif objective == "mit":
        total = l_mit
    else:
        total = l_ort + lambda_mit * l_mit if l_mit is not None else l_ort
    return total, l_ort, l_mit
