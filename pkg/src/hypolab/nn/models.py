"""Sequence-model architectures behind one next-token interface.

All models map a (B, T) token matrix to (B, T, V) logits with strict
causality.  Architectures: a pre-norm decoder-only transformer with learned
absolute positions, stacked LSTM / GRU with per-timestep scans, and a
simplified selective state-space model (diagonal state, input-dependent
step/gate) sharing the same embedding/readout shell.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import ConfigError
from ..rng import stream
from . import autodiff as ad
from . import kernels
from .autodiff import Tensor

__all__ = ["ARCHITECTURES", "ModelConfig", "SequenceModel", "init_model", "forward_logits"]

ARCHITECTURES = ("transformer", "lstm", "gru", "ssm")

MLP_RATIO = 4
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    layers: int
    hidden: int
    vocab: int
    max_len: int
    heads: int = 4
    state: int = 8  # SSM state dimension per channel
    init_seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; have {ARCHITECTURES}")
        for name in ("layers", "hidden", "vocab", "max_len", "heads", "state"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.arch == "transformer" and self.hidden % self.heads != 0:
            raise ConfigError(
                f"hidden={self.hidden} is not divisible by heads={self.heads}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class _ParamInit:
    """Draws parameters in declaration order from one seeded stream."""

    def __init__(self, seed: int, dtype: np.dtype):
        self.rng = stream(seed, "init")
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}

    def normal(self, name: str, shape: tuple[int, ...], std: float = INIT_STD) -> Tensor:
        return self._add(name, self.rng.normal(0.0, std, shape))

    def uniform(self, name: str, shape: tuple[int, ...], bound: float) -> Tensor:
        return self._add(name, self.rng.uniform(-bound, bound, shape))

    def constant(self, name: str, value: np.ndarray) -> Tensor:
        return self._add(name, value)

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._add(name, np.ones(shape))

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        t = ad.parameter(np.ascontiguousarray(value, dtype=self.dtype))
        self.params[name] = t
        return t


class SequenceModel:
    """Base: owns the parameter dict and the embedding/readout shell."""

    def __init__(self, config: ModelConfig):
        self.config = config
        init = _ParamInit(config.init_seed, config.np_dtype())
        self._build(init)
        self.params = init.params

    def _build(self, init: _ParamInit) -> None:
        raise NotImplementedError

    def forward(self, tokens: np.ndarray) -> Tensor:
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ValueError("tokens must be (batch, time)")
        if tokens.shape[1] > self.config.max_len:
            raise ValueError(
                f"sequence of {tokens.shape[1]} exceeds max_len={self.config.max_len}"
            )
        if tokens.min() < 0 or tokens.max() >= self.config.vocab:
            raise ValueError("token id out of vocabulary range")
        return self._forward(tokens)

    def _forward(self, tokens: np.ndarray) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class TransformerModel(SequenceModel):
    """Pre-norm decoder-only transformer, learned absolute positions, GELU MLP."""

    def _build(self, init: _ParamInit) -> None:
        cfg = self.config
        D = cfg.hidden
        init.normal("wte", (cfg.vocab, D))
        init.normal("wpe", (cfg.max_len, D))
        for i in range(cfg.layers):
            p = f"l{i}."
            init.ones(p + "ln1.g", (D,))
            init.zeros(p + "ln1.b", (D,))
            for nm in ("wq", "wk", "wv", "wo"):
                init.normal(p + nm, (D, D))
            for nm in ("bq", "bk", "bv", "bo"):
                init.zeros(p + nm, (D,))
            init.ones(p + "ln2.g", (D,))
            init.zeros(p + "ln2.b", (D,))
            init.normal(p + "w1", (D, MLP_RATIO * D))
            init.zeros(p + "b1", (MLP_RATIO * D,))
            init.normal(p + "w2", (MLP_RATIO * D, D))
            init.zeros(p + "b2", (D,))
        init.ones("lnf.g", (D,))
        init.zeros("lnf.b", (D,))
        init.normal("out_w", (D, cfg.vocab))
        init.zeros("out_b", (cfg.vocab,))

    def _forward(self, tokens: np.ndarray) -> Tensor:
        cfg = self.config
        P = self.params
        B, T = tokens.shape
        H, hd = cfg.heads, cfg.hidden // cfg.heads
        x = ad.add(
            ad.embedding(P["wte"], tokens),
            ad.embedding(P["wpe"], np.arange(T)),
        )
        # additive causal mask; finite fill keeps float32 softmax NaN-free
        mask = np.triu(np.full((T, T), -1e9, dtype=cfg.np_dtype()), k=1)
        scale = 1.0 / float(np.sqrt(hd))
        for i in range(cfg.layers):
            p = f"l{i}."
            a = ad.layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])
            q = ad.linear(a, P[p + "wq"], P[p + "bq"]).reshape((B, T, H, hd)).swapaxes(1, 2)
            k = ad.linear(a, P[p + "wk"], P[p + "bk"]).reshape((B, T, H, hd)).swapaxes(1, 2)
            v = ad.linear(a, P[p + "wv"], P[p + "bv"]).reshape((B, T, H, hd)).swapaxes(1, 2)
            scores = ad.add(ad.mul(ad.matmul(q, k.swapaxes(2, 3)), scale), mask)
            att = ad.softmax(scores, axis=-1)
            ctx = ad.matmul(att, v).swapaxes(1, 2).reshape((B, T, cfg.hidden))
            x = ad.add(x, ad.linear(ctx, P[p + "wo"], P[p + "bo"]))
            a2 = ad.layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
            m = ad.linear(ad.gelu(ad.linear(a2, P[p + "w1"], P[p + "b1"])), P[p + "w2"], P[p + "b2"])
            x = ad.add(x, m)
        x = ad.layer_norm(x, P["lnf.g"], P["lnf.b"])
        return ad.linear(x, P["out_w"], P["out_b"])


class _RecurrentModel(SequenceModel):
    """Shared shell for the gated recurrent architectures."""

    gates: int  # 4 for LSTM, 3 for GRU

    def _build(self, init: _ParamInit) -> None:
        cfg = self.config
        D = cfg.hidden
        bound = 1.0 / float(np.sqrt(D))
        init.normal("wte", (cfg.vocab, D))
        for i in range(cfg.layers):
            p = f"l{i}."
            init.uniform(p + "w_ih", (D, self.gates * D), bound)
            init.uniform(p + "w_hh", (D, self.gates * D), bound)
            init.uniform(p + "b_ih", (self.gates * D,), bound)
            if self.gates == 3:
                init.uniform(p + "b_hh", (self.gates * D,), bound)
        init.normal("out_w", (D, cfg.vocab))
        init.zeros("out_b", (cfg.vocab,))

    def _forward(self, tokens: np.ndarray) -> Tensor:
        cfg = self.config
        P = self.params
        B, T = tokens.shape
        x = ad.embedding(P["wte"], tokens).swapaxes(0, 1)  # time-major (T, B, D)
        for i in range(cfg.layers):
            p = f"l{i}."
            xproj = ad.linear(x, P[p + "w_ih"], P[p + "b_ih"])
            x = self._scan(xproj, i)
        x = x.swapaxes(0, 1)
        return ad.linear(x, P["out_w"], P["out_b"])

    def _scan(self, xproj: Tensor, layer: int) -> Tensor:
        raise NotImplementedError


class LSTMModel(_RecurrentModel):
    gates = 4

    def _scan(self, xproj: Tensor, layer: int) -> Tensor:
        whh = self.params[f"l{layer}.w_hh"]
        h_seq, c_seq, gates = kernels.lstm_scan_fwd(
            np.ascontiguousarray(xproj.data), whh.data
        )

        def backward(out: Tensor) -> None:
            dxp, dwhh = kernels.lstm_scan_bwd(whh.data, gates, h_seq, c_seq, out.grad)
            ad.accumulate_grad(xproj, dxp)
            ad.accumulate_grad(whh, dwhh)

        return ad.custom_op(h_seq, (xproj, whh), backward)


class GRUModel(_RecurrentModel):
    gates = 3

    def _scan(self, xproj: Tensor, layer: int) -> Tensor:
        whh = self.params[f"l{layer}.w_hh"]
        bhh = self.params[f"l{layer}.b_hh"]
        h_seq, gates, hproj = kernels.gru_scan_fwd(
            np.ascontiguousarray(xproj.data), whh.data, bhh.data
        )

        def backward(out: Tensor) -> None:
            dxp, dwhh, dbhh = kernels.gru_scan_bwd(whh.data, gates, hproj, h_seq, out.grad)
            ad.accumulate_grad(xproj, dxp)
            ad.accumulate_grad(whh, dwhh)
            ad.accumulate_grad(bhh, dbhh)

        return ad.custom_op(h_seq, (xproj, whh, bhh), backward)


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    return np.log(np.expm1(y))


class SSMModel(SequenceModel):
    """Stack of diagonal selective-scan blocks with pre-norm residuals.

    Each block projects its input to a per-channel step size (softplus), to
    input-dependent state in/out mixes, runs the first-order recurrence
    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t per (channel,
    state) pair, and gates the read-out with a SiLU branch.
    """

    def _build(self, init: _ParamInit) -> None:
        cfg = self.config
        D, N = cfg.hidden, cfg.state
        init.normal("wte", (cfg.vocab, D))
        rng = stream(cfg.init_seed, "ssm-dt")
        for i in range(cfg.layers):
            p = f"l{i}."
            init.ones(p + "ln.g", (D,))
            init.zeros(p + "ln.b", (D,))
            init.normal(p + "w_dt", (D, D))
            dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), D))
            init.constant(p + "b_dt", _inverse_softplus(dt))
            init.normal(p + "w_b", (D, N))
            init.normal(p + "w_c", (D, N))
            init.constant(p + "a_log", np.tile(np.log(np.arange(1, N + 1)), (D, 1)))
            init.ones(p + "d_skip", (D,))
            init.normal(p + "w_g", (D, D))
            init.zeros(p + "b_g", (D,))
            init.normal(p + "w_o", (D, D))
        init.ones("lnf.g", (D,))
        init.zeros("lnf.b", (D,))
        init.normal("out_w", (D, cfg.vocab))
        init.zeros("out_b", (cfg.vocab,))

    def _forward(self, tokens: np.ndarray) -> Tensor:
        cfg = self.config
        P = self.params
        B, T = tokens.shape
        D, N = cfg.hidden, cfg.state
        x = ad.embedding(P["wte"], tokens).swapaxes(0, 1)  # (T, B, D)
        for i in range(cfg.layers):
            p = f"l{i}."
            u = ad.layer_norm(x, P[p + "ln.g"], P[p + "ln.b"])
            delta = ad.softplus(ad.linear(u, P[p + "w_dt"], P[p + "b_dt"]))
            b_in = ad.linear(u, P[p + "w_b"])
            c_out = ad.linear(u, P[p + "w_c"])
            neg_a = ad.mul(ad.exp(P[p + "a_log"]), -1.0)  # (D, N), strictly negative
            delta4 = delta.reshape((T, B, D, 1))
            abar = ad.exp(ad.mul(delta4, neg_a))
            bu = ad.mul(ad.mul(delta4, b_in.reshape((T, B, 1, N))), u.reshape((T, B, D, 1)))
            h = ad.linear_recurrence(
                abar.reshape((T, B, D * N)), bu.reshape((T, B, D * N))
            ).reshape((T, B, D, N))
            y = ad.reduce_sum(ad.mul(h, c_out.reshape((T, B, 1, N))), axis=-1)
            y = ad.add(y, ad.mul(u, P[p + "d_skip"]))
            y = ad.mul(y, ad.silu(ad.linear(u, P[p + "w_g"], P[p + "b_g"])))
            x = ad.add(x, ad.linear(y, P[p + "w_o"]))
        x = ad.layer_norm(x, P["lnf.g"], P["lnf.b"]).swapaxes(0, 1)
        return ad.linear(x, P["out_w"], P["out_b"])


_REGISTRY = {
    "transformer": TransformerModel,
    "lstm": LSTMModel,
    "gru": GRUModel,
    "ssm": SSMModel,
}


def init_model(config: ModelConfig) -> SequenceModel:
    """Deterministically initialize the architecture named in the config."""
    return _REGISTRY[config.arch](config)


def forward_logits(model: SequenceModel, tokens: np.ndarray) -> np.ndarray:
    """Forward pass without graph recording; returns the raw logits array."""
    with ad.no_grad():
        return model.forward(tokens).data
