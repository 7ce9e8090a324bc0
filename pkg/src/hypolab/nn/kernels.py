"""Hot numeric kernels with numba and pure-numpy backends.

Three kernels have genuinely loop- or scatter-bound inner work where numba
wins on this workload and therefore carry ``@njit`` builds next to their
vectorized numpy fallbacks:

  * ``linear_recurrence_fwd`` / ``linear_recurrence_bwd`` — the first-order
    scan h_t = a_t * h_{t-1} + b_t at the core of the state-space layers;
  * ``embedding_grad`` — scatter-add of output gradients into the embedding
    table (numpy's ``np.add.at`` is orders of magnitude slower);
  * ``adamw_update`` — fused in-place optimizer step over one parameter.

The LSTM/GRU scans live here too but are numpy-only: their cost is dominated
by BLAS matmuls and SIMD-vectorized exp/tanh, which measured faster than
numba's scalar libm calls (see ``hypolab bench``).

Backend selection: ``HYPOLAB_KERNELS=numba|numpy`` in the environment, or
:func:`set_backend` at runtime.  Default is numba when importable.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "active_backend",
    "available_backends",
    "set_backend",
    "linear_recurrence_fwd",
    "linear_recurrence_bwd",
    "embedding_grad",
    "adamw_update",
    "lstm_scan_fwd",
    "lstm_scan_bwd",
    "gru_scan_fwd",
    "gru_scan_bwd",
    "DUAL_KERNELS",
]

# ---------------------------------------------------------------------------
# numpy implementations


def _linrec_fwd_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """h_t = a_t * h_{t-1} + b_t with h_0 = b_0, over (T, B, C)."""
    T = a.shape[0]
    h = np.empty_like(b)
    h[0] = b[0]
    for t in range(1, T):
        np.multiply(a[t], h[t - 1], out=h[t])
        h[t] += b[t]
    return h


def _linrec_bwd_numpy(
    a: np.ndarray, h: np.ndarray, dh: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode of the scan: g_t = dh_t + a_{t+1} * g_{t+1}; da_t = g_t * h_{t-1}."""
    T = a.shape[0]
    db = np.empty_like(dh)
    da = np.empty_like(dh)
    g = dh[T - 1].copy()
    db[T - 1] = g
    for t in range(T - 1, 0, -1):
        np.multiply(g, h[t - 1], out=da[t])
        g = dh[t - 1] + a[t] * g
        db[t - 1] = g
    da[0] = 0.0
    return da, db


def _embedding_grad_numpy(idx: np.ndarray, dout: np.ndarray, rows: int) -> np.ndarray:
    dw = np.zeros((rows, dout.shape[-1]), dtype=dout.dtype)
    np.add.at(dw, idx, dout)
    return dw


def _adamw_update_numpy(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
    bc1: float,
    bc2: float,
) -> None:
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    denom = np.sqrt(v / bc2)
    denom += eps
    p -= lr * weight_decay * p
    p -= (lr / bc1) * m / denom


# ---------------------------------------------------------------------------
# numba builds (same contracts, loop-structured for the compiler)


def _linrec_fwd_loops(a, b):
    T, B, C = a.shape
    h = np.empty_like(b)
    for bb in range(B):
        for c in range(C):
            h[0, bb, c] = b[0, bb, c]
    for t in range(1, T):
        for bb in range(B):
            for c in range(C):
                h[t, bb, c] = a[t, bb, c] * h[t - 1, bb, c] + b[t, bb, c]
    return h


def _linrec_bwd_loops(a, h, dh):
    T, B, C = a.shape
    da = np.empty_like(dh)
    db = np.empty_like(dh)
    for bb in range(B):
        for c in range(C):
            g = dh[T - 1, bb, c]
            db[T - 1, bb, c] = g
            for t in range(T - 1, 0, -1):
                da[t, bb, c] = g * h[t - 1, bb, c]
                g = dh[t - 1, bb, c] + a[t, bb, c] * g
                db[t - 1, bb, c] = g
            da[0, bb, c] = 0.0
    return da, db


def _embedding_grad_loops(idx, dout, rows):
    N, D = dout.shape
    dw = np.zeros((rows, D), dtype=dout.dtype)
    for i in range(N):
        r = idx[i]
        for d in range(D):
            dw[r, d] += dout[i, d]
    return dw


def _adamw_update_loops(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    # operates on 1-d views of contiguous parameter storage
    one = p.dtype.type(1.0)
    lr_ = p.dtype.type(lr)
    b1 = p.dtype.type(beta1)
    b2 = p.dtype.type(beta2)
    eps_ = p.dtype.type(eps)
    wd = p.dtype.type(weight_decay)
    bc1_ = p.dtype.type(bc1)
    bc2_ = p.dtype.type(bc2)
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (one - b1) * gi
        vi = b2 * v[i] + (one - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        pi = p[i]
        pi -= lr_ * wd * pi
        pi -= (lr_ / bc1_) * mi / (np.sqrt(vi / bc2_) + eps_)
        p[i] = pi


# ---------------------------------------------------------------------------
# LSTM / GRU scans (numpy-only; BLAS + SIMD transcendentals win here)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def lstm_scan_fwd(
    xproj: np.ndarray, whh: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """LSTM over time-major pre-projected inputs.

    ``xproj`` is (T, B, 4H) holding x_t @ W_ih + b for gate order (i, f, g, o);
    returns hidden states (T, B, H), cell states, and activated gates, the
    latter two cached for the backward pass.
    """
    T, B, H4 = xproj.shape
    H = H4 // 4
    h_seq = np.empty((T, B, H), dtype=xproj.dtype)
    c_seq = np.empty((T, B, H), dtype=xproj.dtype)
    gates = np.empty((T, B, H4), dtype=xproj.dtype)
    h = np.zeros((B, H), dtype=xproj.dtype)
    c = np.zeros((B, H), dtype=xproj.dtype)
    for t in range(T):
        z = xproj[t] + h @ whh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :, :H] = i
        gates[t, :, H : 2 * H] = f
        gates[t, :, 2 * H : 3 * H] = g
        gates[t, :, 3 * H :] = o
        h_seq[t] = h
        c_seq[t] = c
    return h_seq, c_seq, gates


def lstm_scan_bwd(
    whh: np.ndarray,
    gates: np.ndarray,
    h_seq: np.ndarray,
    c_seq: np.ndarray,
    dh_seq: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the LSTM scan w.r.t. xproj and whh."""
    T, B, H4 = gates.shape
    H = H4 // 4
    dxproj = np.empty_like(gates)
    dwhh = np.zeros_like(whh)
    dh = np.zeros((B, H), dtype=gates.dtype)
    dc = np.zeros((B, H), dtype=gates.dtype)
    dz = np.empty((B, H4), dtype=gates.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh + dh_seq[t]
        i = gates[t, :, :H]
        f = gates[t, :, H : 2 * H]
        g = gates[t, :, 2 * H : 3 * H]
        o = gates[t, :, 3 * H :]
        c = c_seq[t]
        tc = np.tanh(c)
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        c_prev = c_seq[t - 1] if t > 0 else np.zeros_like(c)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz[:, :H] = di * i * (1.0 - i)
        dz[:, H : 2 * H] = df * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dg * (1.0 - g * g)
        dz[:, 3 * H :] = do * o * (1.0 - o)
        dxproj[t] = dz
        h_prev = h_seq[t - 1] if t > 0 else np.zeros((B, H), dtype=gates.dtype)
        dwhh += h_prev.T @ dz
        dh = dz @ whh.T
        dc = dc * f
    return dxproj, dwhh


def gru_scan_fwd(
    xproj: np.ndarray, whh: np.ndarray, bhh: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """GRU over time-major pre-projected inputs.

    ``xproj`` is (T, B, 3H) holding x_t @ W_ih + b_ih for gate order (r, z, n);
    the candidate uses the reset-gated recurrent term r * (h W_hn + b_hn).
    Returns hidden states, activated gates, and the cached recurrent
    projections (T, B, 3H).
    """
    T, B, H3 = xproj.shape
    H = H3 // 3
    h_seq = np.empty((T, B, H), dtype=xproj.dtype)
    gates = np.empty((T, B, H3), dtype=xproj.dtype)
    hproj_seq = np.empty((T, B, H3), dtype=xproj.dtype)
    h = np.zeros((B, H), dtype=xproj.dtype)
    for t in range(T):
        hp = h @ whh + bhh
        hproj_seq[t] = hp
        r = _sigmoid(xproj[t, :, :H] + hp[:, :H])
        zg = _sigmoid(xproj[t, :, H : 2 * H] + hp[:, H : 2 * H])
        n = np.tanh(xproj[t, :, 2 * H :] + r * hp[:, 2 * H :])
        h = (1.0 - zg) * n + zg * h
        gates[t, :, :H] = r
        gates[t, :, H : 2 * H] = zg
        gates[t, :, 2 * H :] = n
        h_seq[t] = h
    return h_seq, gates, hproj_seq


def gru_scan_bwd(
    whh: np.ndarray,
    gates: np.ndarray,
    hproj_seq: np.ndarray,
    h_seq: np.ndarray,
    dh_seq: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the GRU scan w.r.t. xproj, whh, and bhh."""
    T, B, H3 = gates.shape
    H = H3 // 3
    dxproj = np.empty_like(gates)
    dwhh = np.zeros_like(whh)
    dbhh = np.zeros((H3,), dtype=gates.dtype)
    dh = np.zeros((B, H), dtype=gates.dtype)
    dhp = np.empty((B, H3), dtype=gates.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh + dh_seq[t]
        r = gates[t, :, :H]
        zg = gates[t, :, H : 2 * H]
        n = gates[t, :, 2 * H :]
        h_prev = h_seq[t - 1] if t > 0 else np.zeros((B, H), dtype=gates.dtype)
        hp_n = hproj_seq[t, :, 2 * H :]
        dn = dh * (1.0 - zg)
        dzg = dh * (h_prev - n)
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * hp_n
        dr_pre = dr * r * (1.0 - r)
        dzg_pre = dzg * zg * (1.0 - zg)
        dxproj[t, :, :H] = dr_pre
        dxproj[t, :, H : 2 * H] = dzg_pre
        dxproj[t, :, 2 * H :] = dn_pre
        dhp[:, :H] = dr_pre
        dhp[:, H : 2 * H] = dzg_pre
        dhp[:, 2 * H :] = dn_pre * r
        dwhh += h_prev.T @ dhp
        dbhh += dhp.sum(axis=0)
        dh = dh * zg + dhp @ whh.T
    return dxproj, dwhh, dbhh


# ---------------------------------------------------------------------------
# backend registry

DUAL_KERNELS = ("linear_recurrence_fwd", "linear_recurrence_bwd", "embedding_grad", "adamw_update")

_NUMPY_IMPL = {
    "linear_recurrence_fwd": _linrec_fwd_numpy,
    "linear_recurrence_bwd": _linrec_bwd_numpy,
    "embedding_grad": _embedding_grad_numpy,
    "adamw_update": _adamw_update_numpy,
}

_NUMBA_IMPL: dict[str, object] = {}
try:  # pragma: no cover - exercised via the numpy fallback in CI without numba
    from numba import njit

    _NUMBA_IMPL = {
        "linear_recurrence_fwd": njit(cache=True)(_linrec_fwd_loops),
        "linear_recurrence_bwd": njit(cache=True)(_linrec_bwd_loops),
        "embedding_grad": njit(cache=True)(_embedding_grad_loops),
        "adamw_update": njit(cache=True)(_adamw_update_loops),
    }
except ImportError:  # pragma: no cover
    pass


def available_backends() -> tuple[str, ...]:
    return ("numba", "numpy") if _NUMBA_IMPL else ("numpy",)


def _initial_backend() -> str:
    forced = os.environ.get("HYPOLAB_KERNELS", "").strip().lower()
    if forced:
        if forced not in ("numba", "numpy"):
            raise ValueError(f"HYPOLAB_KERNELS must be 'numba' or 'numpy', got {forced!r}")
        if forced == "numba" and not _NUMBA_IMPL:
            raise RuntimeError("HYPOLAB_KERNELS=numba but numba is not importable")
        return forced
    return "numba" if _NUMBA_IMPL else "numpy"


_backend = _initial_backend()
_impl = dict(_NUMBA_IMPL if _backend == "numba" else _NUMPY_IMPL)


def active_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend, _impl
    if name not in available_backends():
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _backend = name
    _impl = dict(_NUMBA_IMPL if name == "numba" else _NUMPY_IMPL)


def linear_recurrence_fwd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _impl["linear_recurrence_fwd"](a, b)


def linear_recurrence_bwd(
    a: np.ndarray, h: np.ndarray, dh: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    return _impl["linear_recurrence_bwd"](a, h, dh)


def embedding_grad(idx: np.ndarray, dout: np.ndarray, rows: int) -> np.ndarray:
    idx = np.ascontiguousarray(idx.reshape(-1))
    dout = np.ascontiguousarray(dout.reshape(idx.size, -1))
    return _impl["embedding_grad"](idx, dout, rows)


def adamw_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    *,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
    bc1: float,
    bc2: float,
) -> None:
    if _backend == "numba":
        # reshape(-1) must alias the parameter storage for the in-place update
        if not (p.flags["C_CONTIGUOUS"] and m.flags["C_CONTIGUOUS"] and v.flags["C_CONTIGUOUS"]):
            raise ValueError("adamw_update requires contiguous parameter/state arrays")
        _impl["adamw_update"](
            p.reshape(-1), np.ascontiguousarray(g.reshape(-1)), m.reshape(-1),
            v.reshape(-1), lr, beta1, beta2, eps, weight_decay, bc1, bc2,
        )
    else:
        _impl["adamw_update"](p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2)
