"""Decoder-only transformer in plain numpy with hand-derived gradients.

Pre-norm GPT-2 layout: token + learned positional embeddings, N blocks of
(layer-norm, causal multi-head self-attention, residual) and (layer-norm,
4x GELU MLP, residual), a final layer norm, and an output head tied to the
token embedding. `loss_and_grads` runs forward and backward in one call and
is the only training entry point; `forward` is inference-only and can
capture per-layer attention probabilities.
"""

from __future__ import annotations

import math

import numpy as np

from .config import ModelConfig

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class ModelError(Exception):
    pass


class ContextOverflowError(ModelError):
    """Sequence longer than the model's context window."""


class NonFiniteLossError(ModelError):
    """Loss or gradients went NaN/inf; message carries a parameter-norm dump."""


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    """Normal(0, 0.02) weights, identity layer norms, zero biases."""
    rng = np.random.default_rng(config.seed)
    dt = config.np_dtype
    d, f = config.d_model, config.d_ff

    def normal(*shape):
        return rng.normal(0.0, 0.02, size=shape).astype(dt)

    params = {
        "tok_emb": normal(config.vocab_size, d),
        "pos_emb": normal(config.context_length, d),
        "lnf.g": np.ones(d, dt),
        "lnf.b": np.zeros(d, dt),
    }
    for i in range(config.n_layers):
        h = f"h{i}."
        params[h + "ln1.g"] = np.ones(d, dt)
        params[h + "ln1.b"] = np.zeros(d, dt)
        params[h + "attn.wqkv"] = normal(d, 3 * d)
        params[h + "attn.bqkv"] = np.zeros(3 * d, dt)
        params[h + "attn.wo"] = normal(d, d)
        params[h + "attn.bo"] = np.zeros(d, dt)
        params[h + "ln2.g"] = np.ones(d, dt)
        params[h + "ln2.b"] = np.zeros(d, dt)
        params[h + "mlp.w1"] = normal(d, f)
        params[h + "mlp.b1"] = np.zeros(f, dt)
        params[h + "mlp.w2"] = normal(f, d)
        params[h + "mlp.b2"] = np.zeros(d, dt)
    return params


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x):
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _softmax_last(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


class Model:
    """Parameter bundle plus forward/backward. Inference calls are pure."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        c = config.context_length
        self._causal = np.tril(np.ones((c, c), dtype=bool))

    # -- forward -------------------------------------------------------------

    def _check_length(self, ids: np.ndarray):
        if ids.ndim != 2:
            raise ModelError(f"ids must be (batch, time), got shape {ids.shape}")
        if ids.shape[1] > self.config.context_length:
            raise ContextOverflowError(
                f"sequence length {ids.shape[1]} exceeds context "
                f"{self.config.context_length}"
            )

    def _block_forward(self, x, i, dropout_rng, keep):
        p, cfg = self.params, self.config
        h = f"h{i}."
        B, T, D = x.shape
        H, Dh = cfg.n_heads, cfg.d_head
        scale = 1.0 / math.sqrt(Dh)

        a, ln1_cache = _layer_norm(x, p[h + "ln1.g"], p[h + "ln1.b"])
        qkv = a @ p[h + "attn.wqkv"] + p[h + "attn.bqkv"]
        q, k, v = np.split(qkv, 3, axis=-1)
        q = q.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)
        k = k.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)
        v = v.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        scores = np.where(self._causal[:T, :T], scores, -np.inf)
        probs = _softmax_last(scores)
        probs_kept = probs
        att_mask = None
        if keep is not None:
            att_mask = keep(dropout_rng, probs.shape)
            probs_kept = probs * att_mask
        ctx = probs_kept @ v
        merged = ctx.transpose(0, 2, 1, 3).reshape(B, T, D)
        proj = merged @ p[h + "attn.wo"] + p[h + "attn.bo"]
        res1_mask = None
        if keep is not None:
            res1_mask = keep(dropout_rng, proj.shape)
            proj = proj * res1_mask
        x1 = x + proj

        b, ln2_cache = _layer_norm(x1, p[h + "ln2.g"], p[h + "ln2.b"])
        pre = b @ p[h + "mlp.w1"] + p[h + "mlp.b1"]
        act, tanh_cache = _gelu(pre)
        mlp_out = act @ p[h + "mlp.w2"] + p[h + "mlp.b2"]
        res2_mask = None
        if keep is not None:
            res2_mask = keep(dropout_rng, mlp_out.shape)
            mlp_out = mlp_out * res2_mask
        x2 = x1 + mlp_out

        cache = {
            "x": x, "a": a, "ln1": ln1_cache, "q": q, "k": k, "v": v,
            "probs": probs, "probs_kept": probs_kept, "att_mask": att_mask,
            "merged": merged, "res1_mask": res1_mask, "x1": x1, "b": b,
            "ln2": ln2_cache, "pre": pre, "act": act, "tanh": tanh_cache,
            "res2_mask": res2_mask,
        }
        return x2, cache

    def _embed(self, ids, dropout_rng, keep):
        p = self.params
        x = p["tok_emb"][ids] + p["pos_emb"][: ids.shape[1]]
        emb_mask = None
        if keep is not None:
            emb_mask = keep(dropout_rng, x.shape)
            x = x * emb_mask
        return x, emb_mask

    def _keep_fn(self, dropout_rng):
        cfg = self.config
        if cfg.dropout <= 0.0 or dropout_rng is None:
            return None

        def keep(rng, shape):
            return (rng.random(shape) >= cfg.dropout).astype(cfg.np_dtype) / (
                1.0 - cfg.dropout
            )

        return keep

    def forward(self, ids: np.ndarray, capture_attention: bool = False):
        """Logits per position; optionally per-layer attention (B,H,T,T)."""
        ids = np.asarray(ids)
        self._check_length(ids)
        x, _ = self._embed(ids, None, None)
        attentions = []
        for i in range(self.config.n_layers):
            x, cache = self._block_forward(x, i, None, None)
            if capture_attention:
                attentions.append(cache["probs"])
        xf, _ = _layer_norm(x, self.params["lnf.g"], self.params["lnf.b"])
        logits = xf @ self.params["tok_emb"].T
        if capture_attention:
            return logits, attentions
        return logits

    # -- loss + gradients ------------------------------------------------------

    def loss_and_grads(
        self,
        ids: np.ndarray,
        targets: np.ndarray,
        loss_mask: np.ndarray,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean next-token cross-entropy over unmasked positions + full grads."""
        ids = np.asarray(ids)
        targets = np.asarray(targets)
        mask = np.asarray(loss_mask, dtype=np.float64)
        self._check_length(ids)
        p, cfg = self.params, self.config
        B, T = ids.shape
        keep = self._keep_fn(dropout_rng)

        x, emb_mask = self._embed(ids, dropout_rng, keep)
        caches = []
        for i in range(cfg.n_layers):
            x, cache = self._block_forward(x, i, dropout_rng, keep)
            caches.append(cache)
        xf, lnf_cache = _layer_norm(x, p["lnf.g"], p["lnf.b"])
        logits = xf @ p["tok_emb"].T

        # loss in float64 regardless of model dtype
        lg = logits.astype(np.float64)
        m = lg.max(axis=-1, keepdims=True)
        logz = m + np.log(np.exp(lg - m).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(lg, targets[..., None], axis=-1)
        nll = (logz - picked)[..., 0]
        n_live = mask.sum()
        if n_live <= 0:
            raise ModelError("loss mask selects no positions")
        loss = float((nll * mask).sum() / n_live)

        soft = np.exp(lg - logz)
        soft[np.arange(B)[:, None], np.arange(T)[None, :], targets] -= 1.0
        dlogits = (soft * (mask / n_live)[..., None]).astype(cfg.np_dtype)

        grads = {name: np.zeros_like(tensor) for name, tensor in p.items()}
        dxf = dlogits @ p["tok_emb"]
        grads["tok_emb"] += np.einsum("btv,btd->vd", dlogits, xf)
        dx, dg, db = _layer_norm_backward(dxf, p["lnf.g"], lnf_cache)
        grads["lnf.g"] += dg
        grads["lnf.b"] += db

        for i in reversed(range(cfg.n_layers)):
            dx = self._block_backward(dx, i, caches[i], grads)

        if emb_mask is not None:
            dx = dx * emb_mask
        grads["pos_emb"][:T] += dx.sum(axis=0)
        np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, cfg.d_model))
        return loss, grads

    def _block_backward(self, dx2, i, cache, grads):
        p, cfg = self.params, self.config
        h = f"h{i}."
        B, T, D = cache["x"].shape
        H, Dh = cfg.n_heads, cfg.d_head
        scale = 1.0 / math.sqrt(Dh)

        # MLP branch
        dmlp = dx2 if cache["res2_mask"] is None else dx2 * cache["res2_mask"]
        grads[h + "mlp.b2"] += dmlp.sum(axis=(0, 1))
        grads[h + "mlp.w2"] += np.einsum("btf,btd->fd", cache["act"], dmlp)
        dact = dmlp @ p[h + "mlp.w2"].T
        dpre = _gelu_backward(dact, cache["pre"], cache["tanh"])
        grads[h + "mlp.b1"] += dpre.sum(axis=(0, 1))
        grads[h + "mlp.w1"] += np.einsum("btd,btf->df", cache["b"], dpre)
        db_ = dpre @ p[h + "mlp.w1"].T
        dx1_ln, dg2, db2 = _layer_norm_backward(db_, p[h + "ln2.g"], cache["ln2"])
        grads[h + "ln2.g"] += dg2
        grads[h + "ln2.b"] += db2
        dx1 = dx2 + dx1_ln

        # attention branch
        dproj = dx1 if cache["res1_mask"] is None else dx1 * cache["res1_mask"]
        grads[h + "attn.bo"] += dproj.sum(axis=(0, 1))
        grads[h + "attn.wo"] += np.einsum("btd,bte->de", cache["merged"], dproj)
        dmerged = dproj @ p[h + "attn.wo"].T
        dctx = dmerged.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)
        probs_kept, v = cache["probs_kept"], cache["v"]
        dprobs_kept = dctx @ v.transpose(0, 1, 3, 2)
        dv = probs_kept.transpose(0, 1, 3, 2) @ dctx
        dprobs = (
            dprobs_kept if cache["att_mask"] is None else dprobs_kept * cache["att_mask"]
        )
        probs = cache["probs"]
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        dq = (dscores @ cache["k"]) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ cache["q"]) * scale
        dqkv = np.concatenate(
            [
                g.transpose(0, 2, 1, 3).reshape(B, T, D)
                for g in (dq, dk, dv)
            ],
            axis=-1,
        )
        grads[h + "attn.bqkv"] += dqkv.sum(axis=(0, 1))
        grads[h + "attn.wqkv"] += np.einsum("btd,bte->de", cache["a"], dqkv)
        da = dqkv @ p[h + "attn.wqkv"].T
        dx_ln, dg1, db1 = _layer_norm_backward(da, p[h + "ln1.g"], cache["ln1"])
        grads[h + "ln1.g"] += dg1
        grads[h + "ln1.b"] += db1
        return dx1 + dx_ln


def param_norms(params: dict[str, np.ndarray]) -> dict[str, float]:
    return {name: float(np.linalg.norm(t)) for name, t in params.items()}
