"""Self-attention encoder with a CTC head, intermediate taps, and optional
posterior feedback (self-conditioning) at the taps.

The CTC head (and final LayerNorm) is shared between the final output and
every tap.  Tap posteriors are only computed when a caller asks for them or
when feedback is enabled, so a plain decode never touches the tap machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (Dense, EncoderBlock, LayerNorm, log_softmax,
                     log_softmax_backward, sinusoid_table, softmax_backward)


@dataclass
class EncoderOutput:
    states: np.ndarray            # (B, T, d) final normed hidden states
    log_probs: np.ndarray         # (B, T, V+1)
    tap_log_probs: list           # one (B, T, V+1) per tap, possibly empty
    cache: tuple


class CtcEncoder:
    def __init__(self, feature_dim: int, num_classes: int, d_model: int, heads: int,
                 d_ff: int, num_blocks: int, rng: np.random.Generator,
                 tap_layers: tuple[int, ...] = (), selfcond: bool = False,
                 dropout: float = 0.0, max_len: int = 4096):
        for tap in tap_layers:
            if not 1 <= tap < num_blocks:
                raise ValueError(f"tap layer {tap} out of range for {num_blocks} blocks")
        self.d_model = d_model
        self.tap_layers = tuple(sorted(tap_layers))
        self.selfcond = selfcond
        self.input = Dense(feature_dim, d_model, rng)
        self.blocks = [EncoderBlock(d_model, heads, d_ff, rng, dropout)
                       for _ in range(num_blocks)]
        self.norm = LayerNorm(d_model)
        self.head = Dense(d_model, num_classes, rng)
        self.feedback = Dense(num_classes, d_model, rng) if selfcond else None
        self.pe = sinusoid_table(max_len, d_model)

    def param_items(self, prefix: str = "enc"):
        yield from self.input.param_items(prefix + ".input")
        for i, blk in enumerate(self.blocks):
            yield from blk.param_items(f"{prefix}.block{i}")
        yield from self.norm.param_items(prefix + ".norm")
        yield from self.head.param_items(prefix + ".head")
        if self.feedback is not None:
            yield from self.feedback.param_items(prefix + ".feedback")

    def _project(self, h: np.ndarray):
        n, c_ln = self.norm.forward(h)
        logits, c_head = self.head.forward(n)
        logp = log_softmax(logits)
        return n, logp, (c_ln, c_head, logp)

    def forward(self, features: np.ndarray, key_mask: np.ndarray | None = None,
                rng: np.random.Generator | None = None, want_taps: bool = False,
                feedback_enabled: bool = True) -> EncoderOutput:
        """Run the stack. `rng` enables dropout (training); taps are evaluated
        when `want_taps` is set or self-conditioning feedback is active."""
        if features.ndim != 3:
            raise ValueError(f"expected (B, T, D) features, got {features.shape}")
        h, c_in = self.input.forward(features)
        h = h + self.pe[: h.shape[1]]
        use_taps = want_taps or self.selfcond
        block_caches = []
        tap_caches = {}
        tap_logps = []
        for i, blk in enumerate(self.blocks):
            h, cb = blk.forward(h, key_mask=key_mask, rng=rng)
            block_caches.append(cb)
            if (i + 1) in self.tap_layers and use_taps:
                _, logp, c_proj = self._project(h)
                tap_logps.append(logp)
                c_fb = None
                if self.selfcond and feedback_enabled:
                    post = np.exp(logp)
                    fb, c_fb = self.feedback.forward(post)
                    h = h + fb
                tap_caches[i] = (c_proj, c_fb)
        states, logp, c_final = self._project(h)
        cache = (c_in, block_caches, tap_caches, c_final)
        return EncoderOutput(states, logp, tap_logps, cache)

    def backward(self, out: EncoderOutput, dlog_probs: np.ndarray | None = None,
                 dtaps: list | None = None, dstates: np.ndarray | None = None) -> None:
        """Accumulate parameter gradients from any mix of output gradients."""
        c_in, block_caches, tap_caches, c_final = out.cache

        def proj_backward(dlogp, dn_extra, c_proj):
            c_ln, c_head, logp = c_proj
            dn = 0.0
            if dlogp is not None:
                dn = self.head.backward(log_softmax_backward(dlogp, logp), c_head)
            if dn_extra is not None:
                dn = dn + dn_extra
            return self.norm.backward(dn, c_ln)

        dh = proj_backward(dlog_probs, dstates, c_final)
        tap_idx = len(out.tap_log_probs) - 1
        for i in range(len(self.blocks) - 1, -1, -1):
            if i in tap_caches:
                c_proj, c_fb = tap_caches[i]
                logp = out.tap_log_probs[tap_idx]
                dlogp_tap = None
                if dtaps is not None and dtaps[tap_idx] is not None:
                    dlogp_tap = dtaps[tap_idx]
                if c_fb is not None:
                    dpost = self.feedback.backward(dh, c_fb)
                    dlogp_fb = dpost * np.exp(logp)  # d softmax via d exp(logp)
                    dlogp_tap = dlogp_fb if dlogp_tap is None else dlogp_tap + dlogp_fb
                if dlogp_tap is not None:
                    dh = dh + proj_backward(dlogp_tap, None, c_proj)
                tap_idx -= 1
            dh = self.blocks[i].backward(dh, block_caches[i])
        self.input.backward(dh, c_in)
