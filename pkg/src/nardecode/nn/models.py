"""Trainable models for every decoding method, built on the shared layers.

Each model owns its parameters (exposed as flat name->array dicts), knows how
to accumulate gradients for one batch, and implements its own decode loop.
CTC-family training is batched with padding masks; the insertion/CIF variants
loop per utterance inside a batch, which keeps the bookkeeping simple at the
scale this package targets.
"""

from __future__ import annotations

import numpy as np

from .. import aligndenoise as ad
from .. import cif as cif_ops
from .. import insertion as ins_ops
from .. import maskctc as mc
from ..ctc import Vocab, best_path_decode, ctc_loss, viterbi_alignment
from .encoder import CtcEncoder
from .layers import (Dense, DecoderBlock, Embedding, LayerNorm, log_softmax,
                     log_softmax_backward, sinusoid_table)

METHODS = ("ctc", "maskctc", "imaskctc", "aligndenoise", "interctc", "selfcond",
           "insertion", "kermit", "cifna", "ar")


def pad_features(feats_list):
    lengths = [f.shape[0] for f in feats_list]
    B, Tmax, D = len(feats_list), max(lengths), feats_list[0].shape[1]
    out = np.zeros((B, Tmax, D))
    mask = np.zeros((B, Tmax), dtype=bool)
    for b, f in enumerate(feats_list):
        out[b, : lengths[b]] = f
        mask[b, : lengths[b]] = True
    return out, mask, lengths


def pad_ids(ids_list, pad_id: int):
    lengths = [len(i) for i in ids_list]
    B, Lmax = len(ids_list), max(lengths) if ids_list else 0
    out = np.full((B, max(Lmax, 1)), pad_id, dtype=np.int64)
    mask = np.zeros((B, max(Lmax, 1)), dtype=bool)
    for b, ids in enumerate(ids_list):
        if ids:
            out[b, : lengths[b]] = ids
        mask[b, : lengths[b]] = True
    return out, mask, lengths


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def ctc_objective(out, targets, lengths, inter_weight: float, weight_scale: float = 1.0):
    """Batch-mean CTC loss over the final grid and any intermediate taps.

    Returns (loss, dfinal, dtaps) with the intermediate mixing and an overall
    `weight_scale` already applied.
    """
    B = len(targets)
    taps = out.tap_log_probs
    w = inter_weight if taps else 0.0
    f_w = (1.0 - w) * weight_scale
    t_w = (w / len(taps)) * weight_scale if taps else 0.0
    total = 0.0
    dfinal = np.zeros_like(out.log_probs)
    dtaps = [np.zeros_like(t) for t in taps]
    for b, tgt in enumerate(targets):
        Tb = lengths[b]
        loss_b, grad_b = ctc_loss(out.log_probs[b, :Tb], tgt)
        total += f_w * loss_b / B
        dfinal[b, :Tb] += (f_w / B) * grad_b
        for k, tap in enumerate(taps):
            loss_t, grad_t = ctc_loss(tap[b, :Tb], tgt)
            total += t_w * loss_t / B
            dtaps[k][b, :Tb] += (t_w / B) * grad_t
    return total, dfinal, dtaps


class DecoderStack:
    """Cross-attending (or plain) block stack with a final LayerNorm."""

    def __init__(self, d_model, heads, d_ff, blocks, rng, causal=False):
        self.blocks = [DecoderBlock(d_model, heads, d_ff, rng, causal=causal)
                       for _ in range(blocks)]
        self.norm = LayerNorm(d_model)
        self.calls = 0

    def param_items(self, prefix):
        for i, blk in enumerate(self.blocks):
            yield from blk.param_items(f"{prefix}.block{i}")
        yield from self.norm.param_items(prefix + ".norm")

    def forward(self, x, enc, self_mask=None, enc_mask=None, rng=None):
        self.calls += 1
        caches = []
        for blk in self.blocks:
            x, c = blk.forward(x, enc, self_mask=self_mask, enc_mask=enc_mask, rng=rng)
            caches.append(c)
        out, cn = self.norm.forward(x)
        return out, (caches, cn)

    def backward(self, dout, cache):
        caches, cn = cache
        dx = self.norm.backward(dout, cn)
        denc = 0.0
        for blk, c in zip(reversed(self.blocks), reversed(caches)):
            dx, de = blk.backward(dx, c)
            denc = denc + de
        return dx, denc


class ModelBase:
    method = "base"

    def _finalize(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, p, g in self.param_items():
            self.params[name] = p
            self.grads[name] = g

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def load_params(self, values: dict[str, np.ndarray]):
        missing = set(self.params) ^ set(values)
        if missing:
            raise ValueError(f"parameter name mismatch: {sorted(missing)[:4]}...")
        for name, arr in values.items():
            if self.params[name].shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}")
            self.params[name][...] = arr


class CtcModel(ModelBase):
    """Plain CTC, intermediate CTC, or self-conditioned CTC encoder."""

    def __init__(self, vocab: Vocab, feature_dim: int, rng, *, d_model=64, heads=2,
                 d_ff=128, enc_blocks=4, dropout=0.0, tap_layers=(), selfcond=False,
                 inter_weight=0.5, method="ctc"):
        self.vocab = vocab
        self.method = method
        self.inter_weight = inter_weight if tap_layers else 0.0
        self.encoder = CtcEncoder(feature_dim, vocab.grid_classes, d_model, heads,
                                  d_ff, enc_blocks, rng, tap_layers=tuple(tap_layers),
                                  selfcond=selfcond, dropout=dropout)
        self._finalize()

    def param_items(self):
        yield from self.encoder.param_items("enc")

    def loss_and_grad(self, batch, rng=None) -> float:
        feats, kpm, lengths = pad_features([u.features for u in batch])
        out = self.encoder.forward(feats, key_mask=kpm, rng=rng,
                                   want_taps=self.inter_weight > 0)
        loss, dfinal, dtaps = ctc_objective(
            out, [u.transcript for u in batch], lengths, self.inter_weight)
        self.encoder.backward(out, dfinal, dtaps or None)
        return loss

    def grid(self, features, feedback_enabled=True):
        out = self.encoder.forward(features[None], want_taps=False,
                                   feedback_enabled=feedback_enabled)
        return out.log_probs[0]

    def decode(self, features, feedback_enabled=True):
        tokens, _ = best_path_decode(self.grid(features, feedback_enabled))
        return tokens, 1


class MaskCtcModel(ModelBase):
    """CTC encoder plus a CMLM decoder; optionally the length-prediction
    variant (improved=True) and/or intermediate CTC on the encoder."""

    def __init__(self, vocab: Vocab, feature_dim: int, rng, *, d_model=64, heads=2,
                 d_ff=128, enc_blocks=4, dec_blocks=2, dropout=0.0, improved=False,
                 cmlm_weight=0.7, p_thr=0.99, iterations=10, span_mean=2.0,
                 length_classes=50, length_weight=0.3, tap_layers=(),
                 inter_weight=0.5):
        self.vocab = vocab
        self.method = "imaskctc" if improved else "maskctc"
        self.improved = improved
        self.cmlm_weight = cmlm_weight
        self.p_thr = p_thr
        self.iterations = iterations
        self.span_mean = span_mean
        self.length_classes = length_classes
        self.length_weight = length_weight
        self.inter_weight = inter_weight if tap_layers else 0.0
        self.encoder = CtcEncoder(feature_dim, vocab.grid_classes, d_model, heads,
                                  d_ff, enc_blocks, rng, tap_layers=tuple(tap_layers),
                                  dropout=dropout)
        self.embed = Embedding(vocab.size + 2, d_model, rng)  # tokens, blank(pad), mask
        self.stack = DecoderStack(d_model, heads, d_ff, dec_blocks, rng)
        self.out_head = Dense(d_model, vocab.size, rng)
        self.len_head = Dense(d_model, length_classes, rng) if improved else None
        self.pe = sinusoid_table(4096, d_model)
        self._finalize()

    def param_items(self):
        yield from self.encoder.param_items("enc")
        yield from self.embed.param_items("dec.embed")
        yield from self.stack.param_items("dec")
        yield from self.out_head.param_items("dec.out")
        if self.len_head is not None:
            yield from self.len_head.param_items("dec.len")

    def _decoder_forward(self, ids, ids_mask, enc_states, enc_mask, rng=None):
        emb, ce = self.embed.forward(ids)
        x = emb + self.pe[: ids.shape[1]]
        states, cs = self.stack.forward(x, enc_states, self_mask=ids_mask,
                                        enc_mask=enc_mask, rng=rng)
        return states, (ce, cs)

    def _decoder_backward(self, dstates, cache):
        ce, cs = cache
        dx, denc = self.stack.backward(dstates, cache=cs)
        self.embed.backward(dx, ce)
        return denc

    def loss_and_grad(self, batch, rng=None) -> float:
        B = len(batch)
        feats, kpm, lengths = pad_features([u.features for u in batch])
        out = self.encoder.forward(feats, key_mask=kpm, rng=rng,
                                   want_taps=self.inter_weight > 0)
        loss, dfinal, dtaps = ctc_objective(
            out, [u.transcript for u in batch], lengths, self.inter_weight,
            weight_scale=1.0 - self.cmlm_weight)

        pairs = []
        observed = []
        span_pairs = []
        for u in batch:
            if self.improved:
                sp = mc.span_mask(u.transcript, rng, self.vocab.mask_id, self.span_mean)
                span_pairs.append(sp)
                pairs.append(sp.expand(self.vocab.mask_id))
            else:
                pairs.append(mc.random_mask(u.transcript, rng, self.vocab.mask_id))
            observed.append(list(pairs[-1].observed))

        ids, ids_mask, obs_lens = pad_ids(observed, self.vocab.blank_id)
        states, dc = self._decoder_forward(ids, ids_mask, out.states, kpm, rng=rng)
        logits, ch = self.out_head.forward(states)
        logp = log_softmax(logits)
        dlogp = np.zeros_like(logp)
        for b, pair in enumerate(pairs):
            l_b, g_b = mc.cmlm_loss(logp[b, : obs_lens[b]], pair)
            loss += self.cmlm_weight * l_b / B
            dlogp[b, : obs_lens[b]] += (self.cmlm_weight / B) * g_b
        dstates = self.out_head.backward(log_softmax_backward(dlogp, logp), ch)
        denc = self._decoder_backward(dstates, dc)

        if self.improved:
            ph_ids, ph_mask, ph_lens = pad_ids(
                [list(sp.observed) for sp in span_pairs], self.vocab.blank_id)
            ph_states, ph_dc = self._decoder_forward(ph_ids, ph_mask, out.states,
                                                     kpm, rng=rng)
            len_logits, cl = self.len_head.forward(ph_states)
            len_logp = log_softmax(len_logits)
            dlen = np.zeros_like(len_logp)
            for b, sp in enumerate(span_pairs):
                labels = mc.length_labels(batch[b].transcript, sp, self.length_classes)
                for (pos, _), lab in zip(sp.runs, labels):
                    loss -= self.length_weight * len_logp[b, pos, lab] / B
                    dlen[b, pos, lab] -= self.length_weight / B
            dph = self.len_head.backward(log_softmax_backward(dlen, len_logp), cl)
            denc = denc + self._decoder_backward(dph, ph_dc)

        self.encoder.backward(out, dfinal, dtaps or None, dstates=denc)
        return loss

    def _cmlm_closure(self, enc_states, enc_mask):
        def decode_step(tokens):
            ids = np.asarray([list(tokens)], dtype=np.int64)
            states, _ = self._decoder_forward(ids, np.ones_like(ids, dtype=bool),
                                              enc_states, enc_mask)
            logits, _ = self.out_head.forward(states)
            return log_softmax(logits)[0]
        return decode_step

    def _length_closure(self, enc_states, enc_mask):
        def predict(tokens):
            ids = np.asarray([list(tokens)], dtype=np.int64)
            states, _ = self._decoder_forward(ids, np.ones_like(ids, dtype=bool),
                                              enc_states, enc_mask)
            logits, _ = self.len_head.forward(states)
            picks = np.argmax(logits[0], axis=-1)
            return tuple(int(picks[i]) for i, t in enumerate(tokens)
                         if t == self.vocab.mask_id)
        return predict

    def decode(self, features):
        out = self.encoder.forward(features[None], want_taps=False)
        grid = out.log_probs[0]
        dec = self._cmlm_closure(out.states, None)
        if self.improved:
            predictor = self._length_closure(out.states, None)
            tokens, calls = mc.improved_mask_ctc_decode(
                grid, dec, predictor, self.p_thr, self.iterations, self.vocab.mask_id)
        else:
            tokens, calls = mc.mask_ctc_decode(
                grid, dec, self.p_thr, self.iterations, self.vocab.mask_id)
        return tokens, calls


class AlignDenoiseModel(ModelBase):
    """Encoder-decoder on frames: the decoder re-reads a noisy alignment."""

    method = "aligndenoise"

    def __init__(self, vocab: Vocab, feature_dim: int, rng, *, d_model=64, heads=2,
                 d_ff=128, enc_blocks=4, dec_blocks=2, dropout=0.0,
                 noise: ad.NoiseSpec | None = None, decoder_weight=0.5):
        from .layers import EncoderBlock
        self.vocab = vocab
        self.noise = noise or ad.NoiseSpec()
        self.decoder_weight = decoder_weight
        self.encoder = CtcEncoder(feature_dim, vocab.grid_classes, d_model, heads,
                                  d_ff, enc_blocks, rng, dropout=dropout)
        self.align_embed = Embedding(vocab.grid_classes, d_model, rng)
        self.dec_blocks = [EncoderBlock(d_model, heads, d_ff, rng, dropout)
                           for _ in range(dec_blocks)]
        self.dec_norm = LayerNorm(d_model)
        self.dec_head = Dense(d_model, vocab.grid_classes, rng)
        self._finalize()

    def param_items(self):
        yield from self.encoder.param_items("enc")
        yield from self.align_embed.param_items("dec.embed")
        for i, blk in enumerate(self.dec_blocks):
            yield from blk.param_items(f"dec.block{i}")
        yield from self.dec_norm.param_items("dec.norm")
        yield from self.dec_head.param_items("dec.head")

    def _decoder_grid(self, enc_states, align_ids, key_mask=None, rng=None):
        emb, ce = self.align_embed.forward(align_ids)
        h = enc_states + emb
        caches = []
        for blk in self.dec_blocks:
            h, c = blk.forward(h, key_mask=key_mask, rng=rng)
            caches.append(c)
        n, cn = self.dec_norm.forward(h)
        logits, chd = self.dec_head.forward(n)
        logp = log_softmax(logits)
        return logp, (ce, caches, cn, chd, logp)

    def _decoder_backward(self, dlogp, cache):
        ce, caches, cn, chd, logp = cache
        dn = self.dec_head.backward(log_softmax_backward(dlogp, logp), chd)
        dh = self.dec_norm.backward(dn, cn)
        for blk, c in zip(reversed(self.dec_blocks), reversed(caches)):
            dh = blk.backward(dh, c)
        self.align_embed.backward(dh, ce)
        return dh  # gradient w.r.t. encoder states

    def loss_and_grad(self, batch, rng=None) -> float:
        B = len(batch)
        feats, kpm, lengths = pad_features([u.features for u in batch])
        out = self.encoder.forward(feats, key_mask=kpm, rng=rng)
        w_enc = 1.0 - self.decoder_weight
        loss = 0.0
        dfinal = np.zeros_like(out.log_probs)
        aligns = np.zeros(kpm.shape, dtype=np.int64)
        for b, u in enumerate(batch):
            Tb = lengths[b]
            l_b, g_b = ctc_loss(out.log_probs[b, :Tb], u.transcript)
            loss += w_enc * l_b / B
            dfinal[b, :Tb] += (w_enc / B) * g_b
            z_gt = viterbi_alignment(out.log_probs[b, :Tb], u.transcript)
            noisy = ad.corrupt_alignment(z_gt, self.noise, rng,
                                         self.vocab.grid_classes)
            aligns[b, :Tb] = noisy
        dec_logp, dc = self._decoder_grid(out.states, aligns, key_mask=kpm, rng=rng)
        ddec = np.zeros_like(dec_logp)
        for b, u in enumerate(batch):
            Tb = lengths[b]
            l_b, g_b = ad.align_denoise_loss(dec_logp[b, :Tb], u.transcript)
            loss += self.decoder_weight * l_b / B
            ddec[b, :Tb] += (self.decoder_weight / B) * g_b
        dstates = self._decoder_backward(ddec, dc)
        self.encoder.backward(out, dfinal, dstates=dstates)
        return loss

    def decode(self, features):
        out = self.encoder.forward(features[None])

        def refine(alignment):
            ids = np.asarray([list(alignment)], dtype=np.int64)
            logp, _ = self._decoder_grid(out.states, ids)
            return logp[0]

        tokens, calls = ad.denoise_decode(out.log_probs[0], refine)
        return tokens, calls


class InsertionModel(ModelBase):
    """Encoder-decoder Insertion Transformer with slot-parallel decoding."""

    method = "insertion"

    def __init__(self, vocab: Vocab, feature_dim: int, rng, *, d_model=64, heads=2,
                 d_ff=128, enc_blocks=4, dec_blocks=2, dropout=0.0, max_rounds=64):
        self.vocab = vocab
        self.max_rounds = max_rounds
        self.bos_id = vocab.size
        self.bnd_id = vocab.size + 1
        self.eos_class = vocab.size  # end-of-slot in the slot distribution
        self.encoder = CtcEncoder(feature_dim, vocab.grid_classes, d_model, heads,
                                  d_ff, enc_blocks, rng, dropout=dropout)
        self.embed = Embedding(vocab.size + 2, d_model, rng)
        self.stack = DecoderStack(d_model, heads, d_ff, dec_blocks, rng)
        self.slot_head = Dense(2 * d_model, vocab.size + 1, rng)
        self.pe = sinusoid_table(4096, d_model)
        self._finalize()

    def param_items(self):
        yield from self.encoder.param_items("enc")
        yield from self.embed.param_items("dec.embed")
        yield from self.stack.param_items("dec")
        yield from self.slot_head.param_items("dec.slot")

    def _slot_logp(self, hyp, enc_states, enc_mask, rng=None):
        ids = np.asarray([[self.bos_id, *hyp, self.bnd_id]], dtype=np.int64)
        emb, ce = self.embed.forward(ids)
        x = emb + self.pe[: ids.shape[1]]
        states, cs = self.stack.forward(x, enc_states, enc_mask=enc_mask, rng=rng)
        feat = np.concatenate([states[:, :-1], states[:, 1:]], axis=-1)
        logits, chd = self.slot_head.forward(feat)
        logp = log_softmax(logits)
        return logp[0], (ce, cs, chd, logp)

    def _slot_backward(self, dlogp, cache):
        ce, cs, chd, logp = cache
        dfeat = self.slot_head.backward(log_softmax_backward(dlogp[None], logp), chd)
        d = dfeat.shape[-1] // 2
        dstates = np.zeros((1, dfeat.shape[1] + 1, d))
        dstates[:, :-1] += dfeat[..., :d]
        dstates[:, 1:] += dfeat[..., d:]
        dx, denc = self.stack.backward(dstates, cs)
        self.embed.backward(dx, ce)
        return denc

    def loss_and_grad(self, batch, rng=None) -> float:
        B = len(batch)
        loss = 0.0
        for u in batch:
            out = self.encoder.forward(u.features[None], rng=rng)
            schedule = ins_ops.bbt_schedule(u.transcript)
            depth = int(rng.integers(0, len(schedule.rounds) + 1))
            hyp = ins_ops.hypothesis_at(schedule, depth)
            required = schedule.rounds[depth] if depth < len(schedule.rounds) else ()
            logp, cache = self._slot_logp(hyp, out.states, None, rng=rng)
            l_b, g_b = ins_ops.insertion_loss(logp, required, self.eos_class)
            loss += l_b / B
            denc = self._slot_backward(g_b / B, cache)
            self.encoder.backward(out, dstates=denc)
        return loss

    def decode(self, features):
        out = self.encoder.forward(features[None])

        def slot_model(hyp):
            logp, _ = self._slot_logp(hyp, out.states, None)
            return logp

        return ins_ops.insertion_decode(slot_model, self.max_rounds, self.eos_class)


class KermitModel(ModelBase):
    """Single-stack insertion model over [frames; tokens] with a CTC head
    conditioned on the partial hypothesis."""

    method = "kermit"

    def __init__(self, vocab: Vocab, feature_dim: int, rng, *, d_model=64, heads=2,
                 d_ff=128, enc_blocks=4, dropout=0.0, lam=0.5, rounds_budget=None,
                 max_rounds=64):
        from .layers import EncoderBlock
        self.vocab = vocab
        self.lam = lam
        self.rounds_budget = rounds_budget
        self.max_rounds = max_rounds
        self.bos_id = vocab.size
        self.bnd_id = vocab.size + 1
        self.eos_class = vocab.size
        self.proj = Dense(feature_dim, d_model, rng)
        self.embed = Embedding(vocab.size + 2, d_model, rng)
        self.segment = Embedding(2, d_model, rng)
        self.blocks = [EncoderBlock(d_model, heads, d_ff, rng, dropout)
                       for _ in range(enc_blocks)]
        self.norm = LayerNorm(d_model)
        self.ctc_head = Dense(d_model, vocab.grid_classes, rng)
        self.slot_head = Dense(2 * d_model, vocab.size + 1, rng)
        self.pe = sinusoid_table(4096, d_model)
        self._finalize()

    def param_items(self):
        yield from self.proj.param_items("proj")
        yield from self.embed.param_items("embed")
        yield from self.segment.param_items("segment")
        for i, blk in enumerate(self.blocks):
            yield from blk.param_items(f"block{i}")
        yield from self.norm.param_items("norm")
        yield from self.ctc_head.param_items("ctc_head")
        yield from self.slot_head.param_items("slot_head")

    def _forward(self, features, hyp, rng=None):
        T = features.shape[0]
        ids = np.asarray([[self.bos_id, *hyp, self.bnd_id]], dtype=np.int64)
        fr, cp = self.proj.forward(features[None])
        tok, ce = self.embed.forward(ids)
        seg_ids = np.concatenate([np.zeros(T, dtype=np.int64),
                                  np.ones(ids.shape[1], dtype=np.int64)])[None]
        seg, cseg = self.segment.forward(seg_ids)
        x = np.concatenate([fr + self.pe[:T], tok + self.pe[: ids.shape[1]]], axis=1)
        x = x + seg
        caches = []
        for blk in self.blocks:
            x, c = blk.forward(x, rng=rng)
            caches.append(c)
        n, cn = self.norm.forward(x)
        ctc_logits, cc = self.ctc_head.forward(n[:, :T])
        grid = log_softmax(ctc_logits)
        tok_states = n[:, T:]
        feat = np.concatenate([tok_states[:, :-1], tok_states[:, 1:]], axis=-1)
        slot_logits, csl = self.slot_head.forward(feat)
        slot_logp = log_softmax(slot_logits)
        cache = (cp, ce, cseg, caches, cn, cc, csl, grid, slot_logp, T)
        return grid[0], slot_logp[0], cache

    def _backward(self, dgrid, dslot, cache):
        cp, ce, cseg, caches, cn, cc, csl, grid, slot_logp, T = cache
        dfeat = self.slot_head.backward(
            log_softmax_backward(dslot[None], slot_logp), csl)
        d = dfeat.shape[-1] // 2
        dtok = np.zeros((1, dfeat.shape[1] + 1, d))
        dtok[:, :-1] += dfeat[..., :d]
        dtok[:, 1:] += dfeat[..., d:]
        dframes = self.ctc_head.backward(
            log_softmax_backward(dgrid[None], grid), cc)
        dn = np.concatenate([dframes, dtok], axis=1)
        dx = self.norm.backward(dn, cn)
        for blk, c in zip(reversed(self.blocks), reversed(caches)):
            dx = blk.backward(dx, c)
        self.segment.backward(dx, cseg)
        self.proj.backward(dx[:, :T], cp)
        self.embed.backward(dx[:, T:], ce)

    def loss_and_grad(self, batch, rng=None) -> float:
        B = len(batch)
        loss = 0.0
        for u in batch:
            schedule = ins_ops.bbt_schedule(u.transcript)
            depth = int(rng.integers(0, len(schedule.rounds) + 1))
            hyp = ins_ops.hypothesis_at(schedule, depth)
            required = schedule.rounds[depth] if depth < len(schedule.rounds) else ()
            grid, slot_logp, cache = self._forward(u.features, hyp, rng=rng)
            l_ins, g_ins = ins_ops.insertion_loss(slot_logp, required, self.eos_class)
            l_ctc, g_ctc = ctc_loss(grid, u.transcript)
            loss += (l_ins + self.lam * l_ctc) / B
            self._backward((self.lam / B) * g_ctc, g_ins / B, cache)
        return loss

    def joint_closure(self, features):
        def joint(hyp):
            grid, slot_logp, _ = self._forward(features, hyp)
            return slot_logp, grid
        return joint

    def decode(self, features):
        return ins_ops.kermit_decode(self.joint_closure(features),
                                     self.rounds_budget, self.eos_class,
                                     self.max_rounds)

    def decode_with_budget(self, features, rounds_budget):
        return ins_ops.kermit_decode(self.joint_closure(features), rounds_budget,
                                     self.eos_class, self.max_rounds)


class CifModel(ModelBase):
    """CIF weight accumulation feeding a parallel decoder, with CTC and
    quantity-loss supervision on the encoder side."""

    method = "cifna"

    def __init__(self, vocab: Vocab, feature_dim: int, rng, *, d_model=64, heads=2,
                 d_ff=128, enc_blocks=4, dec_blocks=2, dropout=0.0, threshold=1.0,
                 tail="discard", w_ctc=0.5, w_qua=1.0, w_cif=1.0):
        self.vocab = vocab
        self.threshold = threshold
        self.tail = tail
        self.w_ctc = w_ctc
        self.w_qua = w_qua
        self.w_cif = w_cif
        self.encoder = CtcEncoder(feature_dim, vocab.grid_classes, d_model, heads,
                                  d_ff, enc_blocks, rng, dropout=dropout)
        self.alpha_head = Dense(d_model, 1, rng)
        self.stack = DecoderStack(d_model, heads, d_ff, dec_blocks, rng)
        self.out_head = Dense(d_model, vocab.size, rng)
        self.pe = sinusoid_table(4096, d_model)
        self._finalize()

    def param_items(self):
        yield from self.encoder.param_items("enc")
        yield from self.alpha_head.param_items("alpha")
        yield from self.stack.param_items("dec")
        yield from self.out_head.param_items("dec.out")

    def _alphas(self, states):
        raw, ca = self.alpha_head.forward(states)
        alphas = sigmoid(raw[..., 0])
        return alphas, (ca, alphas)

    def _alpha_backward(self, dalphas, cache):
        ca, alphas = cache
        draw = (dalphas * alphas * (1.0 - alphas))[..., None]
        return self.alpha_head.backward(draw, ca)

    def _decode_positions(self, embeddings, enc_states, rng=None):
        x = embeddings[None] + self.pe[: embeddings.shape[0]]
        states, cs = self.stack.forward(x, enc_states, rng=rng)
        logits, ch = self.out_head.forward(states)
        logp = log_softmax(logits)
        return logp[0], (cs, ch, logp)

    def _decode_backward(self, dlogp, cache):
        cs, ch, logp = cache
        dstates = self.out_head.backward(log_softmax_backward(dlogp[None], logp), ch)
        dx, denc = self.stack.backward(dstates, cs)
        return dx[0], denc

    def loss_and_grad(self, batch, rng=None) -> float:
        B = len(batch)
        loss = 0.0
        for u in batch:
            out = self.encoder.forward(u.features[None], rng=rng)
            states = out.states[0]
            target = u.transcript
            L = len(target)
            l_ctc, g_ctc = ctc_loss(out.log_probs[0], target)
            alphas, ca = self._alphas(states)
            l_qua, g_qua = cif_ops.quantity_loss(alphas, L)
            scaled = cif_ops.train_scale(alphas, L)
            emb, cache_int = cif_ops.cif_integrate(scaled, states, self.threshold)
            logp, cd = self._decode_positions(emb, out.states, rng=rng)
            l_cif, g_cif = cif_ops.cross_entropy_loss(logp, target)
            loss += (self.w_cif * l_cif + self.w_ctc * l_ctc + self.w_qua * l_qua) / B

            demb, denc_cross = self._decode_backward((self.w_cif / B) * g_cif, cd)
            dscaled, dstates_int = cif_ops.cif_integrate_backward(demb, cache_int)
            dalphas = cif_ops.train_scale_backward(dscaled, alphas, L)
            dalphas = dalphas + (self.w_qua / B) * g_qua
            dstates_alpha = self._alpha_backward(dalphas, ca)
            dstates = denc_cross + (dstates_int + dstates_alpha)[None]
            self.encoder.backward(out, (self.w_ctc / B) * g_ctc[None],
                                  dstates=dstates)
        return loss

    def decode(self, features):
        out = self.encoder.forward(features[None])
        alphas, _ = self._alphas(out.states[0])
        emb, _ = cif_ops.cif_integrate(alphas, out.states[0], self.threshold,
                                       tail=self.tail)
        if emb.shape[0] == 0:
            return (), 1
        logp, _ = self._decode_positions(emb, out.states)
        tokens = tuple(int(t) for t in np.argmax(logp, axis=-1))
        return tokens, 1


class ArModel(ModelBase):
    """Greedy autoregressive baseline: one decoder pass per output token."""

    method = "ar"

    def __init__(self, vocab: Vocab, feature_dim: int, rng, *, d_model=64, heads=2,
                 d_ff=128, enc_blocks=4, dec_blocks=2, dropout=0.0, max_len=200):
        self.vocab = vocab
        self.max_len = max_len
        self.bos_id = vocab.size
        self.eos_class = vocab.size
        self.encoder = CtcEncoder(feature_dim, vocab.grid_classes, d_model, heads,
                                  d_ff, enc_blocks, rng, dropout=dropout)
        self.embed = Embedding(vocab.size + 1, d_model, rng)
        self.stack = DecoderStack(d_model, heads, d_ff, dec_blocks, rng, causal=True)
        self.out_head = Dense(d_model, vocab.size + 1, rng)
        self.pe = sinusoid_table(4096, d_model)
        self._finalize()

    def param_items(self):
        yield from self.encoder.param_items("enc")
        yield from self.embed.param_items("dec.embed")
        yield from self.stack.param_items("dec")
        yield from self.out_head.param_items("dec.out")

    def _decoder_logp(self, ids, enc_states, enc_mask, rng=None):
        emb, ce = self.embed.forward(ids)
        x = emb + self.pe[: ids.shape[1]]
        states, cs = self.stack.forward(x, enc_states, enc_mask=enc_mask, rng=rng)
        logits, ch = self.out_head.forward(states)
        logp = log_softmax(logits)
        return logp, (ce, cs, ch, logp)

    def _decoder_backward(self, dlogp, cache):
        ce, cs, ch, logp = cache
        dstates = self.out_head.backward(log_softmax_backward(dlogp, logp), ch)
        dx, denc = self.stack.backward(dstates, cs)
        self.embed.backward(dx, ce)
        return denc

    def loss_and_grad(self, batch, rng=None) -> float:
        B = len(batch)
        feats, kpm, lengths = pad_features([u.features for u in batch])
        out = self.encoder.forward(feats, key_mask=kpm, rng=rng)
        dec_in = [[self.bos_id, *u.transcript] for u in batch]
        ids, _, in_lens = pad_ids(dec_in, self.bos_id)
        logp, cache = self._decoder_logp(ids, out.states, kpm, rng=rng)
        loss = 0.0
        dlogp = np.zeros_like(logp)
        for b, u in enumerate(batch):
            targets = [*u.transcript, self.eos_class]
            for pos, y in enumerate(targets):
                loss -= logp[b, pos, y] / B
                dlogp[b, pos, y] -= 1.0 / B
        denc = self._decoder_backward(dlogp, cache)
        self.encoder.backward(out, dstates=denc)
        return float(loss)

    def decode(self, features):
        out = self.encoder.forward(features[None])
        prefix = [self.bos_id]
        tokens = []
        iterations = 0
        while iterations < self.max_len:
            ids = np.asarray([prefix], dtype=np.int64)
            logp, _ = self._decoder_logp(ids, out.states, None)
            iterations += 1
            nxt = int(np.argmax(logp[0, -1]))
            if nxt == self.eos_class:
                break
            tokens.append(nxt)
            prefix.append(nxt)
        return tuple(tokens), iterations


def build_model(method: str, cfg, vocab: Vocab, feature_dim: int,
                rng: np.random.Generator | None = None):
    """Construct the model for a method from a Config."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if rng is None:
        rng = np.random.default_rng((int(cfg.get("seed")), METHODS.index(method)))
    m = cfg.section("model")
    common = dict(d_model=m["d_model"], heads=m["heads"], d_ff=m["d_ff"],
                  enc_blocks=m["enc_blocks"], dropout=m["dropout"])
    dec = dict(dec_blocks=m["dec_blocks"])
    taps = tuple(cfg.get("inter.layers") or ())
    if method in ("interctc", "selfcond") and not taps:
        taps = (max(1, m["enc_blocks"] // 2),)
    if method == "ctc":
        return CtcModel(vocab, feature_dim, rng, **common, method="ctc")
    if method == "interctc":
        return CtcModel(vocab, feature_dim, rng, **common, method="interctc",
                        tap_layers=taps, inter_weight=cfg.get("inter.weight"))
    if method == "selfcond":
        return CtcModel(vocab, feature_dim, rng, **common, method="selfcond",
                        tap_layers=taps, selfcond=True,
                        inter_weight=cfg.get("inter.weight"))
    if method in ("maskctc", "imaskctc"):
        return MaskCtcModel(
            vocab, feature_dim, rng, **common, **dec,
            improved=method == "imaskctc",
            cmlm_weight=cfg.get("mask_ctc.cmlm_weight"),
            p_thr=cfg.get("mask_ctc.p_thr"),
            iterations=cfg.get("improved.iterations" if method == "imaskctc"
                               else "mask_ctc.iterations"),
            span_mean=cfg.get("improved.span_mean"),
            length_classes=cfg.get("improved.length_classes"),
            length_weight=cfg.get("improved.length_weight"),
            tap_layers=tuple(cfg.get("inter.layers") or ()),
            inter_weight=cfg.get("inter.weight"))
    if method == "aligndenoise":
        noise = ad.NoiseSpec(cfg.get("align_denoise.sub_rate"),
                             cfg.get("align_denoise.del_rate"),
                             cfg.get("align_denoise.ins_rate"))
        return AlignDenoiseModel(vocab, feature_dim, rng, **common, **dec,
                                 noise=noise,
                                 decoder_weight=cfg.get("align_denoise.decoder_weight"))
    if method == "insertion":
        return InsertionModel(vocab, feature_dim, rng, **common, **dec,
                              max_rounds=cfg.get("insertion.max_rounds"))
    if method == "kermit":
        return KermitModel(vocab, feature_dim, rng, **common,
                           lam=cfg.get("kermit.lambda"),
                           rounds_budget=cfg.get("kermit.rounds_budget"),
                           max_rounds=cfg.get("insertion.max_rounds"))
    if method == "cifna":
        return CifModel(vocab, feature_dim, rng, **common, **dec,
                        threshold=cfg.get("cif.threshold"),
                        tail=cfg.get("cif.tail_handling"),
                        w_ctc=cfg.get("cif.w_ctc"), w_qua=cfg.get("cif.w_qua"))
    return ArModel(vocab, feature_dim, rng, **common, **dec,
                   max_len=cfg.get("ar.max_len"))
