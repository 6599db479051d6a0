"""Sampling-based iterative list editor.

Rather than decoding a list left to right, the generator repeatedly edits the
current list: a position head scores which slot to replace, and a candidate
head scores which candidate to put there. Both heads sample through a
Gumbel-softmax relaxation, so the forward pass commits to hard argmax choices
while gradients flow through the soft distributions (straight-through).

Embedding tables, the list-attention trunk and the session encoder are shared
with a frozen evaluator; only the head weights, the mask token, the mask-list
attention and the generator's own position embeddings train.

Edit semantics: picking a candidate that is not in the list substitutes it at
the chosen slot (an edit-distance-1 move). When every candidate already sits
in the list (candidate pool size equals list size), substitution is
impossible, so picking a candidate from another slot exchanges the two items.
Lists therefore never contain duplicates. With a strictly larger pool,
in-list candidates at other slots are masked out and only distance-1 moves
remain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .checkpoint import load_arrays, save_arrays
from .evaluator import (
    EvaluatorParams,
    ModelDims,
    embed_lists,
    encode_sessions,
    flatten_items,
    list_attention,
    self_attention_pool,
)
from .params import ParamSet
from .rng import RngStream

_MASKED = -1e30


@dataclass
class GumbelConfig:
    """Sampling controls for both heads plus the stop rules."""

    tau: float = 1.0
    noise: bool = True
    theta_p: float | None = None     # defaults to 2/m
    theta_c: float | None = None     # defaults to 2/n
    max_steps: int | None = None     # defaults to 2m

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        for name in ("theta_p", "theta_c"):
            v = getattr(self, name)
            if v is not None and not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v}")

    def resolved(self, dims: ModelDims) -> "GumbelConfig":
        return GumbelConfig(
            tau=self.tau,
            noise=self.noise,
            theta_p=self.theta_p if self.theta_p is not None else 2.0 / dims.list_size,
            theta_c=self.theta_c if self.theta_c is not None else 2.0 / dims.num_candidates,
            max_steps=self.max_steps if self.max_steps is not None else 2 * dims.list_size,
        )


class GeneratorParams:
    """Generator-owned weights plus a reference to the frozen shared trunk."""

    def __init__(self, shared: EvaluatorParams, ps: ParamSet, reward_scale: float = 1.0):
        self.shared = shared
        self.dims = shared.dims
        self.ps = ps
        self.reward_scale = reward_scale

    @classmethod
    def init(cls, shared: EvaluatorParams, rng: RngStream, std: float = 0.01) -> "GeneratorParams":
        d = shared.dims.embed_dim
        fd = shared.dims.flat_dim
        ps = ParamSet()
        ps.add_normal("pdu.w", (fd + 3 * d, 1), rng, std)
        ps.add_zeros("pdu.b", (1,))
        ps.add_normal("mask.token", (shared.dims.num_fields, d), rng, std)
        for name in ("mask.q", "mask.k", "mask.v"):
            ps.add_normal(name, (fd, d), rng, std)
        ps.add_normal("cand.w", (fd + d, d), rng, std)
        ps.add_zeros("cand.b", (d,))
        ps.add_normal("cru.w", (4 * d, 1), rng, std)
        ps.add_zeros("cru.b", (1,))
        ps.add_normal("pos", (shared.dims.list_size, d), rng, std)
        return cls(shared, ps)

    def trainable(self) -> dict[str, Tensor]:
        return self.ps.trainable()

    def save(self, path):
        arrays = {"meta.dims": self.dims.to_meta(),
                  "meta.reward_scale": np.array(self.reward_scale)}
        arrays.update(self.ps.values())
        save_arrays(path, arrays)

    @classmethod
    def load(cls, path, shared: EvaluatorParams, trainable: bool = False) -> "GeneratorParams":
        arrays = load_arrays(path)
        dims = ModelDims.from_meta(arrays.pop("meta.dims"))
        if dims != shared.dims:
            raise ValueError(f"generator dims {dims} do not match shared evaluator dims {shared.dims}")
        scale = float(arrays.pop("meta.reward_scale"))
        out = cls.init(shared, RngStream(0))
        out.ps.load_values(arrays)
        out.ps.set_trainable(trainable)
        out.reward_scale = scale
        return out


def gumbel_sample(logits: Tensor, cfg: GumbelConfig,
                  rng: RngStream | None = None,
                  noise: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Gumbel-softmax over the last axis.

    Returns the soft distribution (gradients flow through it) and the hard
    argmax indices used by the forward pass; ties go to the lowest index.
    With noise disabled the soft distribution is the plain tempered softmax.
    """
    if not np.isfinite(logits.value).all():
        raise FloatingPointError("gumbel_sample: non-finite logits")
    z = logits
    if cfg.noise:
        if noise is None:
            if rng is None:
                raise ValueError("noise enabled but no rng or noise array given")
            noise = rng.gumbel(logits.shape)
        z = ad.add(z, ad.constant(noise))
    soft = ad.softmax_rows(ad.scale(z, 1.0 / cfg.tau))
    hard = np.argmax(soft.value, axis=-1)
    return soft, hard


def _tile(vec: Tensor, count: int) -> Tensor:
    b, d = vec.shape
    return ad.broadcast_to(ad.expand_dims(vec, 1), (b, count, d))


def _position_embedding(gp: GeneratorParams, batch: int) -> Tensor:
    m, d = gp.dims.list_size, gp.dims.embed_dim
    return ad.broadcast_to(ad.expand_dims(gp.ps["pos"], 0), (batch, m, d))


def position_logits(list_flat: Tensor, e_list: Tensor, e_user: Tensor,
                    gp: GeneratorParams) -> Tensor:
    """Replacement score per slot: (B, m) raw logits.

    list_flat is (B, m, F*D) flattened item embeddings of the current list.
    """
    b, m = list_flat.shape[0], list_flat.shape[1]
    z = ad.concat([list_flat, _tile(e_list, m), _tile(e_user, m),
                   _position_embedding(gp, b)], axis=-1)
    return ad.reshape(ad.affine(z, gp.ps["pdu.w"], gp.ps["pdu.b"]), (b, m))


def masked_list_encoding(list_flat: Tensor, position: int, gp: GeneratorParams) -> Tensor:
    """Encode the list with one slot blanked by the learned mask token, (B, D)."""
    b, m, fd = list_flat.shape
    if not (0 <= position < m):
        raise ValueError(f"position {position} outside list of length {m}")
    token = ad.broadcast_to(ad.reshape(gp.ps["mask.token"], (1, 1, fd)), (b, 1, fd))
    rows = []
    if position > 0:
        rows.append(ad.slice_axis(list_flat, 1, 0, position))
    rows.append(token)
    if position < m - 1:
        rows.append(ad.slice_axis(list_flat, 1, position + 1, m))
    masked = ad.concat(rows, axis=1)
    return self_attention_pool(masked, gp.ps["mask.q"], gp.ps["mask.k"], gp.ps["mask.v"])


def candidate_logits(cand_flat: Tensor, e_mask: Tensor, e_user: Tensor,
                     position: int, gp: GeneratorParams,
                     blocked: np.ndarray | None = None) -> Tensor:
    """Score every candidate for one slot: (B, n) raw logits.

    cand_flat is (B, n, F*D). `blocked` marks candidates that may not be
    chosen (already placed at another slot when substitution moves exist);
    their logits are pushed to -1e30.
    """
    b, n = cand_flat.shape[0], cand_flat.shape[1]
    d = gp.dims.embed_dim
    pe_row = ad.slice_axis(gp.ps["pos"], 0, position, position + 1)      # (1, D)
    pe = ad.broadcast_to(ad.expand_dims(pe_row, 0), (b, n, d))
    cand_repr = ad.relu(ad.affine(ad.concat([cand_flat, pe], axis=-1),
                                  gp.ps["cand.w"], gp.ps["cand.b"]))
    z = ad.concat([cand_repr, _tile(e_mask, n), _tile(e_user, n), pe], axis=-1)
    logits = ad.reshape(ad.affine(z, gp.ps["cru.w"], gp.ps["cru.b"]), (b, n))
    if blocked is not None and blocked.any():
        logits = ad.add(logits, ad.constant(np.where(blocked, _MASKED, 0.0)))
    return logits


def blocked_candidates(list_idx: np.ndarray, position, num_candidates: int) -> np.ndarray | None:
    """Mask of candidates already placed at other slots, or None in swap mode.

    With an all-in-list pool (n == m) nothing is blocked: choosing an item
    from another slot performs an exchange instead of creating a duplicate.
    """
    list_idx = np.atleast_2d(np.asarray(list_idx))
    b, m = list_idx.shape
    if num_candidates <= m:
        return None
    blocked = np.zeros((b, num_candidates), dtype=bool)
    rows = np.repeat(np.arange(b), m)
    blocked[rows, list_idx.ravel()] = True
    pos = np.broadcast_to(np.asarray(position), (b,))
    blocked[np.arange(b), list_idx[np.arange(b), pos]] = False
    return blocked


def apply_move(list_idx: tuple[int, ...], position: int, candidate: int) -> tuple[int, ...]:
    """One edit: substitute an unused candidate, or exchange with its slot."""
    out = list(list_idx)
    if candidate in out:
        other = out.index(candidate)
        out[other] = out[position]
    out[position] = candidate
    return tuple(out)


@dataclass
class TraceStep:
    step: int
    position: int
    candidate: int | None
    max_position_prob: float
    max_candidate_prob: float | None
    applied: bool
    stop: str | None

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "position": self.position,
            "candidate": self.candidate,
            "max_rp": self.max_position_prob,
            "max_rc": self.max_candidate_prob,
            "applied": self.applied,
            "stop": self.stop,
        }


@dataclass
class GenerationTrace:
    steps: list[TraceStep] = field(default_factory=list)

    @property
    def stop_reason(self) -> str | None:
        return self.steps[-1].stop if self.steps else None

    def to_json(self) -> list[dict]:
        return [s.to_json() for s in self.steps]


def generate(initial_idx, candidate_ids: np.ndarray, session_ids: np.ndarray,
             gp: GeneratorParams, cfg: GumbelConfig,
             rng: RngStream | None = None,
             e_user: np.ndarray | None = None) -> tuple[tuple[int, ...], GenerationTrace]:
    """Iteratively edit a list until a stop rule fires.

    initial_idx: candidate indices of the starting list (length m, no
    duplicates). candidate_ids: (n, F) feature ids of the pool. Returns the
    final index list and the per-step trace. With noise disabled this is a
    pure function of its inputs.
    """
    dims = gp.dims
    cfg = cfg.resolved(dims)
    cur = tuple(int(i) for i in initial_idx)
    if len(set(cur)) != len(cur):
        raise ValueError(f"initial list has duplicates: {cur}")
    n = candidate_ids.shape[0]
    trace = GenerationTrace()
    with no_grad():
        if e_user is None:
            e_user = encode_sessions(session_ids[None, ...], gp.shared).value
        e_user_t = ad.constant(e_user.reshape(1, dims.embed_dim))
        cand_flat = flatten_items(candidate_ids[None, ...], gp.shared)

        for step in range(cfg.max_steps):
            ids = candidate_ids[list(cur)][None, ...]
            x = embed_lists(ids, gp.shared)
            _, e_list = list_attention(x, gp.shared)
            flat = ad.reshape(x, (1, dims.list_size, dims.flat_dim))
            h = position_logits(flat, e_list, e_user_t, gp)
            soft_p, hard_p = gumbel_sample(h, cfg, rng=rng)
            j = int(hard_p[0])
            p_max = float(soft_p.value[0].max())
            if p_max < cfg.theta_p:
                trace.steps.append(TraceStep(step, j, None, p_max, None, False, "low-confidence"))
                break

            e_mask = masked_list_encoding(flat, j, gp)
            blocked = blocked_candidates(np.array([cur]), j, n)
            g = candidate_logits(cand_flat, e_mask, e_user_t, j, gp, blocked)
            soft_c, hard_c = gumbel_sample(g, cfg, rng=rng)
            k = int(hard_c[0])
            c_max = float(soft_c.value[0].max())
            if c_max < cfg.theta_c:
                trace.steps.append(TraceStep(step, j, k, p_max, c_max, False, "low-confidence"))
                break
            if k == cur[j]:
                trace.steps.append(TraceStep(step, j, k, p_max, c_max, False, "same-item"))
                break

            cur = apply_move(cur, j, k)
            stop = "max-steps" if step == cfg.max_steps - 1 else None
            trace.steps.append(TraceStep(step, j, k, p_max, c_max, True, stop))
    return cur, trace
