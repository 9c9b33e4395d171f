"""Objective, optimiser, checkpoints and the training loop."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .backbone import default_vocabulary, pad_tokens
from .config import RunConfig
from .heads import jsc_embed
from .losses import LossWeights, focal_terms, jsc_loss, select_positive, trajectory_terms
from .metrics import EvalReport, evaluate
from .model import ModelConfig, ProxyFormerNet
from .numerics import Parameter, Tensor, backward, no_grad, ops
from .synthdata import GroundTruth, Sample

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PXCK"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


# objective ---------------------------------------------------------------------

@dataclass
class Objective:
    total: Tensor
    terms: dict[str, float]
    positives: list[int]


def classification_loss(class_probs: Tensor, positive: int, valid: np.ndarray, w: LossWeights) -> Tensor:
    """Focal loss over every query: the positive targets visibility, the rest target 0.

    Summed over queries, averaged over frames.
    """
    t, n = class_probs.shape
    target = np.zeros((t, n))
    target[:, positive] = valid.astype(np.float64)
    per = focal_terms(class_probs, target)
    return ops.mul(ops.mean(ops.sum(per, axis=1)), w.cls)


def compute_objective(out, gts: list[GroundTruth], w: LossWeights, jsc_normalize: bool = False,
                      joint_head=None, cls_negatives: bool = True) -> Objective:
    """Matched set loss per video, averaged over the batch, plus the weighted JSC term."""
    preds = out.predictions
    probs = ops.sigmoid(preds.class_logits)  # [B, T, N]
    b = probs.shape[0]
    totals: list[Tensor] = []
    terms: dict[str, float] = {}
    positives = []
    for i, gt in enumerate(gts):
        match = select_positive(preds.mask_logits.data[i], probs.data[i], preds.boxes.data[i], gt, w)
        k = match.positive_index
        positives.append(k)
        parts = trajectory_terms(ops.index(preds.mask_logits, (i, slice(None), k)),
                                 ops.index(probs, (i, slice(None), k)),
                                 ops.index(preds.boxes, (i, slice(None), k)), gt, w)
        if cls_negatives:
            parts["cls"] = classification_loss(ops.index(probs, i), k, np.asarray(gt.valid), w)
        for name, v in parts.items():
            terms[name] = terms.get(name, 0.0) + v.item() / b
        video_total = parts["cls"]
        for name in ("l1", "giou", "dice", "focal"):
            if name in parts:
                video_total = ops.add(video_total, parts[name])
        totals.append(video_total)
    total = ops.mul(ops.sum(ops.stack(totals)), 1.0 / b)
    if w.jsc > 0 and joint_head is not None:
        emb = jsc_embed(out.queries, out.video, out.text, positives, joint_head)
        lj = jsc_loss(emb.positive_query, emb.joint, normalize=jsc_normalize)
        terms["jsc"] = w.jsc * lj.item()
        total = ops.add(total, ops.mul(lj, w.jsc))
    terms["total"] = total.item()
    return Objective(total, terms, positives)


def batch_arrays(samples: list[Sample], window: int | None = None,
                 starts: list[int] | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[GroundTruth]]:
    frames, gts = [], []
    for j, s in enumerate(samples):
        t = s.frames.shape[0]
        w = t if window is None else min(window, t)
        a = 0 if starts is None else starts[j]
        frames.append(s.frames[a:a + w])
        gts.append(GroundTruth(s.gt.masks[a:a + w], s.gt.boxes[a:a + w], s.gt.valid[a:a + w]))
    ids, mask = pad_tokens([s.token_ids for s in samples])
    return np.stack(frames), ids, mask, gts


_SWAPS = {"hflip": {"left": "right", "right": "left"},
          "reverse": {"left": "right", "right": "left", "up": "down", "down": "up"},
          "rg": {"red": "green", "green": "red"}}


def _token_map(swap: dict[str, str]) -> dict[int, int]:
    vocab = default_vocabulary()
    return {vocab[a]: vocab[b] for a, b in swap.items()}


def augment(frames: np.ndarray, tokens: list[int], gt: GroundTruth, hflip: bool, reverse: bool,
            rg: bool) -> tuple[np.ndarray, list[int], GroundTruth]:
    """Label-preserving transforms of one clip; the expression is rewritten to stay true.

    Mirroring swaps left/right, playing backwards inverts every direction and
    exchanging the red and green channels exchanges those colour words.
    """
    masks, boxes, valid = gt.masks, gt.boxes.copy(), gt.valid
    for flag, name in ((hflip, "hflip"), (reverse, "reverse"), (rg, "rg")):
        if not flag:
            continue
        mapping = _token_map(_SWAPS[name])
        tokens = [mapping.get(t, t) for t in tokens]
        if name == "hflip":
            frames, masks = frames[:, :, ::-1], masks[:, :, ::-1]
            boxes[:, 0] = np.where(valid, 1.0 - boxes[:, 0], 0.0)
        elif name == "reverse":
            frames, masks, boxes, valid = frames[::-1], masks[::-1], boxes[::-1], valid[::-1]
        else:
            frames = frames[..., [1, 0, 2]]
    return (np.ascontiguousarray(frames), tokens,
            GroundTruth(np.ascontiguousarray(masks), np.ascontiguousarray(boxes), np.ascontiguousarray(valid)))


def loss_on_batch(net: ProxyFormerNet, samples: list[Sample], w: LossWeights,
                  jsc_normalize: bool = False) -> Objective:
    frames, ids, mask, gts = batch_arrays(samples)
    out = net(frames, ids, mask)
    return compute_objective(out, gts, w, jsc_normalize, net.joint)


# optimiser -----------------------------------------------------------------------

class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    norm = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad = p.grad * scale
    return norm


# checkpoints ---------------------------------------------------------------------

def save_checkpoint(path, net: ProxyFormerNet, cfg: RunConfig, step: int) -> None:
    """Layout (little-endian): b"PXCK", u32 version, u32 header length, UTF-8 JSON header,
    u32 record count, then per record: u32 name length, name, u32 ndim, u32 dims, f64 payload."""
    header = json.dumps({"config": cfg.to_dict(), "config_hash": cfg.hash(),
                         "model_hash": cfg.model_hash(), "step": step}, sort_keys=True).encode()
    records = list(net.named_parameters())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(records)))
        for name, p in records:
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    header: dict
    state: dict[str, np.ndarray]

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.header["config"]["model"])

    @property
    def model_hash(self) -> str:
        return self.header["model_hash"]

    def build(self) -> ProxyFormerNet:
        net = ProxyFormerNet(self.model_config)
        net.load_state_dict(self.state)
        return net


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    header = json.loads(raw[off:off + hlen].decode())
    off += hlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
    return Checkpoint(header, state)


# inference -----------------------------------------------------------------------

@dataclass
class InferenceOutput:
    query_index: int
    masks: np.ndarray  # [T, H0, W0] uint8
    boxes: np.ndarray  # [T, 4]
    scores: np.ndarray  # [T] class probability of the selected query
    query_scores: np.ndarray  # [N] mean class probability per query


def predict(net: ProxyFormerNet, frames_list: list[np.ndarray], token_lists: list[list[int]],
            batch_size: int = 8) -> list[InferenceOutput]:
    """Pick, per video, the query with the highest mean class probability; threshold masks at 0.5."""
    outs: list[InferenceOutput] = []
    with no_grad():
        for lo in range(0, len(frames_list), batch_size):
            fr = np.stack(frames_list[lo:lo + batch_size])
            ids, mask = pad_tokens(token_lists[lo:lo + batch_size])
            res = net(fr, ids, mask).predictions
            probs = res.class_probs
            for i in range(fr.shape[0]):
                qs = probs[i].mean(axis=0)
                k = int(np.argmax(qs))
                outs.append(InferenceOutput(k, (res.mask_logits.data[i, :, k] > 0).astype(np.uint8),
                                            res.boxes.data[i, :, k].copy(), probs[i, :, k].copy(), qs))
    return outs


def evaluate_samples(net: ProxyFormerNet, samples: list[Sample], batch_size: int = 8,
                     thresholds=(0.5, 0.6, 0.7, 0.8, 0.9)) -> EvalReport:
    preds = predict(net, [s.frames for s in samples], [s.token_ids for s in samples], batch_size)
    return evaluate([p.masks for p in preds], [s.gt.masks for s in samples], thresholds=thresholds)


# loop ------------------------------------------------------------------------------

@dataclass
class TrainResult:
    net: ProxyFormerNet
    checkpoints: list[Path] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    metric_log: Path | None = None


def lr_at(cfg: RunConfig, step: int) -> float:
    t = cfg.train
    return t.lr * (t.lr_decay if step > t.lr_decay_at * t.steps else 1.0)


def train(cfg: RunConfig, train_samples: list[Sample], val_samples: list[Sample] | None = None,
          out_dir=None, on_record: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam on the total objective with one step decay; deterministic given the config."""
    if not train_samples:
        raise ValueError("training set is empty")
    tc = cfg.train
    net = ProxyFormerNet(cfg.model, seed=tc.seed)
    params = net.parameters()
    opt = Adam(params, lr=tc.lr)
    rng = np.random.default_rng([tc.seed, 1])
    out = Path(out_dir) if out_dir is not None else None
    result = TrainResult(net)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        result.metric_log = out / "metrics.jsonl"
        result.metric_log.write_text("")
        ck = out / "step_000000.ckpt"
        save_checkpoint(ck, net, cfg, 0)
        result.checkpoints.append(ck)

    n = len(train_samples)
    bsz = min(tc.batch_size, n)
    steps_per_epoch = max(1, n // bsz)
    eval_every = tc.eval_every or steps_per_epoch
    order: list[int] = []
    running: dict[str, float] = {}
    seen = 0
    for step in range(1, tc.steps + 1):
        if len(order) < bsz:
            order = [int(i) for i in rng.permutation(n)]
        idx, order = order[:bsz], order[bsz:]
        batch = [train_samples[i] for i in idx]
        starts = [int(rng.integers(0, s.frames.shape[0] - min(tc.window, s.frames.shape[0]) + 1)) for s in batch]
        if tc.augment:
            batch = [Sample(*augment(s.frames, s.token_ids, s.gt, *(rng.random(3) < 0.5)), s.scene)
                     for s in batch]
        frames, ids, mask, gts = batch_arrays(batch, tc.window, starts)
        res = net(frames, ids, mask)
        obj = compute_objective(res, gts, cfg.loss, tc.jsc_normalize, net.joint, tc.cls_negatives)
        bad = [k for k, v in obj.terms.items() if not math.isfinite(v)]
        if bad:
            raise TrainingError(f"non-finite loss at step {step}: terms {bad} = "
                                f"{[obj.terms[k] for k in bad]}")
        net.zero_grad()
        backward(obj.total, params)
        clip_grad_norm(params, tc.grad_clip)
        opt.step(lr_at(cfg, step))
        for k, v in obj.terms.items():
            running[k] = running.get(k, 0.0) + v
        seen += 1

        if step % eval_every == 0 or step == tc.steps:
            record = {"step": step, "epoch": step / steps_per_epoch, "lr": lr_at(cfg, step),
                      "train": {k: v / seen for k, v in sorted(running.items())}}
            running, seen = {}, 0
            if val_samples:
                rep = evaluate_samples(net, val_samples, cfg.eval.batch_size, cfg.eval.thresholds)
                record.update(J=rep.J, F=rep.F, JandF=rep.JandF)
            record["config_hash"] = cfg.hash()
            result.history.append(record)
            if result.metric_log is not None:
                with open(result.metric_log, "a") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
            if on_record:
                on_record(record)
        if out is not None and (step % tc.checkpoint_every == 0 or step == tc.steps):
            ck = out / f"step_{step:06d}.ckpt"
            save_checkpoint(ck, net, cfg, step)
            result.checkpoints.append(ck)
    if out is not None:
        final = out / "final.ckpt"
        save_checkpoint(final, net, cfg, tc.steps)
        result.checkpoints.append(final)
    return result
