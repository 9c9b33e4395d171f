"""Deterministic moving-shapes videos with referring expressions.

Each scene holds 2-4 coloured shapes translating at constant velocity. The
expression names exactly one of them, by colour and shape ("easy") or by
colour, shape and dominant motion direction ("hard").
"""

from __future__ import annotations

import hashlib
import json
import shutil
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
DIRECTIONS = ("left", "right", "up", "down")
BACKGROUND = 0.0

FRAMES_MAGIC = 0x52465850  # b"PXFR" little-endian
MASKS_MAGIC = 0x4B4D5850  # b"PXMK" little-endian


class GenerationError(RuntimeError):
    pass


@dataclass
class SceneObject:
    shape: str
    color: str
    size: int
    start: tuple[float, float]  # (x, y) pixel centre at frame 0
    velocity: tuple[float, float]  # pixels per frame

    @property
    def direction(self) -> str:
        vx, vy = self.velocity
        if abs(vx) >= abs(vy):
            return "right" if vx > 0 else "left"
        return "down" if vy > 0 else "up"

    def center(self, t: int) -> tuple[float, float]:
        return self.start[0] + t * self.velocity[0], self.start[1] + t * self.velocity[1]


@dataclass
class SceneSpec:
    seed: int
    difficulty: str
    objects: list[SceneObject]
    referred_index: int
    expression: str
    num_frames: int = 8
    height: int = 64
    width: int = 64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        objs = [SceneObject(o["shape"], o["color"], int(o["size"]), tuple(o["start"]), tuple(o["velocity"]))
                for o in d["objects"]]
        return cls(int(d["seed"]), d["difficulty"], objs, int(d["referred_index"]), d["expression"],
                   int(d.get("num_frames", 8)), int(d.get("height", 64)), int(d.get("width", 64)))


@dataclass
class GroundTruth:
    masks: np.ndarray  # [T, H0, W0] in {0, 1}
    boxes: np.ndarray  # [T, 4] normalised (cx, cy, w, h); zeros where invalid
    valid: np.ndarray  # [T] bool


@dataclass
class Sample:
    frames: np.ndarray  # [T, H0, W0, 3] in [0, 1]
    token_ids: list[int]
    gt: GroundTruth
    scene: SceneSpec = field(repr=False)


def matches(obj: SceneObject, words: list[str]) -> bool:
    """Whether ``obj`` satisfies every attribute/motion predicate in ``words``."""
    for w in words:
        if w in COLORS and obj.color != w:
            return False
        if w in SHAPES and obj.shape != w:
            return False
        if w in DIRECTIONS and obj.direction != w:
            return False
    return True


def resolve(scene: SceneSpec) -> list[int]:
    """Indices of all objects the expression could denote."""
    words = scene.expression.split()
    return [i for i, o in enumerate(scene.objects) if matches(o, words)]


def _sample_object(rng: np.random.Generator, shape: str, color: str, direction: str,
                   num_frames: int, height: int, width: int) -> SceneObject:
    size = int(rng.integers(6, 11))
    speed = float(rng.uniform(1.0, 2.5))
    drift = float(rng.uniform(-0.4, 0.4))
    vx, vy = {"left": (-speed, drift), "right": (speed, drift),
              "up": (drift, -speed), "down": (drift, speed)}[direction]
    # keep the centre at least half a radius inside the canvas over the clip
    margin = size / 2.0
    span_x = vx * (num_frames - 1)
    span_y = vy * (num_frames - 1)
    lo_x, hi_x = margin - min(0.0, span_x), width - 1 - margin - max(0.0, span_x)
    lo_y, hi_y = margin - min(0.0, span_y), height - 1 - margin - max(0.0, span_y)
    if lo_x > hi_x or lo_y > hi_y:
        raise GenerationError("trajectory does not fit the canvas")
    x0 = round(float(rng.uniform(lo_x, hi_x)), 2)
    y0 = round(float(rng.uniform(lo_y, hi_y)), 2)
    return SceneObject(shape, color, size, (x0, y0), (round(vx, 3), round(vy, 3)))


def generate_scene(seed: int, difficulty: str = "easy", num_frames: int = 8,
                   height: int = 64, width: int = 64) -> SceneSpec:
    """Build a scene whose expression resolves to exactly one object."""
    if difficulty not in ("easy", "hard"):
        raise ValueError(f"difficulty must be 'easy' or 'hard', got {difficulty!r}")
    rng = np.random.default_rng([seed, 0 if difficulty == "easy" else 1])
    colors = list(COLORS)
    n_obj = int(rng.integers(2, 5))
    target = (SHAPES[rng.integers(3)], colors[rng.integers(4)], DIRECTIONS[rng.integers(4)])
    specs = [target]
    if difficulty == "hard":
        twin_dir = [d for d in DIRECTIONS if d != target[2]][rng.integers(3)]
        specs.append((target[0], target[1], twin_dir))
    while len(specs) < n_obj:
        cand = (SHAPES[rng.integers(3)], colors[rng.integers(4)], DIRECTIONS[rng.integers(4)])
        if difficulty == "easy" and cand[:2] == target[:2]:
            continue
        if difficulty == "hard" and cand == target:
            continue
        specs.append(cand)
    objects = [_sample_object(rng, s, c, d, num_frames, height, width) for s, c, d in specs]
    order = rng.permutation(len(objects))
    objects = [objects[i] for i in order]
    referred = int(np.flatnonzero(order == 0)[0])
    ref = objects[referred]
    expression = f"the {ref.color} {ref.shape}"
    if difficulty == "hard":
        expression += f" moving {ref.direction}"
    scene = SceneSpec(seed, difficulty, objects, referred, expression, num_frames, height, width)
    if resolve(scene) != [referred]:
        raise GenerationError(f"seed {seed}: expression {expression!r} is ambiguous")
    return scene


def rasterize(obj: SceneObject, t: int, height: int, width: int) -> np.ndarray:
    """Hard-edged silhouette of ``obj`` at frame ``t`` as a bool [H, W] array."""
    cx, cy = obj.center(t)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    r = obj.size
    if obj.shape == "circle":
        return dx * dx + dy * dy <= r * r
    if obj.shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    # upward isosceles triangle: apex at (cx, cy - r), base y = cy + r, half-width r
    inside_y = (dy >= -r) & (dy <= r)
    half = (dy + r) / 2.0
    return inside_y & (np.abs(dx) <= half)


def mask_box(mask: np.ndarray) -> tuple[np.ndarray, bool]:
    """Tight normalised (cx, cy, w, h) box of a binary mask."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return np.zeros(4), False
    h, w = mask.shape
    x0, x1 = xs.min() / w, (xs.max() + 1) / w
    y0, y1 = ys.min() / h, (ys.max() + 1) / h
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0]), True


def render(scene: SceneSpec, num_frames: int | None = None, height: int | None = None,
           width: int | None = None, vocab=None) -> Sample:
    """Paint objects in list order (later on top) and derive the referred ground truth."""
    from .backbone import default_vocabulary, tokenize

    T = scene.num_frames if num_frames is None else num_frames
    H = scene.height if height is None else height
    W = scene.width if width is None else width
    if T < 1:
        raise ValueError("need at least one frame")
    if H < 32 or W < 32:
        raise ValueError("canvas must be at least 32x32")
    frames = np.full((T, H, W, 3), BACKGROUND, dtype=np.float32)
    masks = np.zeros((T, H, W), dtype=np.uint8)
    boxes = np.zeros((T, 4))
    valid = np.zeros(T, dtype=bool)
    for t in range(T):
        owner = np.full((H, W), -1)
        for i, obj in enumerate(scene.objects):
            cx, cy = obj.center(t)
            if not (0 <= cx <= W - 1 and 0 <= cy <= H - 1):
                raise GenerationError(f"object {i} centre left the frame at t={t}")
            sil = rasterize(obj, t, H, W)
            frames[t][sil] = COLORS[obj.color]
            owner[sil] = i
        masks[t] = owner == scene.referred_index
        boxes[t], valid[t] = mask_box(masks[t])
    vocab = vocab or default_vocabulary()
    return Sample(frames.astype(np.float64), tokenize(scene.expression, vocab),
                  GroundTruth(masks, boxes, valid), scene)


# on-disk format -------------------------------------------------------------

def write_array(path: Path, array: np.ndarray, magic: int, dtype) -> None:
    """Header of five little-endian int32 (magic, T, H0, W0, channels) then row-major payload."""
    arr = np.asarray(array)
    if arr.ndim == 3:
        arr = arr[..., None]
    t, h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<5i", magic, t, h, w, c))
        fh.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


def read_array(path: Path, magic: int, dtype) -> np.ndarray:
    raw = Path(path).read_bytes()
    got, t, h, w, c = struct.unpack("<5i", raw[:20])
    if got != magic:
        raise ValueError(f"{path}: bad magic {got:#x}, expected {magic:#x}")
    return np.frombuffer(raw[20:], dtype=np.dtype(dtype).newbyteorder("<")).reshape(t, h, w, c)


def write_frames(path, frames: np.ndarray) -> None:
    write_array(Path(path), frames, FRAMES_MAGIC, np.float32)


def read_frames(path) -> np.ndarray:
    return read_array(path, FRAMES_MAGIC, np.float32).astype(np.float64)


def write_masks(path, masks: np.ndarray) -> None:
    write_array(Path(path), masks, MASKS_MAGIC, np.uint8)


def read_masks(path) -> np.ndarray:
    return read_array(path, MASKS_MAGIC, np.uint8)[..., 0]


@dataclass
class DataConfig:
    path: str = "data"
    canvas: int = 64
    num_frames: int = 8
    train_count: int = 200
    val_count: int = 50
    hard_fraction: float = 0.0
    seed: int = 0


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def split_seeds(cfg: DataConfig) -> dict[str, list[int]]:
    base = cfg.seed * 10_000_000
    return {
        "train": [base + i for i in range(cfg.train_count)],
        "val": [base + 5_000_000 + i for i in range(cfg.val_count)],
    }


def _difficulty(cfg: DataConfig, split: str, i: int) -> str:
    # deterministic interleave so that every prefix has roughly the right mix
    n = cfg.train_count if split == "train" else cfg.val_count
    k_hard = round(cfg.hard_fraction * n)
    return "hard" if (i * k_hard) // max(n, 1) != ((i + 1) * k_hard) // max(n, 1) else "easy"


def sample_meta(sample: Sample, sample_id: str, split: str) -> dict:
    return {
        "id": sample_id,
        "split": split,
        "scene": sample.scene.to_dict(),
        "tokens": [int(t) for t in sample.token_ids],
        "boxes": [[float(v) for v in b] for b in sample.gt.boxes],
        "valid": [bool(v) for v in sample.gt.valid],
    }


def build_dataset(cfg: DataConfig, overwrite: bool = False) -> dict:
    """Write every sample plus ``index.json``; returns the index."""
    root = Path(cfg.path)
    if root.exists() and any(root.iterdir()):
        if not overwrite:
            raise FileExistsError(f"{root} exists and is not empty (use overwrite)")
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)
    seeds = split_seeds(cfg)
    entries = []
    for split, split_list in seeds.items():
        for i, seed in enumerate(split_list):
            diff = _difficulty(cfg, split, i)
            scene = generate_scene(seed, diff, cfg.num_frames, cfg.canvas, cfg.canvas)
            sample = render(scene)
            sid = f"{split}_{i:05d}"
            d = root / sid
            d.mkdir()
            write_frames(d / "frames.bin", sample.frames)
            write_masks(d / "masks.bin", sample.gt.masks)
            (d / "meta.json").write_text(json.dumps(sample_meta(sample, sid, split), indent=1))
            entries.append({"id": sid, "split": split, "seed": seed, "difficulty": diff})
    index = {"config": asdict(cfg), "config_hash": config_hash(asdict(cfg)), "samples": entries}
    (root / "index.json").write_text(json.dumps(index, indent=1))
    return index


def load_sample(sample_dir) -> Sample:
    d = Path(sample_dir)
    meta = json.loads((d / "meta.json").read_text())
    frames = read_frames(d / "frames.bin")
    masks = read_masks(d / "masks.bin")
    gt = GroundTruth(masks, np.array(meta["boxes"], dtype=np.float64), np.array(meta["valid"], dtype=bool))
    return Sample(frames, list(meta["tokens"]), gt, SceneSpec.from_dict(meta["scene"]))


def load_split(root, split: str) -> list[Sample]:
    root = Path(root)
    index_path = root / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"no dataset index at {index_path}")
    index = json.loads(index_path.read_text())
    return [load_sample(root / e["id"]) for e in index["samples"] if e["split"] == split]


def dataset_checksum(root) -> str:
    """sha256 over every file in the dataset, in sorted path order."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
