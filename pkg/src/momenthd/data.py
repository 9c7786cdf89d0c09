"""Dataset formats, loading, batching, and the synthetic dataset generator.

File formats (the on-disk contract):

- Annotations: JSONL, one record per line with fields ``qid``, ``vid``,
  ``query``, ``duration`` (seconds), ``relevant_windows`` (list of
  ``[start_sec, end_sec]``), ``saliency_ratings`` (one integer per clip).
  Optional ``clip_len`` defaults to 2.0 s. Moments are normalized by the
  duration on load.

- Features: "FPK1" binary tensors -- magic bytes ``FPK1``, then
  little-endian: u8 dtype code (0 = float32, 1 = float64), u8 ndim,
  u32 dims[ndim], raw row-major payload. Round trips are byte-exact.

- Predictions: JSONL records ``{qid, spans: [[start_sec, end_sec, score]...],
  saliency: [float...]}``.

The synthetic generator is fully determined by its seed through numpy's
PCG64 generator, so a spec reproduces the same dataset byte-for-byte on any
platform. Saliency labels are emitted directly as binary ratings (0 outside
moments, RATING_POSITIVE inside); the real corpus's three-annotator rating
averaging is upstream of this format and not modeled.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError

DEFAULT_CLIP_LEN = 2.0
RATING_POSITIVE = 4  # "very good" level; binarization threshold default
_DTYPE_CODES = {0: np.float32, 1: np.float64}
_CODES_BY_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class GroundTruth:
    moments: np.ndarray  # (L_n, 2) normalized, start <= end
    saliency_labels: np.ndarray  # (L_v,) binary
    saliency_ratings: Optional[np.ndarray] = None  # (L_v,) ints


@dataclass
class AnnotatedSample:
    qid: str
    video_id: str
    duration_sec: float
    clip_len_sec: float
    query: str
    gt: GroundTruth
    video_features: Optional[np.ndarray] = None  # (L_v, d_v)
    text_features: Optional[np.ndarray] = None  # (L_t, d_t)

    @property
    def num_clips(self) -> int:
        return int(np.ceil(self.duration_sec / self.clip_len_sec))


# ---------------------------------------------------------------------------
# FPK1 tensors
# ---------------------------------------------------------------------------


def write_tensor(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    if array.dtype not in _CODES_BY_DTYPE:
        array = array.astype(np.float32)
    code = _CODES_BY_DTYPE[array.dtype]
    with open(path, "wb") as fh:
        fh.write(b"FPK1")
        fh.write(struct.pack("<BB", code, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def read_tensor(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    return tensor_from_bytes(blob, what=str(path))


def tensor_to_bytes(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array)
    if array.dtype not in _CODES_BY_DTYPE:
        array = array.astype(np.float32)
    code = _CODES_BY_DTYPE[array.dtype]
    header = b"FPK1" + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + array.tobytes()


def tensor_from_bytes(blob: bytes, what: str = "<bytes>") -> np.ndarray:
    if blob[:4] != b"FPK1":
        raise DataError(f"{what}: bad magic {blob[:4]!r}, expected FPK1")
    if len(blob) < 6:
        raise DataError(f"{what}: truncated header")
    code, ndim = struct.unpack_from("<BB", blob, 4)
    if code not in _DTYPE_CODES:
        raise DataError(f"{what}: unknown dtype code {code}")
    offset = 6
    if len(blob) < offset + 4 * ndim:
        raise DataError(f"{what}: truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}I", blob, offset)
    offset += 4 * ndim
    dtype = np.dtype(_DTYPE_CODES[code])
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = blob[offset:]
    if len(payload) != expected:
        raise DataError(f"{what}: truncated payload, expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("qid", "vid", "query", "duration", "relevant_windows", "saliency_ratings")


def load_annotations(path, rating_threshold: int = RATING_POSITIVE) -> list[AnnotatedSample]:
    """Parse and validate annotation stubs (features not attached)."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: invalid JSON: {err}") from err
            samples.append(_parse_record(record, f"{path}:{lineno}", rating_threshold))
    return samples


def _parse_record(record: dict, where: str, rating_threshold: int) -> AnnotatedSample:
    for key in _REQUIRED_FIELDS:
        if key not in record:
            raise DataError(f"{where}: missing field '{key}'")
    duration = float(record["duration"])
    clip_len = float(record.get("clip_len", DEFAULT_CLIP_LEN))
    if duration <= 0 or clip_len <= 0:
        raise DataError(f"{where}: non-positive duration or clip_len")
    num_clips = int(np.ceil(duration / clip_len))

    windows = record["relevant_windows"]
    if not windows:
        raise DataError(f"{where}: empty relevant_windows")
    moments = []
    for win in windows:
        start, end = float(win[0]), float(win[1])
        if start < 0 or end > duration or start > end:
            raise DataError(f"{where}: window [{start}, {end}] outside [0, {duration}]")
        moments.append((start / duration, end / duration))

    ratings = np.asarray(record["saliency_ratings"], dtype=int)
    if ratings.shape != (num_clips,):
        raise DataError(
            f"{where}: saliency_ratings length {ratings.size} != clip count {num_clips}"
        )
    labels = (ratings >= rating_threshold).astype(int)

    return AnnotatedSample(
        qid=str(record["qid"]),
        video_id=str(record["vid"]),
        duration_sec=duration,
        clip_len_sec=clip_len,
        query=str(record["query"]),
        gt=GroundTruth(
            moments=np.asarray(moments, dtype=np.float64),
            saliency_labels=labels,
            saliency_ratings=ratings,
        ),
    )


def save_annotations(samples: list[AnnotatedSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            record = {
                "qid": s.qid,
                "vid": s.video_id,
                "query": s.query,
                "duration": s.duration_sec,
                "clip_len": s.clip_len_sec,
                "relevant_windows": [
                    [float(m[0] * s.duration_sec), float(m[1] * s.duration_sec)]
                    for m in s.gt.moments
                ],
                "saliency_ratings": (
                    s.gt.saliency_ratings if s.gt.saliency_ratings is not None
                    else s.gt.saliency_labels * RATING_POSITIVE
                ),
            }
            record["saliency_ratings"] = [int(r) for r in record["saliency_ratings"]]
            fh.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    n_samples: int = 64
    num_clips: int = 32  # L_v
    num_words: int = 8  # L_t
    d_video: int = 64
    d_text: int = 64
    max_moments: int = 2
    noise_std: float = 0.1
    seed: int = 0
    clip_len_sec: float = DEFAULT_CLIP_LEN

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)


def _place_moments(rng: np.random.Generator, num_clips: int, max_moments: int) -> list[tuple[int, int]]:
    """Disjoint clip-aligned [start_clip, end_clip) intervals, >=1 clip gap."""
    n = int(rng.integers(1, max_moments + 1))
    max_len = max(1, num_clips // (2 * max_moments))
    for _ in range(100):
        chosen: list[tuple[int, int]] = []
        for _ in range(n):
            length = int(rng.integers(1, max_len + 1))
            start = int(rng.integers(0, num_clips - length + 1))
            chosen.append((start, start + length))
        chosen.sort()
        if all(chosen[i][1] + 1 <= chosen[i + 1][0] for i in range(len(chosen) - 1)):
            return chosen
    raise DataError(
        f"could not place {n} disjoint moments in {num_clips} clips after 100 attempts"
    )


def generate_synthetic(spec: SyntheticSpec) -> list[AnnotatedSample]:
    """Deterministic synthetic corpus.

    Per sample: a query code vector q drives both the text tokens (q plus
    per-token noise) and the in-moment clip features (a dataset-level mixing
    matrix applied to q, plus noise); out-of-moment clips are unrelated
    draws. Saliency labels are 1 exactly inside the moments.
    """
    rng = np.random.default_rng(spec.seed)
    mixing = rng.normal(0.0, 1.0 / np.sqrt(spec.d_text), (spec.d_video, spec.d_text))
    duration = spec.num_clips * spec.clip_len_sec

    samples = []
    for i in range(spec.n_samples):
        q = rng.normal(size=spec.d_text)
        moments_clips = _place_moments(rng, spec.num_clips, spec.max_moments)
        labels = np.zeros(spec.num_clips, dtype=int)
        for lo, hi in moments_clips:
            labels[lo:hi] = 1

        base_in = mixing @ q
        video = np.empty((spec.num_clips, spec.d_video))
        for c in range(spec.num_clips):
            base = base_in if labels[c] else rng.normal(size=spec.d_video)
            video[c] = base + rng.normal(size=spec.d_video) * spec.noise_std
        text = np.tile(q, (spec.num_words, 1)) + rng.normal(size=(spec.num_words, spec.d_text)) * spec.noise_std

        moments = np.array(
            [(lo / spec.num_clips, hi / spec.num_clips) for lo, hi in moments_clips],
            dtype=np.float64,
        )
        samples.append(
            AnnotatedSample(
                qid=f"synth_{spec.seed}_{i:04d}",
                video_id=f"vid_{spec.seed}_{i:04d}",
                duration_sec=duration,
                clip_len_sec=spec.clip_len_sec,
                query=f"synthetic query {i}",
                gt=GroundTruth(
                    moments=moments,
                    saliency_labels=labels,
                    saliency_ratings=labels * RATING_POSITIVE,
                ),
                video_features=video.astype(np.float32),
                text_features=text.astype(np.float32),
            )
        )
    return samples


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------


def write_dataset(samples: list[AnnotatedSample], out_dir) -> None:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    save_annotations(samples, out / "annotations.jsonl")
    for s in samples:
        if s.video_features is None or s.text_features is None:
            raise DataError(f"sample {s.qid} has no features to write")
        write_tensor(out / "features" / f"{s.qid}.video.fpk1", s.video_features)
        write_tensor(out / "features" / f"{s.qid}.text.fpk1", s.text_features)


def load_dataset(data_dir, rating_threshold: int = RATING_POSITIVE) -> list[AnnotatedSample]:
    data_dir = Path(data_dir)
    ann = data_dir / "annotations.jsonl"
    if not ann.exists():
        raise DataError(f"no annotations.jsonl in {data_dir}")
    samples = load_annotations(ann, rating_threshold=rating_threshold)
    for s in samples:
        video_path = data_dir / "features" / f"{s.qid}.video.fpk1"
        text_path = data_dir / "features" / f"{s.qid}.text.fpk1"
        if not video_path.exists() or not text_path.exists():
            raise DataError(f"missing feature files for sample {s.qid}")
        s.video_features = read_tensor(video_path)
        s.text_features = read_tensor(text_path)
        if s.video_features.shape[0] != s.num_clips:
            raise DataError(
                f"sample {s.qid}: {s.video_features.shape[0]} feature rows "
                f"!= {s.num_clips} clips implied by duration"
            )
    return samples


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    samples: list[AnnotatedSample]
    video: np.ndarray  # (B, L_v_max, d_v) right-padded
    video_mask: np.ndarray  # (B, L_v_max) bool, True = real
    text: np.ndarray  # (B, L_t_max, d_t)
    text_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)


def make_batch(samples: list[AnnotatedSample], max_text_len: Optional[int] = None) -> Batch:
    """Right-pad to batch maxima; text optionally truncated to `max_text_len`."""
    videos, texts = [], []
    for s in samples:
        if s.video_features is None or s.text_features is None:
            raise DataError(f"sample {s.qid} has no features attached")
        text = s.text_features
        if max_text_len is not None:
            text = text[:max_text_len]
        videos.append(np.asarray(s.video_features, dtype=np.float64))
        texts.append(np.asarray(text, dtype=np.float64))

    lv = max(v.shape[0] for v in videos)
    lt = max(t.shape[0] for t in texts)
    bsz = len(samples)
    video = np.zeros((bsz, lv, videos[0].shape[1]))
    text = np.zeros((bsz, lt, texts[0].shape[1]))
    video_mask = np.zeros((bsz, lv), dtype=bool)
    text_mask = np.zeros((bsz, lt), dtype=bool)
    for i, (v, t) in enumerate(zip(videos, texts)):
        video[i, : v.shape[0]] = v
        video_mask[i, : v.shape[0]] = True
        text[i, : t.shape[0]] = t
        text_mask[i, : t.shape[0]] = True
    return Batch(samples=list(samples), video=video, video_mask=video_mask, text=text, text_mask=text_mask)


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------


def write_predictions(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def load_predictions(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: invalid JSON: {err}") from err
            for key in ("qid", "spans", "saliency"):
                if key not in record:
                    raise DataError(f"{path}:{lineno}: missing field '{key}'")
            records.append(record)
    return records
