"""Videos described by a manifest, loaded lazily and turned into per-frame samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bitparse import decode_stream
from .errors import EmptySplit, FormatError
from .ingest import (DatasetManifest, FaceBox, ManifestEntry, box_for_frame, fields_from_dump,
                     read_boxes, read_frames, read_manifest, read_mvdump)
from .motionfield import MotionField, fields_from_report
from .pipeline import (AugmentationConfig, base_stack, finish_sample, frame_rng, sample_frames,
                       square_pad)


@dataclass
class Video:
    entry: ManifestEntry
    root: Path
    input_res: int = 224
    _frames: list | None = field(default=None, repr=False)
    _fields: list | None = field(default=None, repr=False)
    _boxes: list | None = field(default=None, repr=False)

    @property
    def is_fake(self) -> bool:
        return self.entry.is_fake

    @property
    def forgery_type(self) -> str:
        return self.entry.forgery_type

    def _path(self, rel: str | None) -> Path | None:
        return None if rel is None else self.root / rel

    @property
    def frames(self) -> list[np.ndarray] | None:
        if self._frames is None and self.entry.frames is not None:
            self._frames = read_frames(self._path(self.entry.frames))
        return self._frames

    @property
    def size(self) -> tuple[int, int]:
        if self.entry.width and self.entry.height:
            return self.entry.width, self.entry.height
        if self.frames:
            h, w = self.frames[0].shape[:2]
            return w, h
        raise FormatError(f"video {self.entry.video_id}: frame size unknown")

    @property
    def fields(self) -> list[tuple[str, MotionField]] | None:
        if self._fields is None:
            e = self.entry
            if e.mvdump is not None:
                w, h = self.size
                self._fields = fields_from_dump(read_mvdump(self._path(e.mvdump)), w, h, e.num_frames)
            elif e.stream is not None:
                self._fields = fields_from_report(decode_stream(self._path(e.stream).read_bytes()))
        return self._fields

    @property
    def boxes(self) -> list[FaceBox]:
        if self._boxes is None:
            if self.entry.boxes is not None:
                self._boxes = read_boxes(self._path(self.entry.boxes))
            else:
                w, h = self.size
                self._boxes = [FaceBox(0, 0, 0, w, h)]
        return self._boxes

    def __len__(self) -> int:
        counts = [len(x) for x in (self.frames, self.fields) if x is not None]
        if not counts:
            raise FormatError(f"video {self.entry.video_id} has neither frames nor motion")
        return min(counts)

    def usable(self, modality: str) -> list[int]:
        """Frames a modality can use: motion inputs skip frames without any vector."""
        n = len(self)
        if modality == "rgb":
            return list(range(n))
        flds = self.fields
        keep = [i for i in range(n) if flds[i][1].im_past.any() or flds[i][1].im_future.any()]
        return keep or list(range(n))

    def pick_frames(self, k: int, rng: np.random.Generator, modality: str = "mv_im") -> list[int]:
        pool = self.usable(modality)
        if len(pool) <= k:
            return pool
        return sorted(int(i) for i in rng.choice(pool, size=k, replace=False))

    def eval_frames(self, k: int, seed: int = 0, modality: str = "mv_im") -> list[int]:
        pool = self.usable(modality)
        return [pool[i] for i in sample_frames(len(pool), k, seed)]

    def sample(self, index: int, modality: str = "mv_im",
               augmentation: AugmentationConfig | None = None, seed: int = 0):
        need_rgb = modality in ("rgb", "rgb+mv_im")
        frame = self.frames[index] if need_rgb else None
        fld = None if modality == "rgb" else self.fields[index][1]
        w, h = self.size
        box = square_pad(box_for_frame(self.boxes, index), w, h)
        base = base_stack(frame, fld, box, self.input_res, modality == "mv_p")
        rng = frame_rng(seed, index) if augmentation is not None else None
        return finish_sample(base, modality, augmentation, rng)


class VideoDataset:
    def __init__(self, manifest: DatasetManifest, input_res: int = 224):
        self.manifest = manifest
        self.videos = [Video(e, manifest.root, input_res) for e in manifest.entries]

    @classmethod
    def load(cls, path: str | Path, input_res: int = 224) -> "VideoDataset":
        return cls(read_manifest(path), input_res)

    def split(self, name: str) -> list[Video]:
        return [v for v in self.videos if v.entry.split == name]


def balanced_videos(videos: list[Video], rng: np.random.Generator) -> list[Video]:
    """All reals plus an equal number of fakes spread evenly over forgery types."""
    reals = [v for v in videos if not v.is_fake]
    by_type: dict[str, list[Video]] = {}
    for v in videos:
        if v.is_fake:
            by_type.setdefault(v.forgery_type, []).append(v)
    if not reals or not by_type:
        raise EmptySplit("balanced sampling needs both real and fake videos")
    types = sorted(by_type)
    quota = {t: len(reals) // len(types) for t in types}
    for t in rng.permutation(types)[:len(reals) % len(types)]:
        quota[str(t)] += 1
    fakes = []
    for t in types:
        pool = by_type[t]
        take = rng.choice(len(pool), size=quota[t], replace=quota[t] > len(pool))
        fakes.extend(pool[i] for i in take)
    return reals + fakes
