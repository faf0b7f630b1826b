"""Dataset schema, ingestion, windowing, the body graph and synthetic data.

On disk a dataset is a directory holding ``manifest.json`` and one CSV per
segment. The manifest lists the component registry, class names, the frame
rate and ``{file, label}`` entries; segment CSVs have one header row of
channel names (``<component>.<channel>`` in registry order) followed by one
row per frame.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MANIFEST_VERSION = 1
MODALITIES = ("joints", "imu", "audio-features", "other")

JOINT_NAMES = (
    "nose",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
)
BODY_NODES = ("mid_shoulder",) + JOINT_NAMES
BODY_EDGES = (
    (0, 1), (0, 2), (0, 3), (0, 8), (0, 9),
    (2, 4), (3, 5), (4, 6), (5, 7),
    (8, 10), (9, 11), (10, 12), (11, 13),
)
IMU_NAMES = ("acc_l", "acc_r", "gyro_l", "gyro_r", "mag_l", "mag_r")
JOINT_CHANNELS = ("x", "y", "v")


class DatasetError(Exception):
    """Base class for dataset problems."""


class ManifestError(DatasetError):
    pass


class WidthMismatchError(DatasetError):
    pass


class UnknownLabelError(DatasetError):
    pass


class MissingFileError(DatasetError):
    pass


class RegistryMismatchError(DatasetError):
    pass


class DegenerateKeypointsError(DatasetError):
    pass


class GraphError(ValueError):
    pass


# -- registry -------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    width: int
    modality: str = "other"

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"component {self.name!r} needs width >= 1, got {self.width}")
        if self.modality not in MODALITIES:
            raise ValueError(f"component {self.name!r}: unknown modality {self.modality!r}")

    def channel_names(self) -> list[str]:
        if self.modality == "joints" and self.width == 3:
            return [f"{self.name}.{ch}" for ch in JOINT_CHANNELS]
        return [f"{self.name}.{i}" for i in range(self.width)]

    def to_json(self) -> dict:
        return {"name": self.name, "width": self.width, "modality": self.modality}


@dataclass(frozen=True)
class Registry:
    """Ordered, uniquely named components."""

    components: tuple[ComponentSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.components]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate component names in registry: {names}")

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, name: str) -> ComponentSpec:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.components)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.components]

    @property
    def total_width(self) -> int:
        return sum(c.width for c in self.components)

    def columns(self) -> dict[str, slice]:
        out, start = {}, 0
        for c in self.components:
            out[c.name] = slice(start, start + c.width)
            start += c.width
        return out

    def channel_names(self) -> list[str]:
        return [ch for c in self.components for ch in c.channel_names()]

    def of_modality(self, *modalities: str) -> "Registry":
        return Registry(tuple(c for c in self.components if c.modality in modalities))

    def without_modality(self, *modalities: str) -> "Registry":
        return Registry(tuple(c for c in self.components if c.modality not in modalities))

    def subset(self, names: Iterable[str]) -> "Registry":
        return Registry(tuple(self[n] for n in names))

    @property
    def joint_names(self) -> list[str]:
        return [c.name for c in self.components if c.modality == "joints"]

    def has_skeleton(self) -> bool:
        """True when the joint components form the 13-keypoint body."""
        joints = [c for c in self.components if c.modality == "joints"]
        return [c.name for c in joints] == list(JOINT_NAMES) and all(c.width == 3 for c in joints)

    def to_json(self) -> list[dict]:
        return [c.to_json() for c in self.components]

    @classmethod
    def from_json(cls, items: Sequence[dict]) -> "Registry":
        return cls(tuple(ComponentSpec(d["name"], int(d["width"]), d.get("modality", "other")) for d in items))


def default_registry() -> Registry:
    """13 joints (x, y, v), 6 IMU triplets and one 13-wide MFCC vector."""
    comps = [ComponentSpec(n, 3, "joints") for n in JOINT_NAMES]
    comps += [ComponentSpec(n, 3, "imu") for n in IMU_NAMES]
    comps.append(ComponentSpec("mfcc", 13, "audio-features"))
    return Registry(tuple(comps))


# -- segments and windows ---------------------------------------------------------------


@dataclass
class Segment:
    id: str
    label: int
    frames: np.ndarray  # T_seg x total width
    registry: Registry
    fps: float = 50.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.fps <= 0:
            raise ValueError(f"segment {self.id}: fps must be positive")
        if self.frames.ndim != 2 or self.frames.shape[1] != self.registry.total_width:
            raise WidthMismatchError(
                f"segment {self.id}: row width {self.frames.shape[-1]} != registry width {self.registry.total_width}"
            )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def block(self, name: str) -> np.ndarray:
        return self.frames[:, self.registry.columns()[name]]

    def joints(self) -> np.ndarray:
        """Raw T x 13 x 3 keypoint block."""
        cols = self.registry.columns()
        return np.stack([self.frames[:, cols[n]] for n in JOINT_NAMES], axis=1)


@dataclass
class Window:
    segment_id: str
    start: int
    blocks: dict[str, np.ndarray]  # name -> T x width
    label: int
    joints: np.ndarray | None = None  # T x 14 x 3 when the registry has a skeleton

    @property
    def length(self) -> int:
        if self.blocks:
            return next(iter(self.blocks.values())).shape[0]
        return 0 if self.joints is None else self.joints.shape[0]


@dataclass
class WindowSet:
    """Frame-aligned windows stored as stacked arrays for batched models."""

    registry: Registry
    blocks: dict[str, np.ndarray]  # name -> n x T x width
    labels: np.ndarray
    segment_ids: list[str]
    starts: np.ndarray
    joints: np.ndarray | None = None  # n x T x 14 x 3

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def length(self) -> int:
        if self.blocks:
            return next(iter(self.blocks.values())).shape[1]
        return 0 if self.joints is None else self.joints.shape[1]

    def __getitem__(self, i: int) -> Window:
        return Window(
            self.segment_ids[i],
            int(self.starts[i]),
            {k: v[i] for k, v in self.blocks.items()},
            int(self.labels[i]),
            None if self.joints is None else self.joints[i],
        )

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(
            self.registry,
            {k: v[idx] for k, v in self.blocks.items()},
            self.labels[idx],
            [self.segment_ids[i] for i in idx],
            self.starts[idx],
            None if self.joints is None else self.joints[idx],
        )

    def project(self, registry: Registry) -> "WindowSet":
        """Restrict to ``registry``'s components, checking names and widths."""
        for c in registry:
            if c.name not in self.registry:
                raise RegistryMismatchError(
                    f"model component {c.name!r} missing from data registry {self.registry.names}"
                )
            if self.registry[c.name].width != c.width:
                raise RegistryMismatchError(
                    f"component {c.name!r}: model width {c.width} != data width {self.registry[c.name].width}"
                )
        return WindowSet(
            registry,
            {c.name: self.blocks[c.name] for c in registry},
            self.labels,
            self.segment_ids,
            self.starts,
            self.joints,
        )

    @classmethod
    def from_windows(cls, windows: Sequence[Window], registry: Registry) -> "WindowSet":
        if not windows:
            return cls.empty(registry)
        joints = None
        if windows[0].joints is not None:
            joints = np.stack([w.joints for w in windows])
        return cls(
            registry,
            {c.name: np.stack([w.blocks[c.name] for w in windows]) for c in registry},
            np.array([w.label for w in windows], dtype=np.int64),
            [w.segment_id for w in windows],
            np.array([w.start for w in windows], dtype=np.int64),
            joints,
        )

    @classmethod
    def empty(cls, registry: Registry) -> "WindowSet":
        return cls(registry, {}, np.zeros(0, dtype=np.int64), [], np.zeros(0, dtype=np.int64))


def window_geometry(fps: float, window_seconds: float = 3.0, overlap: float = 0.8) -> tuple[int, int]:
    """(window length, stride) in frames."""
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    raw = fps * window_seconds
    length = int(round(raw))
    if abs(raw - length) > 1e-9 or length < 1:
        raise ValueError(f"window length fps*seconds = {raw} is not a positive integer")
    stride = round(length * (1.0 - overlap))  # ties to even
    if stride < 1:
        raise ValueError(f"overlap {overlap} leaves a zero stride for window length {length}")
    return length, stride


def window_count(n_frames: int, length: int, stride: int) -> int:
    if n_frames < length:
        return 0
    return (n_frames - length) // stride + 1


def window_starts(n_frames: int, length: int, stride: int) -> range:
    return range(0, window_count(n_frames, length, stride) * stride, stride)


def slide_windows(
    seg: Segment,
    window_seconds: float = 3.0,
    overlap: float = 0.8,
    joints: np.ndarray | None = None,
) -> list[Window]:
    """Cut a segment into overlapping windows; partial tails are dropped.

    ``joints`` optionally supplies a normalized T_seg x 14 x 3 skeleton that
    is cut alongside the component blocks.
    """
    length, stride = window_geometry(seg.fps, window_seconds, overlap)
    if seg.n_frames < length:
        warnings.warn(
            f"segment {seg.id}: {seg.n_frames} frames is shorter than one window ({length}); skipped",
            stacklevel=2,
        )
        return []
    cols = seg.registry.columns()
    out = []
    for s in window_starts(seg.n_frames, length, stride):
        blocks = {name: seg.frames[s : s + length, sl] for name, sl in cols.items()}
        jb = None if joints is None else joints[s : s + length]
        out.append(Window(seg.id, s, blocks, seg.label, jb))
    return out


# -- body graph -------------------------------------------------------------------------


def build_normalized_adjacency(edges: Iterable[tuple[int, int]], n_vertices: int) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` for an undirected edge list."""
    A = np.zeros((n_vertices, n_vertices))
    seen = set()
    for u, v in edges:
        if u == v:
            raise GraphError(f"self-loop {u}-{v} in edge list (self-loops are added internally)")
        if not (0 <= u < n_vertices and 0 <= v < n_vertices):
            raise GraphError(f"edge {u}-{v} out of range for {n_vertices} vertices")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise GraphError(f"duplicate edge {u}-{v}")
        seen.add(key)
        A[u, v] = A[v, u] = 1.0
    A += np.eye(n_vertices)
    deg = A.sum(axis=1)
    # one rounding per entry: 1/sqrt(d_u d_v) is exact where the product is a square
    return A / np.sqrt(np.outer(deg, deg))


@dataclass(frozen=True)
class BodyGraph:
    nodes: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def n_vertices(self) -> int:
        return len(self.nodes)

    @property
    def a_hat(self) -> np.ndarray:
        return build_normalized_adjacency(self.edges, self.n_vertices)

    def is_connected(self) -> bool:
        adj = {i: set() for i in range(self.n_vertices)}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        seen, todo = {0}, [0]
        while todo:
            for nb in adj[todo.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        return len(seen) == self.n_vertices


def body_graph() -> BodyGraph:
    """Mid-shoulder plus the 13 keypoints, 13 bones."""
    return BodyGraph(BODY_NODES, BODY_EDGES)


def normalize_keypoints(joints: np.ndarray, mode: str = "frame-bbox", segment_id: str = "?") -> np.ndarray:
    """Scale raw (x, y, v) keypoints and prepend the mid-shoulder node.

    ``joints`` is T x 13 x 3. In "frame-bbox" mode x and y are mapped
    affinely onto [0, 1] by the bounding box of every keypoint in the
    segment; "segment-zscore" standardizes x and y over the segment.
    Visibility is left alone. Node 0 is the midpoint of the two shoulders.
    Returns T x 14 x 3.
    """
    joints = np.asarray(joints, dtype=np.float64)
    if joints.ndim != 3 or joints.shape[1:] != (13, 3):
        raise ValueError(f"expected a T x 13 x 3 keypoint block, got {joints.shape}")
    out = joints.copy()
    for axis in (0, 1):
        coord = joints[:, :, axis]
        if mode == "frame-bbox":
            lo, hi = coord.min(), coord.max()
            if hi - lo <= 0:
                raise DegenerateKeypointsError(f"segment {segment_id}: keypoint bounding box has zero extent")
            out[:, :, axis] = (coord - lo) / (hi - lo)
        elif mode == "segment-zscore":
            sd = coord.std()
            if sd <= 0:
                raise DegenerateKeypointsError(f"segment {segment_id}: keypoint coordinates have zero spread")
            out[:, :, axis] = (coord - coord.mean()) / sd
        else:
            raise ValueError(f"unknown keypoint normalization {mode!r}")
    # keypoints 2 and 3 are rows 1 and 2 of the 13-row block
    mid = 0.5 * (out[:, 1, :] + out[:, 2, :])
    return np.concatenate([mid[:, None, :], out], axis=1)


def make_windows(
    segments: Sequence[Segment],
    registry: Registry | None = None,
    window_seconds: float = 3.0,
    overlap: float = 0.8,
    keypoint_mode: str = "frame-bbox",
) -> WindowSet:
    """Normalize skeletons per segment, then window every segment."""
    if registry is None:
        if not segments:
            raise ValueError("need a registry or at least one segment")
        registry = segments[0].registry
    skeleton = registry.has_skeleton()
    windows: list[Window] = []
    for seg in segments:
        joints = None
        if skeleton:
            joints = normalize_keypoints(seg.joints(), keypoint_mode, seg.id)
            frames = seg.frames.copy()
            cols = registry.columns()
            for k, name in enumerate(JOINT_NAMES):
                frames[:, cols[name]] = joints[:, k + 1, :]
            seg = Segment(seg.id, seg.label, frames, seg.registry, seg.fps, seg.meta)
        windows.extend(slide_windows(seg, window_seconds, overlap, joints))
    return WindowSet.from_windows(windows, registry)


# -- manifests -------------------------------------------------------------------------------


@dataclass
class Manifest:
    registry: Registry
    classes: list[str]
    segments: list[dict]  # {"file", "label", ...}
    fps: float = 50.0
    version: int = MANIFEST_VERSION

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "fps": self.fps,
            "classes": list(self.classes),
            "components": self.registry.to_json(),
            "segments": list(self.segments),
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"manifest {path} does not exist")
        try:
            raw = json.loads(path.read_text())
            version = int(raw["version"])
            registry = Registry.from_json(raw["components"])
            classes = [str(c) for c in raw["classes"]]
            segments = list(raw.get("segments", []))
            fps = float(raw.get("fps", 50.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"manifest {path}: {exc}") from exc
        if version != MANIFEST_VERSION:
            raise ManifestError(f"manifest {path}: unsupported version {version}")
        return cls(registry, classes, segments, fps, version)


def write_segment_csv(path: str | Path, frames: np.ndarray, registry: Registry) -> None:
    lines = [",".join(registry.channel_names())]
    lines.extend(",".join(map(repr, row)) for row in np.asarray(frames, dtype=np.float64).tolist())
    Path(path).write_text("\n".join(lines) + "\n")


def read_segment_csv(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)


def load_dataset(manifest_path: str | Path) -> tuple[Registry, list[Segment]]:
    """Read and validate every segment listed in a manifest.

    ``manifest_path`` may also name the dataset directory. Segment ids are
    file stems; segments come back sorted by id. Extra manifest fields on a
    segment entry end up in ``Segment.meta``.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    manifest = Manifest.read(manifest_path)
    root = manifest_path.parent
    registry = manifest.registry
    n_classes = len(manifest.classes)
    segments = []
    for entry in manifest.segments:
        file = root / entry["file"]
        seg_id = Path(entry["file"]).stem
        label = entry.get("label")
        if not isinstance(label, int) or not 0 <= label < n_classes:
            raise UnknownLabelError(f"segment {seg_id}: label {label!r} not in [0, {n_classes})")
        if not file.exists():
            raise MissingFileError(f"segment {seg_id}: file {file} does not exist")
        frames = read_segment_csv(file)
        if frames.shape[1] != registry.total_width:
            raise WidthMismatchError(
                f"segment {seg_id}: row width {frames.shape[1]} != registry width {registry.total_width}"
            )
        meta = {k: v for k, v in entry.items() if k not in ("file", "label")}
        segments.append(Segment(seg_id, label, frames, registry, manifest.fps, meta))
    segments.sort(key=lambda s: s.id)
    return registry, segments


def split_by_segment(segments: Sequence[Segment], test_fraction: float, seed: int) -> tuple[list[Segment], list[Segment]]:
    """Seeded segment-level split, stratified by label.

    Windows are cut afterwards, so no window straddles the two sides. The
    test count is ``round(test_fraction * n)`` (at least 1, at most n - 1),
    shared out over classes by largest remainder so both sides keep the
    overall class balance.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(segments)
    if n < 2:
        raise ValueError(f"need at least 2 segments to split, got {n}")
    n_test = min(max(int(round(test_fraction * n)), 1), n - 1)
    rng = np.random.default_rng(seed)
    labels = np.array([s.label for s in segments])
    classes = np.unique(labels)
    counts = np.array([(labels == c).sum() for c in classes])
    quota = counts * n_test / n
    take = np.floor(quota).astype(int)
    # ties in the remainder go to the lower class label
    for k in np.argsort(-(quota - take), kind="stable")[: n_test - take.sum()]:
        take[k] += 1
    test_idx: set[int] = set()
    for c, k in zip(classes, take):
        members = np.flatnonzero(labels == c)
        test_idx.update(members[rng.permutation(len(members))[:k]].tolist())
    train = [s for i, s in enumerate(segments) if i not in test_idx]
    test = [s for i, s in enumerate(segments) if i in test_idx]
    return train, test


# -- synthetic data ------------------------------------------------------------------------------


def synthetic_registry(n_components: int = 7, width: int = 3) -> Registry:
    return Registry(tuple(ComponentSpec(f"s{i}", width, "imu") for i in range(n_components)))


def skeleton_registry(n_noise: int = 2) -> Registry:
    comps = [ComponentSpec(n, 3, "joints") for n in JOINT_NAMES]
    comps += [ComponentSpec(n, 3, "imu") for n in IMU_NAMES[:n_noise]]
    return Registry(tuple(comps))


# standing pose in pixels, image y pointing down, hips at the origin
_BASE_POSE = np.array(
    [
        [0, -170], [-25, -140], [25, -140], [-35, -100], [35, -100],
        [-40, -60], [40, -60], [-18, 0], [18, 0], [-20, 50], [20, 50],
        [-22, 100], [22, 100],
    ],
    dtype=np.float64,
)
_JITTER_PX = 4.0  # skeleton-mode pixels per unit of noise_std
_BURST_PX = 10.0  # skeleton-mode pixels per unit of amplitude


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic two-class generator.

    Class-1 segments carry a half-sine burst of ``amplitude`` on the
    informative component, repeated every ``burst_period`` frames from a
    random phase, so every 3 s window holds at least one complete burst.
    In skeleton mode the burst displaces the informative joint instead and
    all joints follow smooth random trajectories.
    """

    segments: int = 152
    frames_per_segment: int = 515
    registry: Registry | None = None
    informative_component: str | None = None
    burst_frames: int = 20
    burst_period: int = 60
    amplitude: float = 3.0
    noise_std: float = 1.0
    seed: int = 0
    skeleton: bool = False
    fps: float = 50.0
    classes: tuple[str, str] = ("lightness", "fragility")

    def resolved(self) -> "SyntheticSpec":
        reg = self.registry or (skeleton_registry() if self.skeleton else synthetic_registry())
        info = self.informative_component or ("l_wrist" if self.skeleton else reg.names[len(reg) // 2])
        spec = SyntheticSpec(**{**self.__dict__, "registry": reg, "informative_component": info})
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if self.frames_per_segment < 1:
            raise ValueError("frames_per_segment must be >= 1")
        if self.informative_component not in self.registry:
            raise ValueError(f"informative component {self.informative_component!r} not in registry")
        if not 1 <= self.burst_frames <= self.burst_period:
            raise ValueError("need 1 <= burst_frames <= burst_period")
        if self.burst_period > self.frames_per_segment:
            raise ValueError("burst_period exceeds the segment length")
        if self.noise_std < 0 or self.amplitude < 0:
            raise ValueError("amplitude and noise_std must be non-negative")
        if self.skeleton:
            if not self.registry.has_skeleton():
                raise ValueError("skeleton mode needs the 13 joint components in the registry")
            if self.registry[self.informative_component].modality != "joints":
                raise ValueError("in skeleton mode the informative component must be a joint")


def limb_weights(joint: str) -> np.ndarray:
    """Per-keypoint burst weights: 1 on ``joint``, 1/2 on its body-graph
    neighbours (mid-shoulder excluded), 0 elsewhere."""
    k = JOINT_NAMES.index(joint) + 1
    w = np.zeros(len(BODY_NODES))
    w[k] = 1.0
    for u, v in BODY_EDGES:
        if k in (u, v):
            w[v if u == k else u] = 0.5
    return w[1:]


def burst_profile(length: int) -> np.ndarray:
    return np.sin(np.pi * (np.arange(length) + 0.5) / length)


def burst_intervals(n_frames: int, period: int, length: int, phase: int) -> list[tuple[int, int]]:
    return [(s, min(s + length, n_frames)) for s in range(phase, n_frames, period)]


def _smooth_noise(rng: np.random.Generator, shape: tuple[int, ...], std: float, rho: float = 0.9) -> np.ndarray:
    """Stationary AR(1) noise along axis 0 with marginal std ``std``."""
    e = rng.normal(0.0, std * np.sqrt(1 - rho * rho), size=shape)
    out = np.empty(shape)
    out[0] = rng.normal(0.0, std, size=shape[1:])
    for t in range(1, shape[0]):
        out[t] = rho * out[t - 1] + e[t]
    return out


def _skeleton_frames(rng: np.random.Generator, n_frames: int, noise_std: float) -> np.ndarray:
    """T x 13 x 3 pixel-space trajectories: drifting root, jittering joints."""
    root = np.cumsum(rng.normal(0.0, 0.5, size=(n_frames, 2)), axis=0) + np.array([320.0, 240.0])
    scale = rng.uniform(0.9, 1.1)
    jitter = _smooth_noise(rng, (n_frames, 13, 2), noise_std * _JITTER_PX)
    xy = root[:, None, :] + scale * _BASE_POSE[None, :, :] + jitter
    vis = np.clip(0.9 + 0.05 * rng.normal(size=(n_frames, 13, 1)), 0.0, 1.0)
    return np.concatenate([xy, vis], axis=2)


def synthesize_segments(spec: SyntheticSpec) -> list[Segment]:
    spec = spec.resolved()
    reg = spec.registry
    rng = np.random.default_rng(spec.seed)
    n, T = spec.segments, spec.frames_per_segment
    labels = rng.permutation(np.arange(n) % 2)
    cols = reg.columns()
    profile = burst_profile(spec.burst_frames)
    width = len(str(n - 1))
    segments = []
    for k in range(n):
        frames = rng.normal(0.0, spec.noise_std, size=(T, reg.total_width))
        if spec.skeleton:
            skel = _skeleton_frames(rng, T, spec.noise_std)
        phase = int(rng.integers(spec.burst_period))
        bursts = []
        if labels[k] == 1:
            bursts = burst_intervals(T, spec.burst_period, spec.burst_frames, phase)
            for s, e in bursts:
                bump = spec.amplitude * profile[: e - s]
                if spec.skeleton:
                    # joint moves up and out, its graph neighbours follow at half
                    disp = _BURST_PX * bump[:, None] * limb_weights(spec.informative_component)[None, :]
                    skel[s:e, :, 0] -= disp
                    skel[s:e, :, 1] -= disp
                else:
                    frames[s:e, cols[spec.informative_component]] += bump[:, None]
        if spec.skeleton:
            for j, name in enumerate(JOINT_NAMES):
                frames[:, cols[name]] = skel[:, j, :]
        seg_id = f"seg{k:0{width}d}"
        meta = {"bursts": [[s, e] for s, e in bursts]}
        segments.append(Segment(seg_id, int(labels[k]), frames, reg, spec.fps, meta))
    return segments


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Manifest:
    """Write a deterministic synthetic dataset (manifest + CSVs) to ``out_dir``."""
    spec = spec.resolved()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for seg in synthesize_segments(spec):
        name = f"{seg.id}.csv"
        write_segment_csv(out / name, seg.frames, spec.registry)
        entries.append({"file": name, "label": seg.label, **seg.meta})
    manifest = Manifest(spec.registry, list(spec.classes), entries, spec.fps)
    manifest.write(out / "manifest.json")
    return manifest


def burst_mask(window: Window, bursts: Sequence[Sequence[int]]) -> np.ndarray:
    """Boolean per-frame mask of burst frames inside ``window``."""
    mask = np.zeros(window.length, dtype=bool)
    for s, e in bursts:
        lo, hi = max(s - window.start, 0), min(e - window.start, window.length)
        if lo < hi:
            mask[lo:hi] = True
    return mask
