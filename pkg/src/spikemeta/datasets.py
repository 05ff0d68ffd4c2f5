"""Task families, spike encodings, and dataset file I/O.

Static patterns become spike trains by rate coding: each channel spikes
independently per step with probability proportional to its intensity.
Labels become one-hot temporal codes over the visible channels. A synthetic
two-way task family provides a desk-scale stream of related classification
tasks drawn from a shared prototype pool.
"""

import struct
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Example:
    """One training/test example: input spikes x, target spikes y, class."""

    x: np.ndarray      # (in_channels, T) binary
    y: np.ndarray      # (out_channels, T) binary
    label: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.uint8)
        self.y = np.asarray(self.y, dtype=np.uint8)
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise ValueError("x and y must be 2-D (channels, T)")
        if self.x.shape[1] != self.y.shape[1]:
            raise ValueError("x and y must share the time horizon")
        if self.x.max(initial=0) > 1 or self.y.max(initial=0) > 1:
            raise ValueError("spike trains must be binary")
        self.label = int(self.label)

    @property
    def horizon(self) -> int:
        return self.x.shape[1]


@dataclass
class Task:
    """A sampled classification task with its held-out test set."""

    task_id: str
    train: list
    test: list
    num_classes: int = 2


def rate_encode(
    pattern: np.ndarray,
    horizon: int,
    max_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Bernoulli rate coding of a static intensity pattern.

    `pattern` is flattened row-major to one channel per entry; channel c
    spikes independently with probability pattern[c] * max_rate at each of
    `horizon` steps.
    """
    pattern = np.asarray(pattern, dtype=float).ravel()
    if np.any(pattern < 0) or np.any(pattern > 1):
        raise ValueError("pattern intensities must lie in [0, 1]")
    if not 0 < max_rate <= 1:
        raise ValueError("max_rate must be in (0, 1]")
    probs = pattern[:, None] * max_rate
    return (rng.random((pattern.size, horizon)) < probs).astype(np.uint8)


def encode_label(
    label: int,
    num_classes: int,
    horizon: int,
    rng: np.random.Generator,
    active_rate: float = 0.9,
    inactive_rate: float = 0.05,
) -> np.ndarray:
    """One-hot temporal label code: the true-class channel spikes at
    active_rate, all others at inactive_rate."""
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range for {num_classes} classes")
    if not (0 <= inactive_rate < active_rate <= 1):
        raise ValueError("need 0 <= inactive_rate < active_rate <= 1")
    rates = np.full(num_classes, inactive_rate)
    rates[label] = active_rate
    return (rng.random((num_classes, horizon)) < rates[:, None]).astype(np.uint8)


def split_train_test(
    examples: list,
    per_class_train: int,
    per_class_test: int,
    rng: np.random.Generator,
) -> tuple[list, list]:
    """Class-balanced disjoint split, shuffled within each class."""
    by_label: dict[int, list] = {}
    for ex in examples:
        by_label.setdefault(ex.label, []).append(ex)
    train, test = [], []
    for label in sorted(by_label):
        pool = by_label[label]
        if len(pool) < per_class_train + per_class_test:
            raise ValueError(
                f"class {label} has {len(pool)} examples, "
                f"need {per_class_train + per_class_test}"
            )
        order = rng.permutation(len(pool))
        train.append([pool[k] for k in order[:per_class_train]])
        test.extend(pool[k] for k in order[per_class_train:per_class_train + per_class_test])
    # interleave classes so streamed batches stay balanced
    interleaved = [ex for group in zip(*train) for ex in group] if train else []
    return interleaved, test


@dataclass
class SyntheticTaskFamily:
    """Two-way classification tasks over a shared pool of intensity prototypes.

    The pool is drawn once from `family_seed`; each task picks two distinct
    prototypes as its classes. Examples are the prototype corrupted by
    per-channel uniform noise of magnitude `difficulty`, then rate encoded.

    `num_distractors` extra input channels carry no class information: their
    high/low intensity is redrawn per example. Which channels are distractors
    is fixed across the whole family (they are appended after the prototype
    channels), so ignoring them is learnable across tasks even though any
    small sample shows spurious correlations with the labels.
    """

    family_seed: int = 0
    num_channels: int = 16
    horizon: int = 40
    num_prototypes: int = 5
    num_distractors: int = 0
    difficulty: float = 0.3
    num_classes: int = 2
    max_rate: float = 1.0
    active_rate: float = 0.9
    inactive_rate: float = 0.05
    high_intensity: float = 0.9
    low_intensity: float = 0.05
    prototypes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.num_prototypes < self.num_classes:
            raise ValueError("need at least num_classes prototypes")
        rng = np.random.default_rng(np.random.SeedSequence(self.family_seed))
        mask = rng.random((self.num_prototypes, self.num_channels)) < 0.5
        self.prototypes = np.where(mask, self.high_intensity, self.low_intensity)

    @property
    def total_channels(self) -> int:
        return self.num_channels + self.num_distractors

    def _make_example(self, proto: np.ndarray, label: int, rng) -> Example:
        if self.num_distractors:
            flips = rng.random(self.num_distractors) < 0.5
            proto = np.concatenate([
                proto, np.where(flips, self.high_intensity, self.low_intensity)
            ])
        noise = self.difficulty * rng.uniform(-1.0, 1.0, proto.size)
        intensity = np.clip(proto + noise, 0.0, 1.0)
        x = rate_encode(intensity, self.horizon, self.max_rate, rng)
        y = encode_label(
            label, self.num_classes, self.horizon, rng,
            self.active_rate, self.inactive_rate,
        )
        return Example(x=x, y=y, label=label)

    def sample_task(
        self,
        task_seed: int,
        per_class_train: int,
        per_class_test: int,
        task_id: str | None = None,
    ) -> Task:
        rng = np.random.default_rng(
            np.random.SeedSequence((self.family_seed, task_seed))
        )
        classes = rng.choice(self.num_prototypes, self.num_classes, replace=False)
        train_groups, test = [], []
        for label, proto_idx in enumerate(classes):
            proto = self.prototypes[proto_idx]
            train_groups.append([
                self._make_example(proto, label, rng)
                for _ in range(per_class_train)
            ])
            test.extend(
                self._make_example(proto, label, rng)
                for _ in range(per_class_test)
            )
        train = [ex for group in zip(*train_groups) for ex in group]
        return Task(
            task_id=task_id or f"task{task_seed}",
            train=train,
            test=test,
            num_classes=self.num_classes,
        )

    def task_stream(
        self, n_tasks: int, per_class_train: int, per_class_test: int,
        start: int = 0,
    ) -> list:
        return [
            self.sample_task(start + k, per_class_train, per_class_test)
            for k in range(n_tasks)
        ]


# ---------------------------------------------------------------------------
# dataset file format
#
# Little-endian layout:
#   magic          8 bytes  b"SPIKESET"
#   version        uint32   (1)
#   num_examples   uint32
#   in_channels    uint32
#   out_channels   uint32
#   horizon        uint32
#   labels         num_examples x uint16
#   payloads       per example: bit-packed x then y, row-major
#                  (channel-major, time within channel), each padded to a
#                  whole number of bytes

_DS_MAGIC = b"SPIKESET"
_DS_VERSION = 1
_MAX_COUNT = 2**31


class DatasetFormatError(ValueError):
    """Base error for dataset file problems; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MalformedHeaderError(DatasetFormatError):
    pass


class DimensionMismatchError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    pass


def _packed_size(channels: int, horizon: int) -> int:
    return -(-channels * horizon // 8)


def save_spike_dataset(examples: list, path, in_channels=None, out_channels=None,
                       horizon=None):
    """Write examples to the binary dataset format.

    Dimensions are taken from the first example unless given explicitly
    (required for an empty dataset).
    """
    if examples:
        in_channels = examples[0].x.shape[0]
        out_channels = examples[0].y.shape[0]
        horizon = examples[0].horizon
    elif None in (in_channels, out_channels, horizon):
        raise ValueError("empty dataset needs explicit dimensions")
    for ex in examples:
        if ex.x.shape != (in_channels, horizon) or ex.y.shape != (out_channels, horizon):
            raise ValueError("all examples must share the declared dimensions")
        if not 0 <= ex.label < 2**16:
            raise ValueError("labels must fit in uint16")
    with open(path, "wb") as f:
        f.write(_DS_MAGIC)
        f.write(struct.pack(
            "<5I", _DS_VERSION, len(examples), in_channels, out_channels, horizon
        ))
        f.write(struct.pack(f"<{len(examples)}H", *(ex.label for ex in examples)))
        for ex in examples:
            f.write(np.packbits(ex.x.ravel()).tobytes())
            f.write(np.packbits(ex.y.ravel()).tobytes())


def load_spike_dataset(path) -> list:
    """Read a dataset file, validating structure; inverse of save."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 or blob[:8] != _DS_MAGIC:
        raise MalformedHeaderError("bad magic string", 0)
    if len(blob) < 28:
        raise MalformedHeaderError("header truncated", len(blob))
    version, n, in_ch, out_ch, horizon = struct.unpack("<5I", blob[8:28])
    if version != _DS_VERSION:
        raise MalformedHeaderError(f"unsupported version {version}", 8)
    if max(n, in_ch, out_ch, horizon) >= _MAX_COUNT:
        raise MalformedHeaderError("implausible header counts", 12)
    if n > 0 and (in_ch == 0 or out_ch == 0 or horizon == 0):
        raise DimensionMismatchError("zero dimension with nonzero examples", 12)

    offset = 28
    label_bytes = 2 * n
    if len(blob) < offset + label_bytes:
        raise TruncatedPayloadError("label block truncated", len(blob))
    labels = struct.unpack(f"<{n}H", blob[offset:offset + label_bytes])
    offset += label_bytes

    x_bytes = _packed_size(in_ch, horizon)
    y_bytes = _packed_size(out_ch, horizon)
    expected = offset + n * (x_bytes + y_bytes)
    if len(blob) < expected:
        raise TruncatedPayloadError(
            f"payload ends early, expected {expected} bytes", len(blob)
        )
    if len(blob) > expected:
        raise DimensionMismatchError(
            "payload size inconsistent with header dimensions", expected
        )

    examples = []
    for k in range(n):
        xb = np.frombuffer(blob, dtype=np.uint8, count=x_bytes, offset=offset)
        offset += x_bytes
        yb = np.frombuffer(blob, dtype=np.uint8, count=y_bytes, offset=offset)
        offset += y_bytes
        x = np.unpackbits(xb, count=in_ch * horizon).reshape(in_ch, horizon)
        y = np.unpackbits(yb, count=out_ch * horizon).reshape(out_ch, horizon)
        examples.append(Example(x=x, y=y, label=labels[k]))
    return examples
