"""Shot bundle format, label blinding and CSV curve export.

Bundle layout (magic "SHOTSORT1"): one UTF-8 JSON header line terminated by
``\\n``, then the trace matrix as row-major little-endian float32, then one
unsigned byte per shot if labels are present. Files are byte-deterministic
for a given ShotSet (meta keys are written sorted).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import BundleFormatError, InvalidParameterError
from .traces import TimeAxis, Trace, UncertaintyBand

MAGIC = "SHOTSORT1"


@dataclass(frozen=True)
class ShotSet:
    """Ordered collection of traces with a shared time axis.

    ``labels``, when present, hold the ground-truth class per shot. Analysis
    code must never read them; only evaluation/benchmark paths may.
    """

    axis: TimeAxis
    traces: np.ndarray = field(repr=False)
    labels: Optional[np.ndarray] = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.traces, dtype=np.float64)
        if t.ndim != 2 or t.shape[1] != self.axis.n_samples:
            raise InvalidParameterError(
                f"trace matrix shape {t.shape} does not match axis n_samples "
                f"{self.axis.n_samples}"
            )
        t.setflags(write=False)
        object.__setattr__(self, "traces", t)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.uint8)
            if lab.shape != (t.shape[0],):
                raise InvalidParameterError(
                    f"labels length {lab.shape} does not match {t.shape[0]} shots"
                )
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def n_shots(self) -> int:
        return self.traces.shape[0]

    def shot(self, index: int) -> Trace:
        return Trace(axis=self.axis, values=self.traces[index])

    def subset(self, indices: Sequence[int]) -> "ShotSet":
        idx = np.asarray(indices, dtype=np.intp)
        labels = None if self.labels is None else self.labels[idx]
        return ShotSet(axis=self.axis, traces=self.traces[idx], labels=labels,
                       meta=dict(self.meta))


def blind_labels(shots: ShotSet) -> ShotSet:
    """Copy of the set with labels removed."""
    return replace(shots, labels=None)


def unblind_labels(shots: ShotSet, labels: Sequence[int]) -> ShotSet:
    """Copy of the set with the given ground-truth labels attached."""
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.shape != (shots.n_shots,):
        raise InvalidParameterError(
            f"labels length {labels.shape[0] if labels.ndim else '?'} does not "
            f"match {shots.n_shots} shots"
        )
    return replace(shots, labels=labels)


def _header_bytes(shots: ShotSet) -> bytes:
    header = {
        "magic": MAGIC,
        "n_shots": shots.n_shots,
        "n_samples": shots.axis.n_samples,
        "t0_ns": shots.axis.t0_ns,
        "dt_ns": shots.axis.dt_ns,
        "has_labels": shots.labels is not None,
        "meta": {str(k): str(v) for k, v in shots.meta.items()},
    }
    return (json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode()


def write_bundle(shots: ShotSet, path) -> None:
    """Write a ShotSet to a single-file bundle (float32 payload)."""
    try:
        with open(path, "wb") as f:
            f.write(_header_bytes(shots))
            f.write(shots.traces.astype("<f4").tobytes(order="C"))
            if shots.labels is not None:
                f.write(shots.labels.astype(np.uint8).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write bundle {path!r}: {exc}") from exc


def read_bundle(path) -> ShotSet:
    """Read a bundle written by :func:`write_bundle`.

    Raises BundleFormatError on bad magic or on a payload whose size does not
    match the header dimensions.
    """
    try:
        with open(path, "rb") as f:
            header_line = f.readline()
            payload = f.read()
    except OSError as exc:
        raise OSError(f"cannot read bundle {path!r}: {exc}") from exc
    try:
        header = json.loads(header_line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleFormatError(f"{path!r}: unparseable bundle header: {exc}") from exc
    if header.get("magic") != MAGIC:
        raise BundleFormatError(
            f"{path!r}: bad magic {header.get('magic')!r}, expected {MAGIC!r}"
        )
    try:
        n_shots = int(header["n_shots"])
        n_samples = int(header["n_samples"])
        axis = TimeAxis(t0_ns=float(header["t0_ns"]), dt_ns=float(header["dt_ns"]),
                        n_samples=n_samples)
        has_labels = bool(header["has_labels"])
        meta = dict(header.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleFormatError(f"{path!r}: invalid bundle header: {exc}") from exc
    if n_shots <= 0:
        raise BundleFormatError(f"{path!r}: non-positive n_shots {n_shots}")
    expected = 4 * n_shots * n_samples + (n_shots if has_labels else 0)
    if len(payload) != expected:
        raise BundleFormatError(
            f"{path!r}: payload size mismatch, expected {expected} bytes, "
            f"got {len(payload)}"
        )
    matrix_bytes = 4 * n_shots * n_samples
    traces = np.frombuffer(payload[:matrix_bytes], dtype="<f4")
    traces = traces.reshape(n_shots, n_samples).astype(np.float64)
    labels = None
    if has_labels:
        labels = np.frombuffer(payload[matrix_bytes:], dtype=np.uint8).copy()
    return ShotSet(axis=axis, traces=traces, labels=labels, meta=meta)


def export_curves(curves, path) -> None:
    """Write named curves to CSV for plotting.

    ``curves`` is a sequence of (name, Trace-or-UncertaintyBand) pairs; bands
    additionally emit a ``<name>_sigma`` column. All curves must share one
    axis. Values use 9 significant digits, LF line endings.
    """
    if not curves:
        raise InvalidParameterError("export_curves requires at least one curve")
    resolved = []
    for name, curve in curves:
        if isinstance(curve, UncertaintyBand):
            resolved.append((str(name), curve.mean, curve.sigma))
        else:
            resolved.append((str(name), curve, None))
    axis = resolved[0][1].axis
    for name, trace, _ in resolved:
        if trace.axis != axis:
            raise InvalidParameterError(
                f"curve {name!r} is on a different time axis"
            )
    columns = [axis.times()]
    names = ["time_ns"]
    for name, trace, sigma in resolved:
        names.append(name)
        columns.append(trace.values)
        if sigma is not None:
            names.append(f"{name}_sigma")
            columns.append(sigma)
    try:
        with open(path, "w", newline="\n") as f:
            f.write(",".join(names) + "\n")
            for row in zip(*columns):
                f.write(",".join(f"{v:.9g}" for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write curves {path!r}: {exc}") from exc
