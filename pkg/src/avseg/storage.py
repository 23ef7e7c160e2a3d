"""File formats: binary tensors, dataset manifests, checkpoints, traces.

The tensor container is a fixed little-endian layout:

    bytes 0..7   magic "MOCATNSR"
    byte  8      format version, currently 1
    byte  9      dtype code: 0=float32, 1=float64, 2=uint8 mask, 3=int64
    byte  10     number of dimensions
    bytes 11..15 reserved, must be zero
    then ndim u64 dimension sizes, then the row-major payload

uint8 tensors are masks and may only hold 0 or 255. Round-tripping any
supported array through save/load is bit-exact.

A dataset manifest is JSON-lines: one record per scene pointing at the
tensor files (paths are relative to the manifest's directory).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .model import AdapterParams
from .trainer import OptimState

MAGIC = b"MOCATNSR"
VERSION = 1
_HEADER_FIXED = 16  # magic + version + dtype + ndim + 5 reserved

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1"), 3: np.dtype("<i8")}
_KIND_TO_CODE = {"f4": 0, "f8": 1, "u1": 2, "i8": 3}


def _dtype_code(arr: np.ndarray) -> int:
    key = arr.dtype.str.lstrip("<>=|")
    if key not in _KIND_TO_CODE:
        raise ContractError(
            f"unsupported dtype {arr.dtype}; use float32, float64, uint8 or int64"
        )
    return _KIND_TO_CODE[key]


def save_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    code = _dtype_code(arr)
    if code == 2 and arr.size and not np.isin(arr, (0, 255)).all():
        raise ContractError("uint8 tensors are masks and may only contain 0 and 255")
    header = MAGIC + struct.pack("<BBB5x", VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes()
    Path(path).write_bytes(header + dims + payload)


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_FIXED:
        raise FormatError("file too short for a tensor header", offset=len(raw))
    if raw[:8] != MAGIC:
        raise FormatError("bad magic; not a tensor file", offset=0)
    version, code, ndim = raw[8], raw[9], raw[10]
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", offset=8)
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"unknown dtype code {code}", offset=9)
    if any(raw[11:16]):
        raise FormatError("reserved header bytes must be zero", offset=11)
    dims_end = _HEADER_FIXED + 8 * ndim
    if len(raw) < dims_end:
        raise FormatError("truncated dimension list", offset=len(raw))
    shape = struct.unpack(f"<{ndim}Q", raw[_HEADER_FIXED:dims_end])
    dtype = _CODE_TO_DTYPE[code]
    expect = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    if ndim == 0:
        expect = dtype.itemsize
    if len(raw) - dims_end != expect:
        raise FormatError(
            f"payload is {len(raw) - dims_end} bytes, expected {expect}", offset=dims_end
        )
    arr = np.frombuffer(raw, dtype=dtype, count=-1, offset=dims_end).reshape(shape).copy()
    if code == 2 and arr.size and not np.isin(arr, (0, 255)).all():
        raise FormatError("mask payload contains values other than 0 and 255", offset=dims_end)
    return arr.astype(arr.dtype.newbyteorder("="), copy=False)


def save_mask(path, mask) -> None:
    m = np.asarray(mask)
    save_tensor(path, (m != 0).astype(np.uint8) * 255)


def load_mask(path) -> np.ndarray:
    arr = load_tensor(path)
    if arr.dtype != np.uint8:
        raise FormatError(f"expected a uint8 mask, got {arr.dtype}", offset=9)
    return arr == 255


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ProposalRecord:
    mask: str
    embedding: str | None = None
    score: float | None = None


@dataclass
class ManifestRecord:
    """One scene: feature tensors plus optional ground truth and proposals."""

    id: str
    image_features: str
    audio_features: str
    gt_mask: str | None = None
    proposals: list[ProposalRecord] = field(default_factory=list)

    def to_json(self) -> str:
        rec = {
            "id": self.id,
            "image_features": self.image_features,
            "audio_features": self.audio_features,
        }
        if self.gt_mask is not None:
            rec["gt_mask"] = self.gt_mask
        if self.proposals:
            rec["proposals"] = [
                {k: v for k, v in (("mask", p.mask), ("embedding", p.embedding), ("score", p.score)) if v is not None}
                for p in self.proposals
            ]
        return json.dumps(rec)


def write_manifest(path, records) -> None:
    lines = [r.to_json() for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path, check_paths: bool = True) -> list[ManifestRecord]:
    """Parse a JSON-lines manifest; paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    try:
        text = path.read_text()
    except OSError as e:
        raise FormatError(f"cannot read manifest: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"manifest line {lineno} is not valid JSON: {e.msg}") from e
        for key in ("id", "image_features", "audio_features"):
            if key not in rec:
                raise FormatError(f"manifest line {lineno} missing field {key!r}")
        if rec["id"] in seen:
            raise FormatError(f"duplicate scene id {rec['id']!r} at line {lineno}")
        seen.add(rec["id"])
        props = [
            ProposalRecord(
                mask=p["mask"], embedding=p.get("embedding"), score=p.get("score")
            )
            for p in rec.get("proposals", [])
        ]
        record = ManifestRecord(
            id=rec["id"],
            image_features=rec["image_features"],
            audio_features=rec["audio_features"],
            gt_mask=rec.get("gt_mask"),
            proposals=props,
        )
        if check_paths:
            paths = [record.image_features, record.audio_features]
            if record.gt_mask:
                paths.append(record.gt_mask)
            for p in props:
                paths.append(p.mask)
                if p.embedding:
                    paths.append(p.embedding)
            for rel in paths:
                if not (base / rel).exists():
                    raise FormatError(
                        f"manifest line {lineno} references missing file {rel!r}"
                    )
        records.append(record)
    if not records:
        raise FormatError("manifest holds no records")
    return records


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(ckpt_dir, adapters: AdapterParams, state: OptimState, meta: dict) -> None:
    """Write adapters + optimizer state as one tensor file per array.

    ``meta`` must carry whatever the caller needs to rebuild the frozen
    trunk and configs; this function adds the adapter geometry and step.
    """
    d = Path(ckpt_dir)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for name, arr in adapters.named_arrays():
        save_tensor(d / f"param.{name}.tnsr", arr)
        save_tensor(d / f"adam_m.{name}.tnsr", state.m[name])
        save_tensor(d / f"adam_v.{name}.tnsr", state.v[name])
        names.append(name)
    doc = dict(meta)
    doc["checkpoint"] = {
        "step": state.step,
        "names": names,
        "m": adapters.m,
        "r": adapters.r,
        "pre_norm": adapters.pre_norm,
        "num_layers": adapters.num_layers,
    }
    (d / "meta.json").write_text(json.dumps(doc, indent=2) + "\n")


def load_checkpoint(ckpt_dir) -> tuple[AdapterParams, OptimState, dict]:
    d = Path(ckpt_dir)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"no meta.json under {d}")
    try:
        doc = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"meta.json is not valid JSON: {e.msg}") from e
    if "checkpoint" not in doc:
        raise FormatError("meta.json lacks the checkpoint section")
    ck = doc["checkpoint"]
    flat, m_state, v_state = {}, {}, {}
    for name in ck["names"]:
        flat[name] = load_tensor(d / f"param.{name}.tnsr")
        m_state[name] = load_tensor(d / f"adam_m.{name}.tnsr")
        v_state[name] = load_tensor(d / f"adam_v.{name}.tnsr")
    layers = []
    for i in range(ck["num_layers"]):
        layers.append({n: flat[f"layer{i}.{n}"] for n in AdapterParams.NAMES})
    adapters = AdapterParams(layers, m=ck["m"], r=ck["r"], pre_norm=ck["pre_norm"])
    state = OptimState(m=m_state, v=v_state, step=ck["step"])
    return adapters, state, doc


# ---------------------------------------------------------------------------
# small text artefacts


def save_loss_trace(path, rows) -> None:
    lines = ["step,loss,lr"]
    for step, loss, lr in rows:
        lines.append(f"{step},{loss:.17g},{lr:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_loss_trace(path) -> list[tuple[int, float, float]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "step,loss,lr":
        raise FormatError("loss trace missing its header row")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        s, l, r = line.split(",")
        out.append((int(s), float(l), float(r)))
    return out


def save_pgm(path, image) -> None:
    """Binary PGM (P5), for eyeballing masks and maps in any viewer."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ContractError(f"PGM wants a 2-D image, got {img.shape}")
    if img.dtype != np.uint8:
        lo, hi = float(img.min()), float(img.max())
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        img = ((img - lo) * scale).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())
