"""File formats: binary PGM/PPM images, displacement fields, group manifests.

Everything here is byte-exact on purpose. Images are netpbm P5/P6 with
maxval 255, fields are a small fixed binary layout, and manifests are
line-oriented key=value text. Write-then-read reproduces values bitwise,
which the determinism tests lean on.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .ge_rope import DisplacementField
from .latents import SCHEDULES, PatchSpec
from .rope_core import RopeDims

FIELD_MAGIC = b"GEDF"
FIELD_VERSION = 1


def _read_netpbm_tokens(buf: io.BufferedReader, count: int) -> list[bytes]:
    """Read whitespace-separated header tokens, skipping # comments."""
    tokens: list[bytes] = []
    while len(tokens) < count:
        ch = buf.read(1)
        if not ch:
            raise ValueError("truncated header")
        if ch.isspace():
            continue
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = buf.read(1)
            continue
        tok = ch
        while True:
            ch = buf.read(1)
            if not ch or ch.isspace():
                break
            tok += ch
        tokens.append(tok)
    return tokens


def _read_netpbm(path: Path | str, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(2) != magic:
            raise ValueError(f"{path}: not a {magic.decode()} file")
        w, h, maxval = (int(t) for t in _read_netpbm_tokens(f, 3))
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
        payload = f.read(h * w * channels)
        if len(payload) != h * w * channels:
            raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, channels)).copy()


def _write_netpbm(path: Path | str, magic: bytes, img: np.ndarray) -> None:
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_pgm(path: Path | str) -> np.ndarray:
    """Binary P5 grayscale -> uint8 [H, W]."""
    return _read_netpbm(path, b"P5", 1)


def write_pgm(path: Path | str, img: np.ndarray) -> None:
    if img.ndim != 2:
        raise ValueError(f"PGM wants [H, W], got shape {img.shape}")
    _write_netpbm(path, b"P5", img)


def read_ppm(path: Path | str) -> np.ndarray:
    """Binary P6 color -> uint8 [H, W, 3]."""
    return _read_netpbm(path, b"P6", 3)


def write_ppm(path: Path | str, img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM wants [H, W, 3], got shape {img.shape}")
    _write_netpbm(path, b"P6", img)


def to_unit_float(img: np.ndarray) -> np.ndarray:
    """uint8 -> float64 in [0, 1]."""
    return img.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """float in [0, 1] (clipped) -> uint8 with half-up rounding."""
    scaled = np.clip(img, 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def load_mask(path: Path | str, grid: tuple[int, int] | None = None) -> np.ndarray:
    """PGM mask as floats in [0, 1], optionally area-averaged onto a grid.

    Values stay continuous; thresholding is the rectangle extractor's job.
    """
    mask = to_unit_float(read_pgm(path))
    if grid is not None:
        mask = area_downsample(mask, grid)
    return mask


def area_downsample(plane: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Average over equal blocks; source dims must divide evenly."""
    gh, gw = grid
    h, w = plane.shape
    if gh < 1 or gw < 1 or h % gh or w % gw:
        raise ValueError(f"cannot tile {(h, w)} into a {(gh, gw)} grid")
    return plane.reshape(gh, h // gh, gw, w // gw).mean(axis=(1, 3))


def write_field(path: Path | str, field_: DisplacementField) -> None:
    h, w = field_.shape
    with open(path, "wb") as f:
        f.write(FIELD_MAGIC)
        f.write(FIELD_VERSION.to_bytes(2, "little"))
        f.write(h.to_bytes(4, "little"))
        f.write(w.to_bytes(4, "little"))
        f.write(np.ascontiguousarray(field_.dh, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(field_.dw, dtype="<f8").tobytes())


def read_field(path: Path | str) -> DisplacementField:
    raw = Path(path).read_bytes()
    if raw[:4] != FIELD_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version = int.from_bytes(raw[4:6], "little")
    if version != FIELD_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    h = int.from_bytes(raw[6:10], "little")
    w = int.from_bytes(raw[10:14], "little")
    expect = 14 + 16 * h * w
    if len(raw) != expect:
        raise ValueError(f"{path}: payload is {len(raw)} bytes, expected {expect}")
    plane = 8 * h * w
    dh = np.frombuffer(raw[14 : 14 + plane], dtype="<f8").reshape(h, w)
    dw = np.frombuffer(raw[14 + plane :], dtype="<f8").reshape(h, w)
    return DisplacementField(dh.copy(), dw.copy())


@dataclass(frozen=True)
class GroupManifest:
    """One image group plus every setting the pipeline needs to run it.

    File entries are stored as written (relative strings); resolve against
    base_dir for I/O. Caption lines may appear zero times (empty captions),
    once (shared by all frames), or once per frame.
    """

    group: str
    images: tuple[str, ...]
    masks: tuple[str, ...]
    captions: tuple[str, ...]
    field: str | None = None
    theta: float = 10000.0
    d_t: int = 8
    d_h: int = 12
    d_w: int = 12
    r: int = 2
    channels: int = 12
    p_t: int = 1
    p_h: int = 2
    p_w: int = 2
    schedule: str = "linear"
    n_steps: int = 8
    seed: int = 0
    zero_velocity: bool = False
    base_dir: Path = dc_field(default=Path("."), compare=False)

    def __post_init__(self):
        t = len(self.images)
        if t < 1:
            raise ValueError("manifest needs at least one image entry")
        if len(self.masks) != t:
            raise ValueError(f"{t} images but {len(self.masks)} masks")
        if len(self.captions) != t:
            raise ValueError(f"{t} images but {len(self.captions)} captions")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.n_steps < 1 or self.r < 1:
            raise ValueError("n_steps and r must be >= 1")

    @property
    def n_frames(self) -> int:
        return len(self.images)

    def dims(self) -> RopeDims:
        return RopeDims(theta=self.theta, d_t=self.d_t, d_h=self.d_h, d_w=self.d_w)

    def patch(self) -> PatchSpec:
        return PatchSpec(self.p_t, self.p_h, self.p_w)

    def image_paths(self) -> list[Path]:
        return [self.base_dir / s for s in self.images]

    def mask_paths(self) -> list[Path]:
        return [self.base_dir / s for s in self.masks]

    def field_path(self) -> Path | None:
        return self.base_dir / self.field if self.field else None


_INT_KEYS = ("d_t", "d_h", "d_w", "r", "channels", "p_t", "p_h", "p_w", "n_steps", "seed")


def parse_manifest(path: Path | str) -> GroupManifest:
    """Parse key=value lines; '#' starts a comment, blank lines are skipped."""
    path = Path(path)
    kv: dict[str, object] = {"images": [], "masks": [], "captions": []}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "image":
            kv["images"].append(value)
        elif key == "mask":
            kv["masks"].append(value)
        elif key == "caption":
            kv["captions"].append(value)
        elif key in ("group", "field", "schedule"):
            kv[key] = value
        elif key == "theta":
            kv[key] = float(value)
        elif key == "zero_velocity":
            kv[key] = value.strip() in ("1", "true", "yes")
        elif key in _INT_KEYS:
            kv[key] = int(value)
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")

    images = tuple(kv.pop("images"))
    masks = tuple(kv.pop("masks"))
    captions = list(kv.pop("captions"))
    if len(captions) == 0:
        captions = [""] * len(images)
    elif len(captions) == 1 and len(images) > 1:
        captions = captions * len(images)
    kv.setdefault("group", path.stem)
    try:
        return GroupManifest(
            images=images,
            masks=masks,
            captions=tuple(captions),
            base_dir=path.parent,
            **kv,  # type: ignore[arg-type]
        )
    except TypeError as exc:
        raise ValueError(f"{path}: {exc}") from None


def write_manifest(path: Path | str, manifest: GroupManifest) -> None:
    lines = [f"group = {manifest.group}"]
    keep_captions = any(manifest.captions)
    for img, msk, cap in zip(manifest.images, manifest.masks, manifest.captions):
        lines.append(f"image = {img}")
        lines.append(f"mask = {msk}")
        if keep_captions:
            lines.append(f"caption = {cap}")
    if manifest.field:
        lines.append(f"field = {manifest.field}")
    lines += [
        f"theta = {manifest.theta}",
        f"d_t = {manifest.d_t}",
        f"d_h = {manifest.d_h}",
        f"d_w = {manifest.d_w}",
        f"r = {manifest.r}",
        f"channels = {manifest.channels}",
        f"p_t = {manifest.p_t}",
        f"p_h = {manifest.p_h}",
        f"p_w = {manifest.p_w}",
        f"schedule = {manifest.schedule}",
        f"n_steps = {manifest.n_steps}",
        f"seed = {manifest.seed}",
    ]
    if manifest.zero_velocity:
        lines.append("zero_velocity = 1")
    Path(path).write_text("\n".join(lines) + "\n")


def validate_manifest_files(manifest: GroupManifest) -> None:
    """Check that every referenced file exists; raise with the missing name."""
    paths = manifest.image_paths() + manifest.mask_paths()
    fp = manifest.field_path()
    if fp is not None:
        paths.append(fp)
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise FileNotFoundError("missing manifest files: " + ", ".join(missing))
