"""Synthetic compressed-sensing data, image/EEG-style pipelines, dataset files.

Every random draw comes from a Philox counter-based generator keyed by
``(seed, stream, index)``, so any sample can be regenerated on its own and
parallel generation is order independent. Gaussian draws use Box-Muller on
the generator's uniforms.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptManifestError, DimensionError, ShapeMismatchError, TruncatedDataError
from .linalg import BlockDiagOperator, as_dense, index_set
from .physics import BlockStructure

__all__ = [
    "CsInstance",
    "Dataset",
    "DatasetSpec",
    "contaminate",
    "dct_sense",
    "extract_patches",
    "gen_block_dataset",
    "gen_dataset",
    "gen_sensing",
    "gen_signals",
    "load_dataset",
    "measure",
    "read_pgm",
    "save_dataset",
    "snr_db",
    "stream_rng",
    "write_pgm",
]

# stream ids for the counter-based generator
SENSING, TRAIN, TEST, TRAIN_NOISE, TEST_NOISE, PATCHES, PATCH_NOISE = range(7)

_LE_F64 = np.dtype("<f8")


def stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def box_muller(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normals from pairs of uniforms."""
    half = (size + 1) // 2
    u1 = rng.random(half)
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    z = np.empty(2 * half)
    z[0::2] = r * np.cos(2 * np.pi * u2)
    z[1::2] = r * np.sin(2 * np.pi * u2)
    return z[:size]


@dataclass
class DatasetSpec:
    m: int = 50
    n: int = 100
    p_nonzero: float = 0.05
    n_train: int = 4000
    n_test: int = 1000
    noise_std: float = 0.0
    seed: int = 0
    fixed_support: list[int] | None = None
    structure: BlockStructure | None = None
    sensing_seeds: list[int] | None = None

    def __post_init__(self):
        if isinstance(self.structure, dict):
            blk = self.structure.get("block", self.structure)
            self.structure = BlockStructure(**blk)
        if not 0 < self.p_nonzero <= 1:
            raise ValueError("p_nonzero must lie in (0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("n_train must be >= 1 and n_test >= 0")
        if self.structure is not None:
            self.m, self.n = self.structure.v, self.structure.p
        if self.fixed_support is not None:
            self.fixed_support = index_set(self.fixed_support, self.signal_length).tolist()

    @property
    def signal_length(self) -> int:
        return self.n * (1 if self.structure is None else self.structure.u)

    def to_json(self) -> dict:
        d = asdict(self)
        d["structure"] = None if self.structure is None else self.structure.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DatasetSpec":
        return cls(**d)


@dataclass
class CsInstance:
    y: np.ndarray
    x_opt: np.ndarray
    support: np.ndarray


@dataclass
class Dataset:
    """One split: the shared sensing operator plus stacked measurements and targets."""

    A: np.ndarray | BlockDiagOperator
    Y: np.ndarray
    X: np.ndarray
    supports: list[np.ndarray]
    spec: DatasetSpec | None = None
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.Y.ndim != 2 or self.X.ndim != 2 or self.Y.shape[0] != self.X.shape[0]:
            raise DimensionError(f"Y {self.Y.shape} and X {self.X.shape} disagree")
        if len(self.supports) != self.X.shape[0]:
            raise DimensionError("one support per sample required")
        m, n = self.A.shape
        if self.Y.shape[1] != m or self.X.shape[1] != n:
            raise DimensionError(f"operator {self.A.shape} vs Y {self.Y.shape}, X {self.X.shape}")

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> CsInstance:
        return CsInstance(self.Y[i], self.X[i], self.supports[i])

    def subset(self, count: int) -> "Dataset":
        return Dataset(self.A, self.Y[:count], self.X[:count], self.supports[:count],
                       self.spec, self.split, dict(self.meta))

    @property
    def block_count(self) -> int:
        return self.A.repeat if isinstance(self.A, BlockDiagOperator) else 1


def gen_sensing(m: int, n: int, seed: int) -> np.ndarray:
    """Gaussian sensing matrix with i.i.d. ``N(0, 1/m)`` entries."""
    if m < 1 or n < 1:
        raise ValueError("m and n must be >= 1")
    z = box_muller(stream_rng(seed, SENSING), m * n)
    return z.reshape(m, n) / np.sqrt(m)


def gen_signals(spec: DatasetSpec, count: int, seed: int, stream: int = TRAIN):
    """Bernoulli(p)-sparse signals with standard Gaussian nonzeros.

    With ``spec.fixed_support`` the Bernoulli draw is restricted to that set.
    Returns ``(X, supports)``.
    """
    n = spec.signal_length
    allowed = None
    if spec.fixed_support is not None:
        allowed = np.zeros(n, dtype=bool)
        allowed[spec.fixed_support] = True
    X = np.zeros((count, n))
    supports = []
    for i in range(count):
        rng = stream_rng(seed, stream, i)
        on = rng.random(n) < spec.p_nonzero
        vals = box_muller(rng, n)
        if allowed is not None:
            on &= allowed
        X[i, on] = vals[on]
        supports.append(np.flatnonzero(on))
    return X, supports


def measure(A, x, noise_std: float = 0.0, seed: int = 0, stream: int = TRAIN_NOISE,
            index: int = 0) -> np.ndarray:
    """``y = A x + noise_std * g`` with ``g ~ N(0, I)``; ``x`` may be a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None] if single else x
    if isinstance(A, BlockDiagOperator):
        v, p = A.block_shape
        if X.shape[1] != p * A.repeat:
            raise DimensionError(f"signal length {X.shape[1]} vs operator {A.shape}")
        Y = A.apply_blocks(X.reshape(len(X), A.repeat, p)).reshape(len(X), -1)
    else:
        A = as_dense(A)
        if X.shape[1] != A.shape[1]:
            raise DimensionError(f"signal length {X.shape[1]} vs matrix {A.shape}")
        Y = X @ A.T
    if noise_std > 0:
        for i in range(len(Y)):
            Y[i] += noise_std * box_muller(stream_rng(seed, stream, index + i), Y.shape[1])
    return Y[0] if single else Y


def _split(A, spec: DatasetSpec, split: str) -> Dataset:
    if split == "train":
        count, sig, noise = spec.n_train, TRAIN, TRAIN_NOISE
    else:
        count, sig, noise = spec.n_test, TEST, TEST_NOISE
    X, supports = gen_signals(spec, count, spec.seed, sig)
    Y = measure(A, X, spec.noise_std, spec.seed, noise)
    return Dataset(A, Y, X, supports, spec, split)


def gen_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Train and test splits sharing one sensing matrix (or block operator)."""
    if spec.structure is not None:
        return gen_block_dataset(spec.structure, spec.sensing_seeds, spec)
    A = gen_sensing(spec.m, spec.n, spec.seed)
    return _split(A, spec, "train"), _split(A, spec, "test")


def gen_block_dataset(structure: BlockStructure, sensing_seeds, spec: DatasetSpec):
    """Dataset over ``A' = BlockDiag(A_1..A_u)`` without materializing ``A'``.

    One seed (or ``None``, meaning ``spec.seed``) repeats a single ``v x p``
    block; ``u`` seeds give distinct blocks.
    """
    if spec.structure != structure:
        spec = DatasetSpec(**{**asdict(spec), "structure": structure})
    seeds = [spec.seed] if not sensing_seeds else list(sensing_seeds)
    if len(seeds) not in (1, structure.u):
        raise ValueError(f"need 1 or {structure.u} sensing seeds, got {len(seeds)}")
    blocks = np.stack([gen_sensing(structure.v, structure.p, s) for s in seeds])
    A = BlockDiagOperator(blocks, structure.u)
    return _split(A, spec, "train"), _split(A, spec, "test")


# --- image and signal pipelines -------------------------------------------------

def _pgm_tokens(data: bytes):
    """Yield whitespace-separated header tokens and the offset after each."""
    i, n = 0, len(data)
    while i < n:
        c = data[i:i + 1]
        if c == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            yield data[i:j], j
            i = j


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) PGM file as floats scaled to ``[0, 1]``."""
    data = Path(path).read_bytes()
    toks = _pgm_tokens(data)
    try:
        magic, _ = next(toks)
        width, _ = next(toks)
        height, _ = next(toks)
        maxval, end = next(toks)
        w, h, maxv = int(width), int(height), int(maxval)
    except (StopIteration, ValueError) as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if magic not in (b"P5", b"P2") or not 0 < maxv < 65536:
        raise ValueError(f"{path}: not a grayscale PGM")
    if magic == b"P5":
        dt = np.dtype(">u2") if maxv > 255 else np.dtype("u1")
        raw = data[end + 1:end + 1 + w * h * dt.itemsize]
        if len(raw) < w * h * dt.itemsize:
            raise ValueError(f"{path}: truncated pixel data")
        pix = np.frombuffer(raw, dtype=dt)
    else:
        pix = np.array(data[end:].split()[: w * h], dtype=np.int64)
        if pix.size < w * h:
            raise ValueError(f"{path}: truncated pixel data")
    return pix.reshape(h, w).astype(np.float64) / maxv


def write_pgm(path, image, maxval: int = 255) -> None:
    """Write a ``[0, 1]`` float image as binary PGM."""
    img = np.clip(np.round(np.asarray(image) * maxval), 0, maxval)
    h, w = img.shape
    dt = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        f.write(img.astype(dt).tobytes())


def extract_patches(image, patch: int = 8, count: int = 25, seed: int = 0,
                    index: int = 0) -> np.ndarray:
    """Random ``patch x patch`` crops, flattened row-major and mean-subtracted.

    ``image`` is a PGM path or an array already scaled to ``[0, 1]``.
    ``index`` offsets the generator counter so different images draw
    independent corners.
    """
    img = read_pgm(image) if isinstance(image, (str, os.PathLike)) else np.asarray(image, float)
    h, w = img.shape
    if h < patch or w < patch:
        raise ValueError(f"image {img.shape} smaller than patch {patch}")
    out = np.empty((count, patch * patch))
    for i in range(count):
        rng = stream_rng(seed, PATCHES, index + i)
        r = int(rng.integers(0, h - patch + 1))
        c = int(rng.integers(0, w - patch + 1))
        vec = img[r:r + patch, c:c + patch].reshape(-1)
        out[i] = vec - vec.mean()
    return out


def dct_sense(patches, Phi, D, noise_std: float = 0.0, seed: int = 0) -> Dataset:
    """DCT-domain compressed sensing of (noisy) patches.

    Targets are the DCT coefficients of the clean patches; measurements are
    ``Phi @ D @ (patch + noise)``. The returned operator is ``Phi``.
    """
    P = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    Phi, D = as_dense(Phi), as_dense(D)
    if Phi.shape[1] != D.shape[0] or D.shape[1] != P.shape[1]:
        raise DimensionError(f"Phi {Phi.shape}, D {D.shape}, patch length {P.shape[1]}")
    noisy = P.copy()
    if noise_std > 0:
        for i in range(len(P)):
            noisy[i] += noise_std * box_muller(stream_rng(seed, PATCH_NOISE, i), P.shape[1])
    X = P @ D.T
    Y = (noisy @ D.T) @ Phi.T
    supports = [np.flatnonzero(np.abs(x) > 1e-12) for x in X]
    return Dataset(Phi, Y, X, supports, None, "train", {"pipeline": "dct"})


def contaminate(x_clean, artifact, kappa: float) -> np.ndarray:
    x_clean = np.asarray(x_clean, dtype=np.float64)
    artifact = np.asarray(artifact, dtype=np.float64)
    if x_clean.shape != artifact.shape:
        raise DimensionError(f"signal {x_clean.shape} vs artifact {artifact.shape}")
    return x_clean + kappa * artifact


def snr_db(x_clean, artifact, kappa: float) -> float:
    """``10 log10(||x||^2 / ||kappa n||^2)`` of a contaminated signal."""
    num = float(np.sum(np.square(x_clean)))
    den = float(np.sum(np.square(kappa * np.asarray(artifact, dtype=np.float64))))
    return 10 * np.log10(num / den)


def kappa_for_snr(x_clean, artifact, snr: float) -> float:
    """Contamination weight giving the requested SNR in dB."""
    ratio = np.sum(np.square(x_clean)) / np.sum(np.square(artifact))
    return float(np.sqrt(ratio / 10 ** (snr / 10)))


# --- persistence --------------------------------------------------------------

_FORMAT = "pibinn-dataset"


def _write_f64(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype=_LE_F64).tofile(path)


def _read_f64(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape)) * 8
    try:
        size = path.stat().st_size
    except FileNotFoundError as exc:
        raise TruncatedDataError(f"{path} is missing") from exc
    if size < expected:
        raise TruncatedDataError(f"{path}: {size} bytes, expected {expected}")
    if size > expected:
        raise ShapeMismatchError(f"{path}: {size} bytes but manifest shape {shape} needs {expected}")
    return np.fromfile(path, dtype=_LE_F64).astype(np.float64).reshape(shape)


def save_dataset(ds: Dataset, path) -> Path:
    """Write ``manifest.json``, the operator binary, ``Y.bin``, ``X.bin`` and ``support.json``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    if isinstance(ds.A, BlockDiagOperator):
        sensing = {"kind": "block", "blocks_shape": list(ds.A.blocks.shape),
                   "repeat": ds.A.repeat, "file": "block.bin"}
        _write_f64(root / "block.bin", ds.A.blocks)
    else:
        sensing = {"kind": "dense", "shape": list(ds.A.shape), "file": "A.bin"}
        _write_f64(root / "A.bin", ds.A)
    _write_f64(root / "Y.bin", ds.Y)
    _write_f64(root / "X.bin", ds.X)
    (root / "support.json").write_text(json.dumps([s.tolist() for s in ds.supports]))
    manifest = {
        "format": _FORMAT,
        "version": 1,
        "split": ds.split,
        "n_samples": len(ds),
        "m": ds.Y.shape[1],
        "n": ds.X.shape[1],
        "sensing": sensing,
        "files": {"Y": "Y.bin", "X": "X.bin", "support": "support.json"},
        "spec": None if ds.spec is None else ds.spec.to_json(),
        "meta": ds.meta,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def load_dataset(path) -> Dataset:
    root = Path(path)
    try:
        man = json.loads((root / "manifest.json").read_text())
        if man.get("format") != _FORMAT:
            raise CorruptManifestError(f"{root}: not a dataset manifest")
        N, m, n = int(man["n_samples"]), int(man["m"]), int(man["n"])
        sensing, files = man["sensing"], man["files"]
        kind = sensing["kind"]
    except FileNotFoundError as exc:
        raise CorruptManifestError(f"{root}: manifest.json missing") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptManifestError(f"{root}: unreadable manifest ({exc})") from exc
    if kind == "dense":
        shape = tuple(sensing["shape"])
        if shape != (m, n):
            raise ShapeMismatchError(f"sensing shape {shape} conflicts with m={m}, n={n}")
        A = _read_f64(root / sensing["file"], shape)
    elif kind == "block":
        bshape, u = tuple(sensing["blocks_shape"]), int(sensing["repeat"])
        if len(bshape) != 3 or (bshape[1] * u, bshape[2] * u) != (m, n):
            raise ShapeMismatchError(f"block shape {bshape} x {u} conflicts with m={m}, n={n}")
        A = BlockDiagOperator(_read_f64(root / sensing["file"], bshape), u)
    else:
        raise CorruptManifestError(f"unknown sensing kind {kind!r}")
    Y = _read_f64(root / files["Y"], (N, m))
    X = _read_f64(root / files["X"], (N, n))
    try:
        supports = [np.asarray(s, dtype=np.int64) for s in
                    json.loads((root / files["support"]).read_text())]
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise CorruptManifestError(f"{root}: unreadable support list") from exc
    if len(supports) != N:
        raise ShapeMismatchError(f"{len(supports)} supports for {N} samples")
    spec = None if man.get("spec") is None else DatasetSpec.from_json(man["spec"])
    return Dataset(A, Y, X, supports, spec, man.get("split", "train"), man.get("meta", {}))
