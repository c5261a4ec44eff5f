"""Dense row-major arrays, seeded randomness, and the PDT1 tensor file format.

Tensors are plain numpy arrays in C (row-major) order. Double precision is
used on every verification path; training may run in single precision, chosen
once per model. Randomness is never ambient: every stochastic operation takes
an explicit Rng, and independent streams are derived with mix_seed.
"""

import struct

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

PDT1_MAGIC = b"PDT1"


def _splitmix64(state: int) -> int:
    # Finalizer from the splitmix64 generator; full-period 64-bit mixer.
    z = (state + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def mix_seed(seed: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from a root seed and integer keys.

    Deterministic and platform-independent; used to split one run seed into
    per-epoch, per-sample, and per-candidate streams.
    """
    state = _splitmix64(seed & MASK64)
    for k in keys:
        state = _splitmix64(state ^ (k & MASK64))
    return state


class Rng:
    """Deterministic random stream: numpy PCG64 under an explicit 64-bit seed.

    Identical seeds give identical streams on every platform. An Rng is
    single-owner; derive independent streams with spawn() instead of sharing.
    """

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, *keys: int) -> "Rng":
        return Rng(mix_seed(self.seed, *keys))

    def normal(self, shape, sigma: float, dtype=np.float64) -> np.ndarray:
        out = self._gen.normal(0.0, sigma, size=shape)
        return np.asarray(out, dtype=dtype)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in the half-open range [low, high)."""
        return int(self._gen.integers(low, high))

    def random(self) -> float:
        return float(self._gen.random())

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def tensor_new(shape, fill: float = 0.0, dtype=np.float64) -> np.ndarray:
    """Row-major tensor of the given shape with every element == fill.

    An empty shape denotes a scalar. Raises ValueError on negative extents or
    an element count beyond addressable size.
    """
    shape = tuple(int(s) for s in shape)
    total = 1
    for s in shape:
        if s < 0:
            raise ValueError(f"negative extent {s} in shape {shape}")
        total *= s
        if total > 2**62:
            raise ValueError(f"shape {shape} overflows addressable size")
    return np.full(shape, fill, dtype=dtype, order="C")


def gaussian_init(shape, sigma: float, rng: Rng, dtype=np.float64) -> np.ndarray:
    """Tensor with i.i.d. Normal(0, sigma^2) elements drawn from rng."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    tensor_new(shape)  # validates extents
    return rng.normal(tuple(int(s) for s in shape), sigma, dtype=dtype)


def tensor_variance(t: np.ndarray) -> float:
    """Population variance: mean squared deviation from the mean (divide by N)."""
    t = np.asarray(t)
    if t.size == 0:
        raise ValueError("variance of an empty tensor is undefined")
    return float(np.var(t, ddof=0))


def check_finite(t: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{what} contains non-finite elements")
    return t


def write_pdt(path, t: np.ndarray) -> None:
    """Write a tensor as PDT1: magic, u32 LE rank, u32 LE extents, f32 LE data.

    Data is row-major (last axis fastest). Writing is byte-deterministic for
    equal inputs.
    """
    t = np.asarray(t)
    with open(path, "wb") as f:
        f.write(PDT1_MAGIC)
        f.write(struct.pack("<I", t.ndim))
        for s in t.shape:
            f.write(struct.pack("<I", s))
        f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def read_pdt(path) -> np.ndarray:
    """Read a PDT1 file; returns a float32 array (cast at the call site if needed)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != PDT1_MAGIC:
            raise ValueError(f"{path}: not a PDT1 file (magic {magic!r})")
        (rank,) = struct.unpack("<I", f.read(4))
        shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(rank))
        count = 1
        for s in shape:
            count *= s
        raw = f.read(4 * count)
        if len(raw) != 4 * count:
            raise ValueError(f"{path}: truncated PDT1 payload")
        data = np.frombuffer(raw, dtype="<f4", count=count)
        return data.reshape(shape).astype(np.float32)
