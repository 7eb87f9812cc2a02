"""Deterministic noise/sample couplings collected from a teacher, and their file format.

File layout::

    RDPAIR1\\n
    key=value lines (dim, count, schedule, teacher_steps, seed, spacing)
    \\n
    little-endian float64 records  eps_0 x0_0 eps_1 x0_1 ...
"""

from dataclasses import dataclass

import numpy as np

from .net import FormatError, _read_header
from .solver import UsageError, make_grid, sample

PAIR_MAGIC = b"RDPAIR1\n"


class CollectionError(RuntimeError):
    """Too many teacher solves produced non-finite samples."""


@dataclass
class PairDataset:
    eps: np.ndarray
    x0_hat: np.ndarray
    schedule_id: str
    teacher_steps: int
    seed: int
    spacing: str = "lambda"
    rejected: int = 0

    def __post_init__(self):
        self.eps = np.atleast_2d(np.asarray(self.eps, dtype=np.float64))
        self.x0_hat = np.atleast_2d(np.asarray(self.x0_hat, dtype=np.float64))
        if self.eps.shape != self.x0_hat.shape:
            raise ValueError("eps and x0_hat must have the same shape")

    @property
    def dim(self):
        return self.eps.shape[1]

    def __len__(self):
        return self.eps.shape[0]

    def header(self):
        return {
            "dim": self.dim,
            "count": len(self),
            "schedule": self.schedule_id,
            "teacher_steps": self.teacher_steps,
            "seed": self.seed,
            "spacing": self.spacing,
        }


def collect_pairs(teacher, schedule, n, steps=64, seed=0, spacing="lambda", dim=2, chunk=8192):
    """Sample ``eps_i ~ N(0, I)`` and solve the teacher's ODE to get ``x0_hat_i``.

    Records whose endpoint is not finite are dropped and counted; more than
    1% rejections raises :class:`CollectionError`.
    """
    if n < 1 or steps < 1:
        raise UsageError("need n >= 1 and steps >= 1")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n, dim))
    grid = make_grid(schedule, steps, spacing)
    out = np.empty_like(eps)
    for lo in range(0, n, chunk):
        with np.errstate(all="ignore"):
            out[lo : lo + chunk] = sample(teacher, eps[lo : lo + chunk], grid, schedule,
                                          record=False).final
    ok = np.all(np.isfinite(out), axis=1)
    rejected = int(n - ok.sum())
    if rejected > 0.01 * n:
        raise CollectionError(f"{rejected} of {n} teacher solves were non-finite")
    return PairDataset(eps[ok], out[ok], schedule.id, steps, seed, spacing, rejected)


def save_pairs(dataset, path):
    header = "".join(f"{k}={v}\n" for k, v in dataset.header().items())
    payload = np.empty((len(dataset), 2, dataset.dim), dtype="<f8")
    payload[:, 0] = dataset.eps
    payload[:, 1] = dataset.x0_hat
    with open(path, "wb") as f:
        f.write(PAIR_MAGIC)
        f.write(header.encode("utf-8"))
        f.write(b"\n")
        f.write(payload.tobytes())


def load_pairs(path):
    with open(path, "rb") as f:
        data = f.read()
    header, off = _read_header(data, PAIR_MAGIC)
    try:
        dim = int(header["dim"])
        count = int(header["count"])
        steps = int(header["teacher_steps"])
        seed = int(header["seed"])
        sched = header["schedule"]
    except KeyError as e:
        raise FormatError(f"pair header missing {e.args[0]!r}") from None
    except ValueError as e:
        raise FormatError(f"bad pair header value: {e}") from None
    if dim < 1 or count < 0:
        raise FormatError(f"invalid dim={dim} / count={count}")
    rec = 2 * dim * 8
    payload = data[off:]
    if len(payload) % rec:
        raise FormatError(
            f"payload at offset {off} is {len(payload)} bytes, not a multiple of the "
            f"{rec}-byte record size for dim={dim}"
        )
    got = len(payload) // rec
    if got != count:
        raise FormatError(f"header says {count} records but file holds {got} (payload offset {off})")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(count, 2, dim)
    return PairDataset(arr[:, 0].copy(), arr[:, 1].copy(), sched, steps, seed,
                       header.get("spacing", "lambda"))
