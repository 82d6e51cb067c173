"""Synthetic scene generation: sparse angular channels, pilots, measurements.

Everything here is pure given (config, seed).  Channels are jointly
row-sparse across receive antennas within a frame, adjacent frames share
most of their support, and all frames share a common core support.
Measurements are taken through a sensing matrix built from the pilot and
the transmit-side unitary transform, then lifted to real arithmetic for
the networks.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ConfigError, SystemConfig


@dataclasses.dataclass
class SupportSequence:
    """Per-frame row supports plus their across-frame intersection."""

    supports: list  # list of sorted int arrays, one per frame
    common: np.ndarray

    @property
    def union_size(self) -> int:
        u = set()
        for s in self.supports:
            u.update(int(j) for j in s)
        return len(u)


@dataclasses.dataclass
class MultiFrameChannel:
    frames: list  # L complex (M, N) matrices
    supports: SupportSequence
    concat: np.ndarray  # complex (M, N*L)


@dataclasses.dataclass
class PilotMatrix:
    X: np.ndarray     # complex (M, T)
    U: np.ndarray     # complex (N, N) unitary
    V: np.ndarray     # complex (M, M) unitary
    Phi: np.ndarray   # complex (T, M) sensing matrix, X^H V


@dataclasses.dataclass
class MeasurementSet:
    frames: list            # L complex (T, N) observations
    concat: np.ndarray      # complex (T, N*L)
    noise_var: float        # per-real-component noise variance


@dataclasses.dataclass
class RealLifted:
    """Real representation of a complex matrix (stack or block form)."""

    mat: np.ndarray
    origin_rows: int
    mode: str  # "stack" | "block"


@dataclasses.dataclass
class DatasetSample:
    lifted_obs: RealLifted      # (2T, N*L)
    lifted_truth: RealLifted    # (2M, N*L)
    per_frame_obs: list         # L lifted (2T, N) observations
    supports: SupportSequence
    sample_seed: int


@dataclasses.dataclass
class Dataset:
    config: SystemConfig
    base_seed: int
    pilot: PilotMatrix
    samples: list

    @property
    def phi_lifted(self) -> np.ndarray:
        return block_lift(self.pilot.Phi)

    def arrays(self, start: int = 0, stop: int | None = None):
        """Stack observation / truth tensors into (K, 2T, NL) and (K, 2M, NL)."""
        subset = self.samples[start:stop]
        obs = np.stack([s.lifted_obs.mat for s in subset])
        truth = np.stack([s.lifted_truth.mat for s in subset])
        return obs, truth


# ---------------------------------------------------------------------------
# unitary transforms and real lifting
# ---------------------------------------------------------------------------

def make_unitary_dft(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries exp(-2*pi*i*k*l/n)/sqrt(n)."""
    if n < 1:
        raise ValueError(f"matrix dimension must be >= 1, got {n}")
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / math.sqrt(n)


def stack_lift(a: np.ndarray) -> np.ndarray:
    """[Re; Im] stacking of a complex (p, q) matrix into a real (2p, q) one."""
    a = np.asarray(a)
    return np.concatenate([a.real, a.imag], axis=0).astype(np.float64)


def block_lift(a: np.ndarray) -> np.ndarray:
    """[[Re, -Im], [Im, Re]] block lifting of a complex (p, q) matrix."""
    a = np.asarray(a)
    top = np.concatenate([a.real, -a.imag], axis=1)
    bot = np.concatenate([a.imag, a.real], axis=1)
    return np.concatenate([top, bot], axis=0).astype(np.float64)


def real_lift(a: np.ndarray, mode: str) -> RealLifted:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if mode == "stack":
        return RealLifted(mat=stack_lift(a), origin_rows=a.shape[0], mode="stack")
    if mode == "block":
        return RealLifted(mat=block_lift(a), origin_rows=a.shape[0], mode="block")
    raise ValueError(f"unknown lifting mode {mode!r}")


def complex_unlift(lifted: RealLifted | np.ndarray, mode: str = "stack") -> np.ndarray:
    """Invert :func:`real_lift`; round-trips are bit-exact."""
    if isinstance(lifted, RealLifted):
        mat, mode = lifted.mat, lifted.mode
    else:
        mat = np.asarray(lifted)
    if mode == "stack":
        if mat.shape[0] % 2 != 0:
            raise ValueError(f"stacked matrix must have an even row count, got {mat.shape[0]}")
        p = mat.shape[0] // 2
        return mat[:p] + 1j * mat[p:]
    if mode == "block":
        if mat.shape[0] % 2 != 0 or mat.shape[1] % 2 != 0:
            raise ValueError(f"block-lifted matrix must have even dimensions, got {mat.shape}")
        p, q = mat.shape[0] // 2, mat.shape[1] // 2
        return mat[:p, :q] + 1j * mat[p:, :q]
    raise ValueError(f"unknown lifting mode {mode!r}")


def angular_to_physical(h_tilde: np.ndarray, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Map an angular-domain channel back to the physical antenna domain."""
    h_tilde = np.asarray(h_tilde)
    if h_tilde.shape != (U.shape[0], V.shape[0]):
        raise ValueError(f"channel shape {h_tilde.shape} does not match transforms "
                         f"({U.shape[0]}, {V.shape[0]})")
    return U @ h_tilde @ V.conj().T


def physical_to_angular(h: np.ndarray, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    return U.conj().T @ h @ V


# ---------------------------------------------------------------------------
# random draws
# ---------------------------------------------------------------------------

def gen_support_sequence(cfg: SystemConfig, rng: np.random.Generator,
                         size_range: tuple[int, int] | None = None,
                         share_range: tuple[int, int] | None = None) -> SupportSequence:
    """Draw per-frame supports with the configured overlap law.

    Frame sizes are uniform on ``size_range`` (default s_bar-3 .. s_bar-1)
    and the overlap with the previous frame uniform on ``share_range``
    (default s_c .. s_c+1), clipped to the two frame sizes when they bind.
    Shared indices are drawn from the previous support, fresh indices
    uniformly from its complement.
    """
    size_lo, size_hi = size_range if size_range is not None else (cfg.s_bar - 3, cfg.s_bar - 1)
    share_lo, share_hi = share_range if share_range is not None else (cfg.s_c, cfg.s_c + 1)
    if size_lo < 1 or size_hi > cfg.M - 1 or size_lo > size_hi:
        raise ConfigError(f"infeasible support size law ({size_lo}, {size_hi}) for M={cfg.M}")
    if share_lo < 0 or share_lo > share_hi:
        raise ConfigError(f"infeasible overlap law ({share_lo}, {share_hi})")
    if share_lo > size_lo:
        raise ConfigError(f"overlap lower bound {share_lo} exceeds the smallest frame size {size_lo}")

    supports = []
    sizes = rng.integers(size_lo, size_hi + 1, size=cfg.L)
    first = np.sort(rng.choice(cfg.M, size=int(sizes[0]), replace=False))
    supports.append(first)
    prev_mask = np.zeros(cfg.M, dtype=np.bool_)
    prev_mask[first] = True
    for i in range(1, cfg.L):
        n_i = int(sizes[i])
        prev = supports[i - 1]
        shared_count = int(rng.integers(share_lo, share_hi + 1))
        shared_count = min(shared_count, n_i, len(prev))
        shared = rng.choice(prev, size=shared_count, replace=False)
        fresh_pool = np.flatnonzero(~prev_mask)
        fresh = rng.choice(fresh_pool, size=n_i - shared_count, replace=False)
        cur = np.sort(np.concatenate([shared, fresh]).astype(np.int64))
        supports.append(cur)
        prev_mask[:] = False
        prev_mask[cur] = True

    common = supports[0]
    for s in supports[1:]:
        common = np.intersect1d(common, s, assume_unique=True)
    return SupportSequence(supports=supports, common=common)


def gen_channel(cfg: SystemConfig, supports: SupportSequence,
                rng: np.random.Generator) -> MultiFrameChannel:
    """Fill the supported rows with unit-variance circular Gaussian entries."""
    frames = []
    for s in supports.supports:
        frame = np.zeros((cfg.M, cfg.N), dtype=np.complex128)
        k = len(s)
        if k:
            vals = (rng.standard_normal((k, cfg.N)) + 1j * rng.standard_normal((k, cfg.N)))
            frame[s] = vals * math.sqrt(0.5)
        frames.append(frame)
    concat = np.concatenate(frames, axis=1) if frames else np.zeros((cfg.M, 0), dtype=np.complex128)
    return MultiFrameChannel(frames=frames, supports=supports, concat=concat)


def gen_pilot(cfg: SystemConfig, rng: np.random.Generator) -> PilotMatrix:
    """Draw the pilot matrix and build the sensing matrix through the DFT."""
    bound = math.sqrt(1.0 / cfg.M)
    if cfg.complex_pilot:
        X = (rng.uniform(-bound, bound, size=(cfg.M, cfg.T))
             + 1j * rng.uniform(-bound, bound, size=(cfg.M, cfg.T))).astype(np.complex128)
    else:
        X = rng.uniform(-bound, bound, size=(cfg.M, cfg.T)).astype(np.complex128)
    if cfg.normalize_pilot:
        trace = float(np.real(np.trace(X.conj().T @ X)))
        X = X * math.sqrt(cfg.T / trace)
    U = make_unitary_dft(cfg.N)
    V = make_unitary_dft(cfg.M)
    Phi = X.conj().T @ V
    return PilotMatrix(X=X, U=U, V=V, Phi=Phi)


def measure(channel: MultiFrameChannel, pilot: PilotMatrix, cfg: SystemConfig,
            rng: np.random.Generator, noise_var: float | None = None) -> MeasurementSet:
    """Observe every frame through the sensing matrix and add calibrated noise.

    The noise variance is set per sample so that the average per-entry
    power of the clean observations over the whole multi-frame block sits
    ``snr_db`` above the per-complex-entry noise variance; an explicit
    ``noise_var`` (per complex entry) bypasses that calibration.
    """
    clean = [pilot.Phi @ f for f in channel.frames]
    total_power = sum(float(np.sum(np.abs(z) ** 2)) for z in clean)
    n_entries = cfg.T * cfg.N * cfg.L
    if noise_var is not None:
        noise_var_complex = float(noise_var)
    elif cfg.noiseless:
        noise_var_complex = 0.0
    else:
        sig_power = total_power / n_entries
        noise_var_complex = sig_power * 10.0 ** (-cfg.snr_db / 10.0)
    frames = []
    for z in clean:
        if noise_var_complex > 0.0:
            w = (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))
            z = z + w * math.sqrt(noise_var_complex / 2.0)
        frames.append(z)
    concat = np.concatenate(frames, axis=1)
    return MeasurementSet(frames=frames, concat=concat, noise_var=noise_var_complex / 2.0)


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def sample_seed_for(base_seed: int, index: int) -> int:
    """Deterministic 64-bit per-sample seed; independent of generation order."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index) + 1])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def pilot_seed_for(base_seed: int) -> int:
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, 0])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def gen_sample(cfg: SystemConfig, pilot: PilotMatrix, sample_seed: int) -> DatasetSample:
    """Generate one sample from its seed alone (bit-reproducible)."""
    rng = np.random.default_rng(sample_seed)
    supports = gen_support_sequence(cfg, rng)
    channel = gen_channel(cfg, supports, rng)
    obs = measure(channel, pilot, cfg, rng)
    lifted_obs = real_lift(obs.concat, "stack")
    lifted_truth = real_lift(channel.concat, "stack")
    per_frame = [real_lift(z, "stack") for z in obs.frames]
    return DatasetSample(lifted_obs=lifted_obs, lifted_truth=lifted_truth,
                         per_frame_obs=per_frame, supports=supports,
                         sample_seed=int(sample_seed))


def gen_dataset(cfg: SystemConfig, count: int, base_seed: int, threads: int = 1) -> Dataset:
    """Generate ``count`` samples sharing one pilot matrix.

    Per-sample seeds are derived from (base_seed, index), so the result is
    bit-identical for any ``threads`` value and any generation order.
    """
    if count < 1:
        raise ConfigError(f"dataset size must be >= 1, got {count}")
    pilot = gen_pilot(cfg, np.random.default_rng(pilot_seed_for(base_seed)))
    seeds = [sample_seed_for(base_seed, i) for i in range(count)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(lambda s: gen_sample(cfg, pilot, s), seeds))
    else:
        samples = [gen_sample(cfg, pilot, s) for s in seeds]
    return Dataset(config=cfg, base_seed=int(base_seed), pilot=pilot, samples=samples)
