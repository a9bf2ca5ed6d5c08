"""Trajectory files, absolute trajectory error and the multi-trial harness.

ATE here is the mean Euclidean distance between estimated and ground-truth
camera positions after a rigid (no scale) least-squares alignment, in cm.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DomainError, FormatError, ParseError
from .geometry import PoseSE3
from .representations import RepresentationConfig
from .simulator import Sequence, SequenceConfig, simulate_sequence
from .tracker import FrameRecord, Representation, SequenceResult, TrackerConfig, track_sequence

DEFAULT_MAX_DT_US = 5_000
LAMBDA_GRID = (10.0, 31.0, 100.0, 158.0, 251.0, 400.0)
SWEEP_HEADER = ("lambda_th", "mean_ate_cm", "em_fraction", "trials")

# Published mean ATE [cm] of the original system on real stereo-event datasets.
# Kept for reference only: reproducing them needs those datasets and a mapper.
REFERENCE_ATE_CM = {
    ("TS", "rpg_bin"): 3.4,
    ("EM2000", "rpg_box"): 5.3,
}


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered camera-to-world poses; timestamps in microseconds."""

    times: np.ndarray
    poses: tuple[PoseSE3, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.int64).reshape(-1)
        poses = tuple(self.poses)
        if len(t) != len(poses):
            raise DomainError("times and poses differ in length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise DomainError("trajectory timestamps must be strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.array([p.translation for p in self.poses])

    def transformed(self, T: PoseSE3) -> "Trajectory":
        """Apply ``T`` on the left of every pose (a change of world frame)."""
        return Trajectory(self.times, tuple(T @ p for p in self.poses))

    @classmethod
    def from_result(cls, result: SequenceResult) -> "Trajectory":
        return cls(result.times, tuple(result.poses_wc))

    @classmethod
    def read(cls, path: str | Path) -> "Trajectory":
        times, poses = [], []
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 8:
                    raise ParseError(f"expected 8 fields 't tx ty tz qx qy qz qw', got {len(parts)}", lineno)
                try:
                    vals = np.array([float(v) for v in parts])
                except ValueError as exc:
                    raise ParseError(str(exc), lineno) from None
                if not np.all(np.isfinite(vals)):
                    raise ParseError("non-finite value", lineno)
                q = vals[4:]
                if abs(np.linalg.norm(q) - 1.0) > 1e-3:
                    raise ParseError("quaternion is not unit length", lineno)
                times.append(vals[0])
                poses.append(PoseSE3.from_rt(Rotation.from_quat(q).as_matrix(), vals[1:4]))
        t_us = np.rint(np.asarray(times, dtype=float) * 1e6).astype(np.int64)
        if len(t_us) > 1 and np.any(np.diff(t_us) <= 0):
            raise FormatError(f"{path}: timestamps not strictly increasing")
        return cls(t_us, tuple(poses))

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("# t_sec tx ty tz qx qy qz qw\n")
            for t, pose in zip(self.times.tolist(), self.poses):
                q = Rotation.from_matrix(pose.rotation).as_quat()
                if q[3] < 0:
                    q = -q
                vals = " ".join(f"{v:.9f}" for v in (*pose.translation, *q))
                fh.write(f"{t // 1_000_000}.{t % 1_000_000:06d} {vals}\n")


@dataclass(frozen=True, eq=False)
class Association:
    est_positions: np.ndarray  # (M, 3)
    gt_positions: np.ndarray  # (M, 3)
    times: np.ndarray  # estimate timestamps of the pairs
    dropped: int

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True, eq=False)
class ATEReport:
    mean_cm: float
    errors_cm: np.ndarray
    matched: int
    alignment: PoseSE3
    dropped: int = 0


def associate(est: Trajectory, gt: Trajectory, max_dt: int = DEFAULT_MAX_DT_US) -> Association:
    """Pair each estimate with the nearest ground-truth sample within ``max_dt`` us."""
    if max_dt < 0:
        raise DomainError("max_dt must be non-negative")
    if len(gt) == 0 or len(est) == 0:
        raise DomainError("cannot associate an empty trajectory")
    idx = np.searchsorted(gt.times, est.times)
    left = np.clip(idx - 1, 0, len(gt) - 1)
    right = np.clip(idx, 0, len(gt) - 1)
    d_left = np.abs(est.times - gt.times[left])
    d_right = np.abs(gt.times[right] - est.times)
    nearest = np.where(d_right < d_left, right, left)
    dt = np.minimum(d_left, d_right)
    keep = dt <= max_dt
    n = int(keep.sum())
    if n < 2:
        raise DomainError(f"only {n} samples paired within {max_dt} us; at least 2 needed")
    return Association(
        est.positions[keep],
        gt.positions[nearest[keep]],
        est.times[keep],
        dropped=int(len(est) - n),
    )


def align_se3(pairs: Association | tuple[np.ndarray, np.ndarray]) -> PoseSE3:
    """Rigid transform ``T`` minimizing ``sum |gt - T est|^2`` (orthogonal Procrustes)."""
    if isinstance(pairs, Association):
        est, gt = pairs.est_positions, pairs.gt_positions
    else:
        est, gt = (np.asarray(a, dtype=float).reshape(-1, 3) for a in pairs)
    if np.array_equal(est, gt):
        # exact fixed point; the SVD route would leave rounding residue
        return PoseSE3.identity()
    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    S = (gt - mu_g).T @ (est - mu_e)
    U, _, Vt = np.linalg.svd(S)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    return PoseSE3.from_rt(R, mu_g - R @ mu_e)


def mean_ate_translation(pairs: Association, alignment: PoseSE3 | None = None) -> ATEReport:
    if alignment is None:
        alignment = align_se3(pairs)
    aligned = alignment @ pairs.est_positions
    err = np.linalg.norm(aligned - pairs.gt_positions, axis=1) * 100.0
    return ATEReport(float(err.mean()), err, len(pairs), alignment, pairs.dropped)


def ate(est: Trajectory, gt: Trajectory, max_dt: int = DEFAULT_MAX_DT_US) -> ATEReport:
    return mean_ate_translation(associate(est, gt, max_dt))


@functools.lru_cache(maxsize=4)
def cached_sequence(cfg: SequenceConfig) -> Sequence:
    """Simulated sequences are deterministic in their config, so share them."""
    return simulate_sequence(cfg)


def ground_truth_trajectory(seq: Sequence) -> Trajectory:
    return Trajectory(seq.ground_truth.times, tuple(seq.ground_truth.poses_wc))


@dataclass
class TrialsReport:
    reports: list[ATEReport]
    results: list[SequenceResult] = field(repr=False, default_factory=list)

    @property
    def mean_ate_cm(self) -> float:
        return float(np.mean([r.mean_cm for r in self.reports]))

    @property
    def em_fraction(self) -> float:
        return float(np.mean([r.em_fraction for r in self.results])) if self.results else 0.0

    @property
    def records(self) -> list[FrameRecord]:
        return [rec for res in self.results for rec in res.records]


def run_trials(
    seq_cfg: SequenceConfig,
    tracker_cfg: TrackerConfig | None = None,
    trials: int = 10,
    seeds=None,
    rep_cfg: RepresentationConfig | None = None,
    perturbation: tuple[float, float] = (0.0, 0.0),
    max_dt: int = DEFAULT_MAX_DT_US,
    sequence: Sequence | None = None,
) -> TrialsReport:
    """Track the sequence ``trials`` times and report ATE per trial.

    Trials differ only through the seeded initial-guess perturbation, so with
    the default (no perturbation) every trial is identical.
    """
    if trials < 1:
        raise DomainError("trials must be at least 1")
    seeds = list(range(trials)) if seeds is None else list(seeds)
    if len(seeds) != trials:
        raise DomainError("need one seed per trial")
    seq = sequence if sequence is not None else cached_sequence(seq_cfg)
    gt = ground_truth_trajectory(seq)
    reports, results = [], []
    for seed in seeds:
        res = track_sequence(
            seq.events, seq.map_points, seq.camera, tracker_cfg, rep_cfg,
            initial_pose_wc=seq.gt_pose(0), perturbation=perturbation, seed=seed,
        )
        results.append(res)
        reports.append(ate(Trajectory.from_result(res), gt, max_dt))
    return TrialsReport(reports, results)


@dataclass(frozen=True)
class SweepRow:
    lambda_th: float
    mean_ate_cm: float
    em_fraction: float
    trials: int

    def csv_row(self) -> list[str]:
        return [f"{self.lambda_th:g}", f"{self.mean_ate_cm:.6f}", f"{self.em_fraction:.6f}", str(self.trials)]


def lambda_sweep(
    seq_cfg: SequenceConfig,
    grid=LAMBDA_GRID,
    tracker_cfg: TrackerConfig | None = None,
    trials: int = 1,
    seeds=None,
    **kwargs,
) -> list[SweepRow]:
    """One TSEM trial set per threshold in ``grid``."""
    base = tracker_cfg or TrackerConfig()
    rows = []
    for lam in grid:
        cfg = replace(base, lambda_th=float(lam), representation=Representation.TSEM)
        rep = run_trials(seq_cfg, cfg, trials, seeds, **kwargs)
        rows.append(SweepRow(float(lam), rep.mean_ate_cm, rep.em_fraction, trials))
    return rows


def write_sweep_csv(rows: list[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for row in rows:
            w.writerow(row.csv_row())


def calibrate_lambda_threshold(lambdas, fraction: float = 0.01) -> float:
    """Threshold as a fixed fraction of the median degeneracy factor on motion.

    Absolute degeneracy factors scale with frame contrast, point count and
    focal length, so a threshold tuned on one rig does not carry over. The
    reference ``lambdas`` should come from TS tracking of a sequence with
    steady motion.
    """
    if isinstance(lambdas, SequenceResult):
        lambdas = [r.lambda_ for r in lambdas.records if not r.failed]
    lam = np.asarray(lambdas, dtype=float)
    lam = lam[np.isfinite(lam) & (lam > 0)]
    if len(lam) == 0:
        raise DomainError("no positive degeneracy factors to calibrate from")
    if not 0 < fraction <= 1:
        raise DomainError("fraction must be in (0, 1]")
    return float(fraction * np.median(lam))
