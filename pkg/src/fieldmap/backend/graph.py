"""Factor graph over camera poses and 3D landmarks, solved by Levenberg-Marquardt.

Landmarks are eliminated with a Schur complement so the damped system that
is actually factorised is only ``6 * free_poses`` wide.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp

from fieldmap.backend.factors import (
    OdometryFactor,
    PriorFactor,
    StereoFactor,
    numeric_pose_jacobian,
    odometry_residual,
    prior_residual,
    retract,
    stereo_jacobians,
    stereo_residuals,
)
from fieldmap.core.se3 import PoseSE3
from fieldmap.core.types import StereoCamera
from fieldmap.errors import BackendFailure

LAMBDA_MAX = 1e12


@dataclass
class FactorGraph:
    camera: StereoCamera
    poses: dict = field(default_factory=dict)  # frame_id -> PoseSE3
    landmarks: dict = field(default_factory=dict)  # landmark_id -> (3,) world point
    stereo: list = field(default_factory=list)
    odometry: list = field(default_factory=list)
    priors: list = field(default_factory=list)

    def add_pose(self, frame_id: int, pose: PoseSE3) -> None:
        self.poses[frame_id] = pose

    def add_landmark(self, landmark_id: int, position) -> None:
        self.landmarks[landmark_id] = np.asarray(position, dtype=float).copy()

    def add_factor(self, factor) -> None:
        if isinstance(factor, StereoFactor):
            if factor.pose not in self.poses or factor.landmark not in self.landmarks:
                raise KeyError("stereo factor references a missing variable")
            self.stereo.append(factor)
        elif isinstance(factor, OdometryFactor):
            if factor.pose_a not in self.poses or factor.pose_b not in self.poses:
                raise KeyError("odometry factor references a missing pose")
            self.odometry.append(factor)
        elif isinstance(factor, PriorFactor):
            if factor.pose not in self.poses:
                raise KeyError("prior factor references a missing pose")
            self.priors.append(factor)
        else:
            raise TypeError(f"unknown factor type {type(factor).__name__}")

    @property
    def factor_count(self) -> int:
        return len(self.stereo) + len(self.odometry) + len(self.priors)

    def copy(self) -> "FactorGraph":
        return FactorGraph(
            self.camera,
            dict(self.poses),
            {k: v.copy() for k, v in self.landmarks.items()},
            list(self.stereo),
            list(self.odometry),
            list(self.priors),
        )

    def stereo_residuals(self) -> np.ndarray:
        """Unwhitened (N, 3) reprojection residuals in factor order."""
        if not self.stereo:
            return np.zeros((0, 3))
        R = np.stack([self.poses[f.pose].R for f in self.stereo])
        t = np.stack([self.poses[f.pose].t for f in self.stereo])
        X = np.stack([self.landmarks[f.landmark] for f in self.stereo])
        meas = np.stack([f.measurement() for f in self.stereo])
        hr = np.array([f.has_right for f in self.stereo])
        return stereo_residuals(R, t, X, meas, hr, self.camera)[0]

    def total_cost(self, huber_k: Optional[float] = None) -> float:
        prob = _Problem(self, None, None, huber_k)
        return prob.cost(*prob.state())


@dataclass
class OptimizeResult:
    initial_cost: float
    final_cost: float
    iterations: int
    accepted_costs: list
    converged: bool


def _robust(sq: np.ndarray, k: Optional[float]):
    """Huber cost and IRLS weight on whitened squared norms."""
    if k is None:
        return sq, np.ones_like(sq)
    s = np.sqrt(sq)
    inlier = s <= k
    cost = np.where(inlier, sq, 2 * k * s - k * k)
    weight = np.where(inlier, 1.0, k / np.maximum(s, 1e-300))
    return cost, weight


class _Problem:
    """Flattened view of the graph restricted to the free variables."""

    def __init__(self, graph: FactorGraph, free_poses, free_landmarks, huber_k):
        self.graph = graph
        self.huber_k = huber_k
        pose_ids = sorted(graph.poses) if free_poses is None else sorted(set(free_poses) & set(graph.poses))
        self.pose_ids = pose_ids
        self.pose_col = {pid: i for i, pid in enumerate(pose_ids)}
        if free_landmarks is None:
            if free_poses is None:
                lm_ids = sorted(graph.landmarks)
            else:
                lm_ids = sorted({f.landmark for f in graph.stereo if f.pose in self.pose_col})
        else:
            lm_ids = sorted(set(free_landmarks) & set(graph.landmarks))
        self.lm_ids = lm_ids
        self.lm_col = {lid: i for i, lid in enumerate(lm_ids)}

        active = [f for f in graph.stereo if f.pose in self.pose_col or f.landmark in self.lm_col]
        self.obs_pose = np.array([self.pose_col.get(f.pose, -1) for f in active], dtype=int)
        self.obs_lm = np.array([self.lm_col.get(f.landmark, -1) for f in active], dtype=int)
        self.obs_pose_id = [f.pose for f in active]
        self.obs_lm_id = [f.landmark for f in active]
        self.meas = np.array([f.measurement() for f in active]).reshape(-1, 3)
        self.has_right = np.array([f.has_right for f in active], dtype=bool)
        self.sigma = np.array([f.sigma for f in active], dtype=float)
        self.odometry = [f for f in graph.odometry if f.pose_a in self.pose_col or f.pose_b in self.pose_col]
        self.priors = [f for f in graph.priors if f.pose in self.pose_col]

    def state(self):
        Rs = {pid: p.R for pid, p in self.graph.poses.items()}
        ts = {pid: p.t for pid, p in self.graph.poses.items()}
        Xs = dict(self.graph.landmarks)
        return Rs, ts, Xs

    def _stereo(self, Rs, ts, Xs):
        if len(self.meas) == 0:
            return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3))
        R = np.stack([Rs[p] for p in self.obs_pose_id])
        t = np.stack([ts[p] for p in self.obs_pose_id])
        X = np.stack([Xs[l] for l in self.obs_lm_id])
        res, p = stereo_residuals(R, t, X, self.meas, self.has_right, self.graph.camera)
        return res / self.sigma[:, None], p, R, X

    def _pose_factor_terms(self, Rs, ts):
        """Whitened residuals of odometry and prior factors with their pose keys."""
        terms = []
        for f in self.odometry:
            terms.append(((f.pose_a, f.pose_b), odometry_residual(Rs[f.pose_a], ts[f.pose_a],
                                                                   Rs[f.pose_b], ts[f.pose_b], f), f))
        for f in self.priors:
            terms.append(((f.pose,), prior_residual(Rs[f.pose], ts[f.pose], f), f))
        return terms

    def cost(self, Rs, ts, Xs) -> float:
        e, p, _, _ = self._stereo(Rs, ts, Xs)
        if len(p) and np.any(p[:, 2] <= 0):
            return np.inf
        sc, _ = _robust((e**2).sum(axis=1), self.huber_k)
        total = float(sc.sum())
        for _, r, _ in self._pose_factor_terms(Rs, ts):
            total += float(r @ r)
        return total

    def normal_equations(self, Rs, ts, Xs):
        n_p, n_l = len(self.pose_ids), len(self.lm_ids)
        Hpp = np.zeros((6 * n_p, 6 * n_p))
        gp = np.zeros(6 * n_p)
        Hll = np.zeros((n_l, 3, 3))
        gl = np.zeros((n_l, 3))
        Hpl = sp.csr_matrix((6 * n_p, 3 * n_l))

        e, p, R, _ = self._stereo(Rs, ts, Xs)
        if len(e):
            _, w = _robust((e**2).sum(axis=1), self.huber_k)
            Jp, Jl = stereo_jacobians(R, p, self.has_right, self.graph.camera)
            Jp = Jp / self.sigma[:, None, None]
            Jl = Jl / self.sigma[:, None, None]
            WJp = Jp * w[:, None, None]
            WJl = Jl * w[:, None, None]
            fp = self.obs_pose >= 0
            fl = self.obs_lm >= 0

            # pose-pose diagonal blocks
            blocks = np.einsum("nki,nkj->nij", WJp[fp], Jp[fp])
            grads = np.einsum("nki,nk->ni", WJp[fp], e[fp])
            diag = np.zeros((n_p, 6, 6))
            np.add.at(diag, self.obs_pose[fp], blocks)
            for c in range(n_p):
                Hpp[6 * c:6 * c + 6, 6 * c:6 * c + 6] += diag[c]
            np.add.at(gp.reshape(-1, 6), self.obs_pose[fp], grads)

            np.add.at(Hll, self.obs_lm[fl], np.einsum("nki,nkj->nij", WJl[fl], Jl[fl]))
            np.add.at(gl, self.obs_lm[fl], np.einsum("nki,nk->ni", WJl[fl], e[fl]))

            both = fp & fl
            if np.any(both):
                cross = np.einsum("nki,nkj->nij", WJp[both], Jl[both])  # (n, 6, 3)
                rows = 6 * self.obs_pose[both][:, None, None] + np.arange(6)[None, :, None]
                cols = 3 * self.obs_lm[both][:, None, None] + np.arange(3)[None, None, :]
                rows, cols = np.broadcast_arrays(rows, cols)
                Hpl = sp.csr_matrix((cross.ravel(), (rows.ravel(), cols.ravel())),
                                    shape=(6 * n_p, 3 * n_l))

        for keys, r, f in self._pose_factor_terms(Rs, ts):
            J = {}
            for key in keys:
                if key not in self.pose_col:
                    continue

                def fn(Rk, tk, key=key, f=f):
                    Rs2, ts2 = dict(Rs), dict(ts)
                    Rs2[key], ts2[key] = Rk, tk
                    if isinstance(f, OdometryFactor):
                        return odometry_residual(Rs2[f.pose_a], ts2[f.pose_a], Rs2[f.pose_b], ts2[f.pose_b], f)
                    return prior_residual(Rs2[f.pose], ts2[f.pose], f)

                J[key] = numeric_pose_jacobian(fn, Rs[key], ts[key])
            for ka, Ja in J.items():
                ca = self.pose_col[ka]
                gp[6 * ca:6 * ca + 6] += Ja.T @ r
                for kb, Jb in J.items():
                    cb = self.pose_col[kb]
                    Hpp[6 * ca:6 * ca + 6, 6 * cb:6 * cb + 6] += Ja.T @ Jb
        return Hpp, gp, Hll, gl, Hpl

    def solve(self, system, lam: float):
        """Damped step via the landmark Schur complement; None if not positive definite."""
        Hpp, gp, Hll, gl, Hpl = system
        n_l = len(Hll)
        Hll_d = Hll.copy()
        idx = np.arange(3)
        Hll_d[:, idx, idx] *= 1.0 + lam
        Hll_d[:, idx, idx] += 1e-12
        try:
            Hll_inv = np.linalg.inv(Hll_d) if n_l else Hll_d
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(Hll_inv)):
            return None
        if len(gp):
            Hpp_d = Hpp.copy()
            Hpp_d[np.diag_indices_from(Hpp_d)] *= 1.0 + lam
            Hpp_d[np.diag_indices_from(Hpp_d)] += 1e-12
            if n_l:
                Dinv = sp.bsr_matrix((Hll_inv, np.arange(n_l), np.arange(n_l + 1)),
                                     shape=(3 * n_l, 3 * n_l)).tocsr()
                HplDinv = Hpl @ Dinv
                S = Hpp_d - (HplDinv @ Hpl.T).toarray()
                b = -(gp - HplDinv @ gl.ravel())
            else:
                S, b = Hpp_d, -gp
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                return None
            dp = np.linalg.solve(L.T, np.linalg.solve(L, b))
        else:
            dp = np.zeros(0)
        if n_l:
            rhs = gl.ravel() + (Hpl.T @ dp if len(dp) else 0.0)
            dl = -np.einsum("nij,nj->ni", Hll_inv, rhs.reshape(-1, 3))
        else:
            dl = np.zeros((0, 3))
        return dp.reshape(-1, 6), dl

    def apply(self, Rs, ts, Xs, dp, dl):
        Rs, ts, Xs = dict(Rs), dict(ts), dict(Xs)
        for pid, xi in zip(self.pose_ids, dp):
            Rs[pid], ts[pid] = retract(Rs[pid], ts[pid], xi)
        for lid, d in zip(self.lm_ids, dl):
            Xs[lid] = Xs[lid] + d
        return Rs, ts, Xs


def optimize(graph: FactorGraph, max_iters: int = 10, lambda_init: float = 1e-3, tol: float = 1e-9,
             huber_k: Optional[float] = None, free_poses: Optional[Iterable[int]] = None,
             free_landmarks: Optional[Iterable[int]] = None) -> OptimizeResult:
    """Levenberg-Marquardt over the free variables, in place.

    ``free_poses=None`` optimises every pose; otherwise the rest stay fixed and
    only landmarks seen from a free pose move (unless ``free_landmarks`` is
    given). Steps are accepted only when they lower the total cost.

    Raises BackendFailure when the cost is not finite or the damped system
    cannot be factorised at any damping.
    """
    if not graph.priors and free_poses is None:
        raise BackendFailure("graph has no prior factor to fix the gauge")
    prob = _Problem(graph, free_poses, free_landmarks, huber_k)
    Rs, ts, Xs = prob.state()
    cost = prob.cost(Rs, ts, Xs)
    if not np.isfinite(cost):
        raise BackendFailure("initial cost is not finite")
    initial = cost
    accepted = []
    lam = lambda_init
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        system = prob.normal_equations(Rs, ts, Xs)
        grad = np.concatenate([system[1], system[3].ravel()])
        if not np.all(np.isfinite(grad)):
            raise BackendFailure("non-finite gradient")
        if np.abs(grad).max(initial=0.0) < 1e-14:
            converged = True
            break
        stepped = False
        solved_once = False
        while lam <= LAMBDA_MAX:
            step = prob.solve(system, lam)
            if step is None:
                lam *= 10.0
                continue
            solved_once = True
            dp, dl = step
            cand = prob.apply(Rs, ts, Xs, dp, dl)
            new_cost = prob.cost(*cand)
            if new_cost < cost:
                Rs, ts, Xs = cand
                decrease = cost - new_cost
                cost = new_cost
                accepted.append(cost)
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                if decrease <= tol * max(cost, 1.0):
                    converged = True
                break
            lam *= 10.0
        if not solved_once:
            raise BackendFailure("normal equations are singular")
        if not stepped:
            # no damping lowers the cost: a local minimum to working precision
            converged = True
            break
        if converged:
            break

    for pid in prob.pose_ids:
        graph.poses[pid] = PoseSE3.from_matrix(Rs[pid], ts[pid])
    for lid in prob.lm_ids:
        graph.landmarks[lid] = np.asarray(Xs[lid], dtype=float)
    return OptimizeResult(initial, cost, it, accepted, converged)
