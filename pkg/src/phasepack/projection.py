"""Pose projection toward non-overlap and membrane containment.

Minimizes, by backtracking gradient descent, the proximal objective

    sum_i [ |p_i - p_i0|^2 / (2 tau_p) + r_i^2 d_theta(theta_i, theta_i0)^2 / (2 tau_theta) ]
        + w_coll * E_coll + w_cont * E_cont

with analytic pose gradients. E_coll sums softplus(g_ij / sigma_g)^2 over
shape pairs, where g_ij is the smoothed SAT penetration (log-sum-exp support
functions, soft-min over the pose-dependent direction set, hard max over
convex part pairs). E_cont is a squared hinge at the membrane's 0.5 level on
arc-length-uniform boundary samples. Rotation steps use the natural 1/r^2
metric from the proximal term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .fields import ScalarField
from .geometry import Pose, Scene

TWO_PI = 2.0 * math.pi


@dataclass
class ProjectionConfig:
    tau_p: float = 0.8
    tau_theta: float = 0.8
    w_coll: float = 10.0
    w_cont: float = 5.0
    sigma_g: float = 2.0
    steps: int = 30
    step_size: float = 0.05
    boundary_samples: int = 128
    support_temperature: float = 0.05
    dir_temperature: float = 0.1
    part_temperature: float = 0.1  # smooth-max over convex part pairs
    hard_min: bool = False

    def __post_init__(self):
        for name in ("tau_p", "tau_theta", "w_coll", "w_cont", "sigma_g",
                     "step_size", "support_temperature", "dir_temperature"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _wrap_signed(delta: float) -> float:
    """Wrap to [-pi, pi)."""
    return (delta + math.pi) % TWO_PI - math.pi


def _lse_rows(dots, t):
    """Rowwise t*logsumexp(dots/t) and the softmax weights."""
    m = dots.max(axis=1)
    e = np.exp((dots - m[:, None]) / t)
    s = e.sum(axis=1)
    return m + t * np.log(s), e / s[:, None]


def boundary_samples(shape, n: int) -> np.ndarray:
    """n arc-length-uniform points along the polygon outline (local frame)."""
    v = shape.vertices
    edges = np.roll(v, -1, axis=0) - v
    lengths = np.linalg.norm(edges, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    targets = (np.arange(n) + 0.5) * cum[-1] / n
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(v) - 1)
    frac = (targets - cum[idx]) / np.maximum(lengths[idx], 1e-30)
    return v[idx] + frac[:, None] * edges[idx]


def _pair_penetration_grad(wa, na_w, wb, nb_w, dp, t, t_dir, hard_min):
    """Soft-min penetration of one convex part pair, with pose gradients.

    wa/wb: rotated (untranslated) part vertices; na_w/nb_w: rotated unit edge
    normals; dp = p_j - p_i. Returns (G, dG/dp_i, dG/dtheta_i, dG/dtheta_j);
    dG/dp_j is -dG/dp_i. Directions rotate with their source shape, which
    contributes the (dg/dd . J d) terms.
    """
    dirs = np.concatenate([na_w, -na_w, nb_w, -nb_w])
    n_from_a = 2 * len(na_w)
    dots_a = dirs @ wa.T
    dots_b = -(dirs @ wb.T)
    ha, wg_a = _lse_rows(dots_a, t)
    hb, wg_b = _lse_rows(dots_b, t)
    g = ha + hb - dirs @ dp

    if hard_min:
        k = int(np.argmin(g))
        omega = np.zeros(len(g))
        omega[k] = 1.0
        G = float(g[k])
    else:
        mn = g.min()
        e = np.exp(-(g - mn) / t_dir)
        omega = e / e.sum()
        G = float(mn - t_dir * np.log(e.sum()))

    atil = wg_a @ wa
    btil = wg_b @ wb
    j_dirs = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1)
    dg_ddir = atil - btil - dp
    term_dir = np.einsum("ij,ij->i", dg_ddir, j_dirs)
    # d . (J atil) and d . (J btil)
    d_dot_ja = dirs[:, 0] * (-atil[:, 1]) + dirs[:, 1] * atil[:, 0]
    d_dot_jb = dirs[:, 0] * (-btil[:, 1]) + dirs[:, 1] * btil[:, 0]
    src_a = np.zeros(len(dirs))
    src_a[:n_from_a] = 1.0
    dg_dthi = d_dot_ja + src_a * term_dir
    dg_dthj = -d_dot_jb + (1.0 - src_a) * term_dir

    return G, omega @ dirs, float(omega @ dg_dthi), float(omega @ dg_dthj)


class PoseObjective:
    """Evaluates the projection objective and its gradient on pose arrays.

    Poses are (N, 3) rows [px, py, theta]. All convex part pairs of all shape
    pairs are evaluated in one padded batch: vertices and edge normals are
    padded to the largest part size, with padded vertices masked out of the
    support log-sum-exp and padded directions out of the soft-min.
    """

    def __init__(self, scene: Scene, anchor_poses, membrane: ScalarField,
                 config: ProjectionConfig):
        self.scene = scene
        self.config = config
        self.membrane = membrane
        self.anchor = np.array([[p.p[0], p.p[1], p.theta] for p in anchor_poses])
        self.radii = np.array([s.circumradius for s in scene.shapes])
        self.parts = [s.convex_parts for s in scene.shapes]
        self.normals = [s.part_normals for s in scene.shapes]
        self.samples = np.stack([boundary_samples(s, config.boundary_samples)
                                 for s in scene.shapes])
        self._build_pair_batch()

    def _build_pair_batch(self):
        n = len(self.scene.shapes)
        pp_i, pp_j, pair_id, parts_a, parts_b = [], [], [], [], []
        pairs = []
        for i in range(n):
            for j in range(i + 1, n):
                pairs.append((i, j))
                for pa in range(len(self.parts[i])):
                    for pb in range(len(self.parts[j])):
                        pp_i.append(i)
                        pp_j.append(j)
                        pair_id.append(len(pairs) - 1)
                        parts_a.append((i, pa))
                        parts_b.append((j, pb))
        self.pairs = pairs
        self.pp_i = np.asarray(pp_i, dtype=np.intp)
        self.pp_j = np.asarray(pp_j, dtype=np.intp)
        self.pair_id = np.asarray(pair_id, dtype=np.intp)
        self.n_pp = len(pp_i)
        if self.n_pp == 0:
            return

        m = max(max((len(p) for parts in self.parts for p in parts), default=1), 1)
        self.m_pad = m
        P = self.n_pp
        self.A_v = np.zeros((P, m, 2))
        self.B_v = np.zeros((P, m, 2))
        self.A_vm = np.zeros((P, m), dtype=bool)
        self.B_vm = np.zeros((P, m), dtype=bool)
        A_n = np.zeros((P, m, 2))
        B_n = np.zeros((P, m, 2))
        A_nm = np.zeros((P, m), dtype=bool)
        B_nm = np.zeros((P, m), dtype=bool)
        for k, ((i, pa), (j, pb)) in enumerate(zip(parts_a, parts_b)):
            va, na = self.parts[i][pa], self.normals[i][pa]
            vb, nb = self.parts[j][pb], self.normals[j][pb]
            self.A_v[k, :len(va)] = va
            self.A_vm[k, :len(va)] = True
            self.B_v[k, :len(vb)] = vb
            self.B_vm[k, :len(vb)] = True
            A_n[k, :len(na)] = na
            A_nm[k, :len(na)] = True
            B_n[k, :len(nb)] = nb
            B_nm[k, :len(nb)] = True
        # direction layout per part pair: [+nA, -nA, +nB, -nB], each padded to m
        self.dirs_local = np.concatenate([A_n, -A_n, B_n, -B_n], axis=1)
        self.dir_mask = np.concatenate([A_nm, A_nm, B_nm, B_nm], axis=1)
        self.src_a = np.concatenate([A_nm, A_nm, np.zeros_like(B_nm), np.zeros_like(B_nm)],
                                    axis=1).astype(float)
        self.src_b = self.dir_mask.astype(float) - self.src_a

    def collision(self, q: np.ndarray, want_grad: bool = True):
        cfg = self.config
        n = len(q)
        grad = np.zeros((n, 3))
        if self.n_pp == 0:
            return 0.0, grad
        t = cfg.support_temperature
        cos = np.cos(q[:, 2])
        sin = np.sin(q[:, 2])
        rot = np.empty((n, 2, 2))
        rot[:, 0, 0] = cos
        rot[:, 0, 1] = -sin
        rot[:, 1, 0] = sin
        rot[:, 1, 1] = cos

        ra = rot[self.pp_i]
        rb = rot[self.pp_j]
        wa = np.einsum("pxy,pvy->pvx", ra, self.A_v)
        wb = np.einsum("pxy,pvy->pvx", rb, self.B_v)
        # rotate the A-sourced and B-sourced direction blocks with their shapes
        m = self.m_pad
        dirs = np.empty_like(self.dirs_local)
        dirs[:, :2 * m] = np.einsum("pxy,pdy->pdx", ra, self.dirs_local[:, :2 * m])
        dirs[:, 2 * m:] = np.einsum("pxy,pdy->pdx", rb, self.dirs_local[:, 2 * m:])

        dots_a = np.einsum("pdx,pvx->pdv", dirs, wa)
        dots_b = -np.einsum("pdx,pvx->pdv", dirs, wb)
        dots_a[~self.A_vm[:, None, :].repeat(dirs.shape[1], 1)] = -1e300
        dots_b[~self.B_vm[:, None, :].repeat(dirs.shape[1], 1)] = -1e300
        ma = dots_a.max(axis=2)
        mb = dots_b.max(axis=2)
        ea = np.exp((dots_a - ma[..., None]) / t)
        eb = np.exp((dots_b - mb[..., None]) / t)
        sa = ea.sum(axis=2)
        sb = eb.sum(axis=2)
        ha = ma + t * np.log(sa)
        hb = mb + t * np.log(sb)

        dp = q[self.pp_j, :2] - q[self.pp_i, :2]
        g = ha + hb - np.einsum("pdx,px->pd", dirs, dp)
        g[~self.dir_mask] = 1e300

        if cfg.hard_min:
            kmin = g.argmin(axis=1)
            omega = np.zeros_like(g)
            omega[np.arange(len(g)), kmin] = 1.0
            G = g[np.arange(len(g)), kmin]
        else:
            td = cfg.dir_temperature
            gmin = g.min(axis=1)
            eg = np.exp(-(g - gmin[:, None]) / td)
            eg[~self.dir_mask] = 0.0
            seg = eg.sum(axis=1)
            omega = eg / seg[:, None]
            G = gmin - td * np.log(seg)

        # aggregate part pairs per shape pair: smooth max by default so the
        # landscape has no argmax corners; hard max in hard_min mode
        n_pairs = len(self.pairs)
        g_max = np.full(n_pairs, -np.inf)
        np.maximum.at(g_max, self.pair_id, G)
        if cfg.hard_min:
            g_pair = g_max
            pp_w = np.where(G == g_max[self.pair_id], 1.0, 0.0)
            ties = np.zeros(n_pairs)
            np.add.at(ties, self.pair_id, pp_w)
            pp_w /= ties[self.pair_id]  # split exact ties
        else:
            tp = cfg.part_temperature
            epp = np.exp((G - g_max[self.pair_id]) / tp)
            z = np.zeros(n_pairs)
            np.add.at(z, self.pair_id, epp)
            g_pair = g_max + tp * np.log(z)
            pp_w = epp / z[self.pair_id]

        x = g_pair / cfg.sigma_g
        sp = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
        energy = float(np.sum(sp * sp))
        if not want_grad:
            return energy, grad

        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        factor = (2.0 * sp * sig / cfg.sigma_g)[self.pair_id] * pp_w

        live = factor != 0.0  # skip part pairs with no weight
        atil = np.einsum("pdv,pvx->pdx", ea[live] / sa[live][..., None], wa[live])
        btil = np.einsum("pdv,pvx->pdx", eb[live] / sb[live][..., None], wb[live])
        dsel = dirs[live]
        osel = omega[live]
        dgd = atil - btil - dp[live][:, None, :]
        jdirs = np.stack([-dsel[..., 1], dsel[..., 0]], axis=-1)
        term_dir = np.einsum("pdx,pdx->pd", dgd, jdirs)
        d_dot_ja = dsel[..., 0] * (-atil[..., 1]) + dsel[..., 1] * atil[..., 0]
        d_dot_jb = dsel[..., 0] * (-btil[..., 1]) + dsel[..., 1] * btil[..., 0]
        dg_dthi = d_dot_ja + self.src_a[live] * term_dir
        dg_dthj = -d_dot_jb + self.src_b[live] * term_dir

        gp_i = np.einsum("pd,pdx->px", osel, dsel)
        gth_i = np.einsum("pd,pd->p", osel, dg_dthi)
        gth_j = np.einsum("pd,pd->p", osel, dg_dthj)

        fl = factor[live]
        ii = self.pp_i[live]
        jj = self.pp_j[live]
        np.add.at(grad[:, :2], ii, fl[:, None] * gp_i)
        np.add.at(grad[:, :2], jj, -fl[:, None] * gp_i)
        np.add.at(grad[:, 2], ii, fl * gth_i)
        np.add.at(grad[:, 2], jj, fl * gth_j)
        return energy, grad

    def containment(self, q: np.ndarray, want_grad: bool = True):
        u = self.membrane
        grid = u.grid
        n, s_count = self.samples.shape[:2]
        cos = np.cos(q[:, 2])
        sin = np.sin(q[:, 2])
        rot = np.empty((n, 2, 2))
        rot[:, 0, 0] = cos
        rot[:, 0, 1] = -sin
        rot[:, 1, 0] = sin
        rot[:, 1, 1] = cos
        rotated = np.einsum("nxy,nsy->nsx", rot, self.samples)
        world = rotated + q[:, None, :2]
        gc = (world.reshape(-1, 2) - np.asarray(grid.origin)) / grid.cell - 0.5
        vals, dvx, dvy = kernels.bilinear_gather(u.values, gc[:, 0], gc[:, 1])
        hinge = np.maximum(0.0, 0.5 - vals)
        energy = float(np.sum(hinge * hinge))
        grad = np.zeros((n, 3))
        if not want_grad:
            return energy, grad
        dw = (-2.0 * hinge)[:, None] * np.stack([dvx, dvy], axis=1) / grid.cell
        dw = dw.reshape(n, s_count, 2)
        grad[:, :2] = dw.sum(axis=1)
        # d(world)/dtheta = J @ rotated = (-ry, rx)
        grad[:, 2] = np.einsum("ns,ns->n", dw[..., 0], -rotated[..., 1]) + \
            np.einsum("ns,ns->n", dw[..., 1], rotated[..., 0])
        return energy, grad

    def value_and_grad(self, q: np.ndarray, want_grad: bool = True):
        cfg = self.config
        e_coll, g_coll = self.collision(q, want_grad)
        e_cont, g_cont = self.containment(q, want_grad)
        grad = cfg.w_coll * g_coll + cfg.w_cont * g_cont
        value = cfg.w_coll * e_coll + cfg.w_cont * e_cont
        for i in range(len(q)):
            dpvec = q[i, :2] - self.anchor[i, :2]
            value += float(dpvec @ dpvec) / (2.0 * cfg.tau_p)
            grad[i, :2] += dpvec / cfg.tau_p
            dth = _wrap_signed(q[i, 2] - self.anchor[i, 2])
            r2 = self.radii[i] ** 2
            value += r2 * dth * dth / (2.0 * cfg.tau_theta)
            grad[i, 2] += r2 * dth / cfg.tau_theta
        return value, grad

    def value(self, q: np.ndarray) -> float:
        return self.value_and_grad(q, want_grad=False)[0]


def collision_energy(scene: Scene, config: ProjectionConfig | None = None):
    """E_coll = sum_{i<j} softplus(g_ij / sigma_g)^2 and its pose gradients."""
    cfg = config or ProjectionConfig()
    obj = PoseObjective(scene, scene.poses, _flat_membrane(scene), cfg)
    return obj.collision(_pose_array(scene))


def containment_energy(scene: Scene, membrane: ScalarField,
                       config: ProjectionConfig | None = None):
    """Squared hinge below the membrane's 0.5 level over boundary samples."""
    cfg = config or ProjectionConfig()
    obj = PoseObjective(scene, scene.poses, membrane, cfg)
    return obj.containment(_pose_array(scene))


def projection_objective(scene: Scene, anchor: Scene, membrane: ScalarField,
                         config: ProjectionConfig | None = None) -> float:
    """The full proximal objective value at the scene's current poses."""
    cfg = config or ProjectionConfig()
    obj = PoseObjective(scene, anchor.poses, membrane, cfg)
    return obj.value(_pose_array(scene))


GRAD_FLOOR = 1e-7  # below this metric norm the configuration counts as stationary


def project_poses(scene: Scene, anchor: Scene, membrane: ScalarField,
                  config: ProjectionConfig | None = None) -> Scene:
    """Backtracking steepest descent on the projection objective.

    Steps are taken in the proximal metric (translations plus r_i-weighted
    rotations) and normalized so one step moves the configuration by at most
    `step_size` grid units; per-shape rotation updates carry the natural
    1/r_i^2 scaling. Each step is halved up to five times while it increases
    the objective; the best iterate wins. Bounded steps keep per-outer-
    iteration motion small, so the membrane state steers where shapes go.
    """
    cfg = config or ProjectionConfig()
    obj = PoseObjective(scene, anchor.poses, membrane, cfg)
    q = _pose_array(scene)
    inv_metric = np.ones_like(q)
    inv_metric[:, 2] = 1.0 / np.maximum(obj.radii ** 2, 1e-12)

    value, grad = obj.value_and_grad(q)
    best_q, best_value = q.copy(), value
    eta_base = cfg.step_size
    for _ in range(cfg.steps):
        # metric norm: |g|^2_{M^-1} = sum g_p^2 + g_theta^2 / r^2
        gnorm = math.sqrt(float(np.sum(inv_metric * grad * grad)))
        if gnorm <= GRAD_FLOOR:
            break
        direction = inv_metric * grad / gnorm
        eta = eta_base
        accepted = False
        for _ in range(6):  # initial step plus up to 5 halvings
            trial = q - eta * direction
            trial_value = obj.value(trial)
            if trial_value < value:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            # curvature finer than the halving range: shrink the baseline and
            # keep probing (still five halvings per step)
            eta_base *= 0.5 ** 5
            if eta_base < 1e-10 * cfg.step_size:
                break
            continue
        q, value = trial, trial_value
        if value < best_value:
            best_q, best_value = q.copy(), value
        grad = obj.value_and_grad(q)[1]
        eta_base = min(cfg.step_size, 4.0 * eta)
    poses = [Pose(best_q[i, :2].copy(), best_q[i, 2]) for i in range(len(q))]
    return scene.with_poses(poses)


def _pose_array(scene: Scene) -> np.ndarray:
    return np.array([[p.p[0], p.p[1], p.theta] for p in scene.poses])


def _flat_membrane(scene: Scene) -> ScalarField:
    # placeholder for collision-only evaluation; never sampled
    from .fields import Grid
    return ScalarField(Grid(width=2, height=2), np.ones((2, 2)))
