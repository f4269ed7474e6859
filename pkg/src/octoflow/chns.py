"""Coupled solver for diffuse-interface two-phase incompressible flow:
midpoint time stepping, residual-based stabilization on equal-order
bilinear elements, block iteration between the flow and phase systems,
and interface-tracking remeshes."""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .fem import (apply_dirichlet_dofs, gauss_rule, shape_eval_many,
                  shape_hessian_many)
from .la import (NewtonConfig, SolverConfig, SparseMatrix, _diag_positions,
                 krylov_solve, make_preconditioner, newton_solve)
from .mesh import build_mesh, classify_boundary, transfer_fields
from .tree import balance_2to1, refine_to_points

# ── parameters and material laws ──────────────────────────────────────


@dataclass
class Params:
    """Nondimensional groups and phase-dependent material laws.

    Density and viscosity interpolate linearly in the clamped phase
    variable, normalized to 1 in the plus phase; rho_minus and eta_minus
    are the minus-phase ratios.  pe defaults to 1/(3 cn^2), which keeps
    the diffusive interface width resolved as cn shrinks.
    """

    re: float = 1.0
    we: float = 1.0
    cn: float = 0.01
    pe: float = None
    fr: float = 1.0
    rho_minus: float = 1.0
    eta_minus: float = 1.0
    c_i: float = 6.0

    def __post_init__(self):
        if self.pe is None:
            self.pe = 1.0 / (3.0 * self.cn * self.cn)

    @property
    def alpha(self):
        return (1.0 - self.rho_minus) / 2.0

    @property
    def beta(self):
        return (1.0 + self.rho_minus) / 2.0

    @property
    def gamma(self):
        return (1.0 - self.eta_minus) / 2.0

    @property
    def xi(self):
        return (1.0 + self.eta_minus) / 2.0


def material_props(phi, params):
    """Density and viscosity from the phase variable (clamped to [-1, 1]
    so overshoots cannot produce negative properties)."""
    phc = np.clip(phi, -1.0, 1.0)
    return (params.alpha * phc + params.beta,
            params.gamma * phc + params.xi)


def psi(phi):
    """Double-well bulk free energy density."""
    phi = np.asarray(phi, dtype=np.float64)
    return 0.25 * (phi * phi - 1.0) ** 2


def psi_prime(phi):
    phi = np.asarray(phi, dtype=np.float64)
    return phi ** 3 - phi


def psi_dprime(phi):
    phi = np.asarray(phi, dtype=np.float64)
    return 3.0 * phi * phi - 1.0


def stabilization_tau(h, v, jflux, rho, eta, dt, params):
    """Reference stabilization parameters on cube cells.

    The element metric for a cube of side h is diagonal, 4/h^2 per axis,
    which collapses the usual metric contractions to scalars.

    Parameters
    ----------
    h, rho, eta : (m,) arrays
    v, jflux : (m, d) midpoint velocity and diffusive mass flux
    dt : time step

    Returns
    -------
    (tau_m, tau_c) : (m,) arrays
    """
    h = np.asarray(h, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    dim = v.shape[-1]
    g = 4.0 / (h * h)
    theta = (4.0 / (dt * dt)
             + g * np.sum(v * v, axis=-1)
             + g * np.sum(v * jflux, axis=-1) / (rho * params.pe)
             + params.c_i * (eta / (rho * params.re)) ** 2 * dim * g * g)
    theta = np.maximum(theta, _kernels._THETA_FLOOR)
    tau_m = theta ** -0.5
    tau_c = 1.0 / (dim * g * tau_m)
    return tau_m, tau_c


# ── state and dof packing ──────────────────────────────────────────────


@dataclass
class State:
    """Nodal fields at one time level (velocity is (n, d) node-major)."""

    v: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    t: float = 0.0

    def copy(self):
        return State(self.v.copy(), self.p.copy(), self.phi.copy(),
                     self.mu.copy(), self.t)


def pack_flow(v, p):
    return np.concatenate([v, p[:, None]], axis=1).ravel()


def unpack_flow(x, dim):
    x = x.reshape(-1, dim + 1)
    return np.ascontiguousarray(x[:, :dim]), np.ascontiguousarray(x[:, dim])


def pack_phase(phi, mu):
    return np.stack([phi, mu], axis=1).ravel()


def unpack_phase(x):
    x = x.reshape(-1, 2)
    return np.ascontiguousarray(x[:, 0]), np.ascontiguousarray(x[:, 1])


# ── assembly scatter ───────────────────────────────────────────────────


class AssemblyMap:
    """Precomputed scatter from per-element dense blocks into a global
    CSR matrix and RHS vector with hanging constraints folded in.

    A constrained corner routes its row and column to every master node,
    weighted by the product of the two constraint coefficients, so the
    assembled operator acts on independent dofs only.  The CSR pattern
    carries an explicit diagonal (required by the preconditioners).
    Rebuilt only on remesh; assembly itself is two bincounts.
    """

    def __init__(self, mesh, ndof):
        self.ndof = int(ndof)
        self.n = mesh.nnodes * self.ndof
        ne = mesh.nelems
        nen = mesh.elem_to_node.shape[1]
        starts = mesh.gather_indptr
        nodes = mesh.gather_nodes
        coeffs = mesh.gather_coeffs
        slot = np.repeat(np.arange(ne * nen), np.diff(starts))
        comp = np.arange(self.ndof)

        self.vec_pos = (nodes[:, None] * self.ndof + comp).ravel()
        self.vec_src = (slot[:, None] * self.ndof + comp).ravel()
        self.vec_coeff = np.repeat(coeffs, self.ndof)

        # cartesian master pairs within each element
        cnt = starts[nen::nen] - starts[0:-1:nen]
        offs = starts[0:-1:nen]
        pairs = cnt * cnt
        poffs = np.concatenate([[0], np.cumsum(pairs)])
        w = np.arange(poffs[-1]) - np.repeat(poffs[:-1], pairs)
        c_rep = np.repeat(cnt, pairs)
        lo = np.repeat(offs, pairs)
        I = lo + w // c_rep
        J = lo + w % c_rep

        na, nb = nodes[I], nodes[J]
        cab = coeffs[I] * coeffs[J]
        sa, sb = slot[I] % nen, slot[J] % nen
        el = slot[I] // nen
        nl = nen * self.ndof
        ci = comp[None, :, None]
        cj = comp[None, None, :]
        shape = (len(na), self.ndof, self.ndof)
        rows = np.broadcast_to(na[:, None, None] * self.ndof + ci, shape)
        cols = np.broadcast_to(nb[:, None, None] * self.ndof + cj, shape)
        src = ((el[:, None, None] * nl
                + sa[:, None, None] * self.ndof + ci) * nl
               + sb[:, None, None] * self.ndof + cj)

        key = rows.ravel().astype(np.int64) * self.n + cols.ravel()
        diag = np.arange(self.n, dtype=np.int64) * (self.n + 1)
        ukey, inv = np.unique(np.concatenate([key, diag]),
                              return_inverse=True)
        self.mat_pos = inv[:len(key)]
        self.mat_src = src.ravel()
        self.mat_coeff = np.broadcast_to(
            cab[:, None, None], shape).ravel().astype(np.float64)
        self.nnz = len(ukey)
        self.indices = (ukey % self.n).astype(np.int64)
        self.indptr = np.concatenate(
            [[0], np.cumsum(np.bincount((ukey // self.n).astype(np.int64),
                                        minlength=self.n))]).astype(np.int64)
        self.diag_idx = _diag_positions(self.indptr, self.indices, self.n)

    def matrix(self, Ae):
        data = np.bincount(self.mat_pos,
                           weights=Ae.reshape(-1)[self.mat_src]
                           * self.mat_coeff,
                           minlength=self.nnz)
        return SparseMatrix(self.indptr, self.indices, data, self.n,
                            copy=False, diag_idx=self.diag_idx)

    def vector(self, be):
        return np.bincount(self.vec_pos,
                           weights=be.reshape(-1)[self.vec_src]
                           * self.vec_coeff,
                           minlength=self.n)


def lumped_volume(mesh):
    """Per-node share of retained volume (row sums of the mass matrix)."""
    ne = mesh.nelems
    nen = mesh.elem_to_node.shape[1]
    slot = np.repeat(np.arange(ne * nen), np.diff(mesh.gather_indptr))
    ev = mesh.elem_h() ** mesh.dim / nen
    return np.bincount(mesh.gather_nodes,
                       weights=mesh.gather_coeffs * ev[slot // nen],
                       minlength=mesh.nnodes)


# ── quadrature tables ──────────────────────────────────────────────────


class _Tables:
    """Shape values and physical quadrature points shared by the kernels
    on one mesh."""

    def __init__(self, mesh, nquad=2):
        rule = gauss_rule(nquad, mesh.dim)
        self.N, self.dN = shape_eval_many(rule.points)
        self.d2N = shape_hessian_many(rule.points)
        self.w = rule.weights
        self.qy = np.ascontiguousarray(rule.points[:, 1])
        self.h = mesh.elem_h()
        self.oy = np.ascontiguousarray(mesh.elem_origin()[:, 1])
        self.xq = (mesh.elem_origin()[:, None, :]
                   + (rule.points[None, :, :] + 1.0) * 0.5
                   * self.h[:, None, None])


def _gather_velocity(mesh, v):
    return np.ascontiguousarray(
        np.stack([mesh.gather(v[:, i]) for i in range(mesh.dim)], axis=2))


# ── flow and phase systems ─────────────────────────────────────────────


class _NewtonCache:
    """newton_solve asks for residual and Jacobian at the same iterate;
    build both once."""

    def __init__(self, build):
        self._build = build
        self._u = None

    def _ensure(self, u):
        if self._u is None or not np.array_equal(self._u, u):
            self._J, self._F = self._build(u)
            self._u = u.copy()

    def residual(self, u):
        self._ensure(u)
        return self._F

    def jacobian(self, u):
        self._ensure(u)
        return self._J


class FlowSystem:
    """Stabilized momentum + continuity block on one mesh.

    Per step, the old state and midpoint forcing are frozen by
    begin_step, the current phase iterate by set_phase; residual and
    Jacobian are then functions of the packed (v, p) vector alone.
    forcing(x, t) returns (m, d) momentum source values.
    """

    def __init__(self, mesh, params, forcing=None, nquad=2):
        self.mesh = mesh
        self.params = params
        self.forcing = forcing
        self.nd = mesh.dim + 1
        self.tab = _Tables(mesh, nquad)
        self.map = AssemblyMap(mesh, self.nd)
        nl = mesh.elem_to_node.shape[1] * self.nd
        self._Ae = np.zeros((mesh.nelems, nl, nl))
        self._be = np.zeros((mesh.nelems, nl))
        self._fq = np.zeros((mesh.nelems, len(self.tab.w), mesh.dim))
        self.volume_weights = lumped_volume(mesh)
        self._M = None

    def begin_step(self, state, dt):
        self._vk = _gather_velocity(self.mesh, state.v)
        self._pk = self.mesh.gather(state.p)
        self._dt = float(dt)
        self._M = None
        if self.forcing is not None:
            ne, nq, dim = self._fq.shape
            t_mid = state.t + dt / 2.0
            f = self.forcing(self.tab.xq.reshape(-1, dim), t_mid)
            self._fq = np.ascontiguousarray(
                np.asarray(f, dtype=np.float64).reshape(ne, nq, dim))

    def set_phase(self, phi_old, mu_old, phi_new, mu_new):
        self._phk = self.mesh.gather(phi_old)
        self._muk = self.mesh.gather(mu_old)
        self._ph1 = self.mesh.gather(phi_new)
        self._mu1 = self.mesh.gather(mu_new)

    def assemble(self, x):
        p = self.params
        v1, p1 = unpack_flow(x, self.mesh.dim)
        v1e = _gather_velocity(self.mesh, v1)
        p1e = self.mesh.gather(p1)
        self._Ae[:] = 0.0
        self._be[:] = 0.0
        _kernels.ns_kernel(self.tab.h, self.tab.N, self.tab.dN,
                           self.tab.d2N, self.tab.w,
                           self._vk, v1e, self._pk, p1e,
                           self._phk, self._ph1, self._muk, self._mu1,
                           self._fq, self._dt,
                           p.re, p.we, p.pe, p.cn, p.fr,
                           p.alpha, p.beta, p.gamma, p.xi, p.c_i,
                           self._Ae, self._be)
        return self.map.matrix(self._Ae), self.map.vector(self._be)

    def preconditioner(self, config):
        """One factorization per step; stale within a step is fine, the
        Jacobian itself stays exact."""
        def precond(A):
            if self._M is None:
                self._M = make_preconditioner(A, config.preconditioner,
                                              config.block_size)
            return self._M
        return precond

    def remove_pressure_mean(self, p):
        """Volume-weighted zero mean; the enclosed-flow residual is
        invariant to the shift."""
        w = self.volume_weights
        return p - np.dot(w, p) / np.sum(w)


class PhaseSystem:
    """Conservative phase transport + chemical potential block.

    forcing(x, t) returns (m, 2) source values for the transport and
    potential equations.
    """

    def __init__(self, mesh, params, forcing=None, nquad=2):
        self.mesh = mesh
        self.params = params
        self.forcing = forcing
        self.tab = _Tables(mesh, nquad)
        self.map = AssemblyMap(mesh, 2)
        nl = mesh.elem_to_node.shape[1] * 2
        self._Ae = np.zeros((mesh.nelems, nl, nl))
        self._be = np.zeros((mesh.nelems, nl))
        nq = len(self.tab.w)
        self._fphi = np.zeros((mesh.nelems, nq))
        self._fmu = np.zeros((mesh.nelems, nq))
        self._M = None

    def begin_step(self, state, dt):
        self._vk = _gather_velocity(self.mesh, state.v)
        self._phk = self.mesh.gather(state.phi)
        self._muk = self.mesh.gather(state.mu)
        self._dt = float(dt)
        self._M = None
        if self.forcing is not None:
            ne, nq = self._fphi.shape
            t_mid = state.t + dt / 2.0
            f = np.asarray(self.forcing(
                self.tab.xq.reshape(-1, self.mesh.dim), t_mid),
                dtype=np.float64).reshape(ne, nq, 2)
            self._fphi = np.ascontiguousarray(f[:, :, 0])
            self._fmu = np.ascontiguousarray(f[:, :, 1])

    def set_velocity(self, v_new):
        self._v1 = _gather_velocity(self.mesh, v_new)

    def assemble(self, x):
        p = self.params
        phi1, mu1 = unpack_phase(x)
        ph1e = self.mesh.gather(phi1)
        mu1e = self.mesh.gather(mu1)
        self._Ae[:] = 0.0
        self._be[:] = 0.0
        _kernels.ch_kernel(self.tab.h, self.tab.N, self.tab.dN, self.tab.w,
                           self._vk, self._v1, self._phk, ph1e,
                           self._muk, mu1e, self._fphi, self._fmu,
                           self._dt, p.pe, p.cn, self._Ae, self._be)
        return self.map.matrix(self._Ae), self.map.vector(self._be)

    def preconditioner(self, config):
        def precond(A):
            if self._M is None:
                self._M = make_preconditioner(A, config.preconditioner,
                                              config.block_size)
            return self._M
        return precond


# ── boundary conditions ────────────────────────────────────────────────


class VelocityBC:
    """Dirichlet velocity components as (boundary tag, component, value)
    entries; value is a constant or value(x, t) -> (m,).  Later entries
    win on shared dofs (wall corners)."""

    def __init__(self, entries):
        self.entries = list(entries)

    def flow_dofs(self, mesh, t):
        nd = mesh.dim + 1
        out = {}
        for tag, comp, value in self.entries:
            nodes = classify_boundary(mesh, tag)
            if callable(value):
                vals = np.asarray(value(mesh.nodes[nodes], t),
                                  dtype=np.float64)
            else:
                vals = np.full(len(nodes), float(value))
            for nid, vv in zip(nodes, vals):
                out[int(nid) * nd + comp] = float(vv)
        dofs = np.array(sorted(out), dtype=np.int64)
        values = np.array([out[d] for d in dofs], dtype=np.float64)
        return dofs, values


def no_slip(tags, dim, value=0.0):
    """All velocity components pinned on the tagged walls."""
    return [(tag, c, value) for tag in tags for c in range(dim)]


def free_slip(tag_axis_pairs):
    """Normal component pinned on each (tag, axis) wall."""
    return [(tag, axis, 0.0) for tag, axis in tag_axis_pairs]


# ── block-coupled step ─────────────────────────────────────────────────


@dataclass
class BlockConfig:
    tol: float = 1e-4
    min_rounds: int = 2
    max_rounds: int = 20


@dataclass
class SolveSettings:
    ns_newton: NewtonConfig = field(default_factory=lambda: NewtonConfig(
        rel_tol=1e-6, abs_tol=1e-12, max_iters=25))
    ns_linear: SolverConfig = field(default_factory=lambda: SolverConfig(
        method="bicgstab", preconditioner="ilu0", rel_tol=1e-7))
    ch_newton: NewtonConfig = field(default_factory=lambda: NewtonConfig(
        rel_tol=1e-8, abs_tol=1e-12, max_iters=25))
    ch_linear: SolverConfig = field(default_factory=lambda: SolverConfig(
        method="bicgstab", preconditioner="ilu0", rel_tol=1e-7))
    block: BlockConfig = field(default_factory=BlockConfig)


@dataclass
class StepStats:
    converged: bool
    rounds: int = 0
    ns_iters: int = 0
    ch_iters: int = 0
    reason: str = ""


def coupled_step(flow, phase, state, dt, bc=None, settings=None):
    """Advance one time step by alternating flow and phase solves.

    Each round solves the flow block with the phase iterate frozen, then
    the phase block with the new velocity frozen.  Rounds stop when the
    max-norm change of all fields falls below block.tol (at least
    min_rounds rounds, so the coupling is genuinely two-way).

    Returns
    -------
    (State or None, StepStats)
    """
    settings = settings or SolveSettings()
    blk = settings.block
    mesh = flow.mesh
    dim = mesh.dim
    t_new = state.t + dt

    flow.begin_step(state, dt)
    phase.begin_step(state, dt)

    if bc is not None:
        bc_dofs, bc_vals = bc.flow_dofs(mesh, t_new)
    else:
        bc_dofs = np.zeros(0, dtype=np.int64)
        bc_vals = np.zeros(0)

    v1 = state.v.copy()
    if len(bc_dofs):
        flat = pack_flow(v1, state.p.copy())
        flat[bc_dofs] = bc_vals
        v1, _ = unpack_flow(flat, dim)
    p1 = state.p.copy()
    ph1 = state.phi.copy()
    mu1 = state.mu.copy()

    def build_flow(x):
        A, F = flow.assemble(x)
        return apply_dirichlet_dofs(A, F, bc_dofs, np.zeros(len(bc_dofs)))

    stats = StepStats(False)
    for rounds in range(1, blk.max_rounds + 1):
        flow.set_phase(state.phi, state.mu, ph1, mu1)
        cache = _NewtonCache(build_flow)
        res = newton_solve(cache.residual, cache.jacobian,
                           pack_flow(v1, p1),
                           settings.ns_newton, settings.ns_linear,
                           precond_fn=flow.preconditioner(
                               settings.ns_linear))
        stats.ns_iters += res.iters
        if not res.converged:
            stats.rounds = rounds
            stats.reason = f"flow solve: {res.reason}"
            return None, stats
        v1n, p1n = unpack_flow(res.u, dim)
        p1n = flow.remove_pressure_mean(p1n)

        phase.set_velocity(v1n)
        cache = _NewtonCache(phase.assemble)
        res = newton_solve(cache.residual, cache.jacobian,
                           pack_phase(ph1, mu1),
                           settings.ch_newton, settings.ch_linear,
                           precond_fn=phase.preconditioner(
                               settings.ch_linear))
        stats.ch_iters += res.iters
        if not res.converged:
            stats.rounds = rounds
            stats.reason = f"phase solve: {res.reason}"
            return None, stats
        ph1n, mu1n = unpack_phase(res.u)

        change = max(np.max(np.abs(v1n - v1)), np.max(np.abs(p1n - p1)),
                     np.max(np.abs(ph1n - ph1)), np.max(np.abs(mu1n - mu1)))
        v1, p1, ph1, mu1 = v1n, p1n, ph1n, mu1n
        stats.rounds = rounds
        if rounds >= blk.min_rounds and change <= blk.tol:
            stats.converged = True
            break
    else:
        stats.reason = "block iteration stalled"
        return None, stats

    return State(v1, p1, ph1, mu1, t_new), stats


# ── diagnostics ────────────────────────────────────────────────────────


@dataclass
class EnergyReport:
    kin: float
    mix: float
    grav: float

    @property
    def total(self):
        return self.kin + self.mix + self.grav


def energy(mesh, params, v, phi, nquad=2):
    """Discrete energy split: kinetic, mixing (bulk + interfacial), and
    gravitational.  Uses the assembly quadrature so the reported balance
    matches the scheme's inner products."""
    tab = _Tables(mesh, nquad)
    out = np.zeros((mesh.nelems, 6))
    _kernels.energy_kernel(tab.h, tab.oy, tab.qy, tab.N, tab.dN, tab.w,
                           _gather_velocity(mesh, v), mesh.gather(phi),
                           params.alpha, params.beta, out)
    tot = out.sum(axis=0)
    scale = 1.0 / (params.cn * params.we)
    return EnergyReport(kin=tot[0],
                        mix=scale * (tot[1] + 0.5 * params.cn ** 2 * tot[2]),
                        grav=scale * tot[3] / params.fr)


def step_dissipation(mesh, params, state_old, state_new, nquad=2):
    """Viscous and diffusive dissipation integrals of one step:
    (int eta(phi_new)|grad v_mid|^2, int |grad mu_mid|^2)."""
    tab = _Tables(mesh, nquad)
    out = np.zeros((mesh.nelems, 2))
    _kernels.step_dissipation_kernel(
        tab.h, tab.N, tab.dN, tab.w,
        _gather_velocity(mesh, state_old.v),
        _gather_velocity(mesh, state_new.v),
        mesh.gather(state_new.phi),
        mesh.gather(state_old.mu), mesh.gather(state_new.mu),
        params.gamma, params.xi, out)
    tot = out.sum(axis=0)
    return tot[0], tot[1]


def phase_metrics(mesh, phi, nquad=2):
    """(minus-phase volume, minus-phase centroid, integral of phi)."""
    tab = _Tables(mesh, nquad)
    phe = mesh.gather(phi)
    phq = phe @ tab.N.T
    W = tab.w[None, :] * (tab.h[:, None] / 2.0) ** mesh.dim
    ind = 0.5 * (1.0 - np.clip(phq, -1.0, 1.0))
    vol = float(np.sum(W * ind))
    mom = np.einsum("eq,eqj->j", W * ind, tab.xq)
    centroid = mom / vol if vol > 0.0 else np.zeros(mesh.dim)
    return vol, centroid, float(np.sum(W * phq))


def stable_dt_bound(mesh, params, state_old, state_new, dt, nquad=2):
    """Largest step for which the step's dissipation provably dominates
    the cubic remainder of the double-well Taylor expansion.

    Degenerate cases: an unchanged phase field returns inf (no
    remainder), zero dissipation with a changing phase returns 0.0.
    """
    diss_v, diss_mu = step_dissipation(mesh, params, state_old, state_new,
                                       nquad)
    num = (diss_v / params.re
           + diss_mu / (params.pe * params.cn ** 2 * params.we))
    rate = np.max(np.abs(state_new.phi - state_old.phi)) / dt
    phimax = max(np.max(np.abs(state_old.phi)),
                 np.max(np.abs(state_new.phi)))
    volume = float(np.sum(mesh.elem_h() ** mesh.dim))
    den = volume * rate ** 3 / (params.we * params.cn) * (phimax / 4.0)
    if den == 0.0:
        return np.inf
    if num == 0.0:
        return 0.0
    return float(np.sqrt(num / den))


def energy_law_report(mesh, params, state_old, state_new, dt, nquad=2):
    """Energy-law audit of one step: (dE, viscous, diffusive, cubic).

    viscous and diffusive are the scaled dissipation integrals of the
    semi-discrete identity; cubic is the sup-bound
    max|psi'''|/24 * int |dphi|^3 / (We Cn) on the Taylor remainder
    (the midpoint of the expansion is not computable pointwise).  The
    residual dE + viscous + diffusive is for monitoring only;
    stabilization terms perturb it.
    """
    e0 = energy(mesh, params, state_old.v, state_old.phi, nquad)
    e1 = energy(mesh, params, state_new.v, state_new.phi, nquad)
    diss_v, diss_mu = step_dissipation(mesh, params, state_old, state_new,
                                       nquad)
    viscous = dt / params.re * diss_v
    diffusive = dt / (params.pe * params.cn ** 2 * params.we) * diss_mu
    tab = _Tables(mesh, nquad)
    W = tab.w[None, :] * (tab.h[:, None] / 2.0) ** mesh.dim
    dphq = mesh.gather(state_new.phi - state_old.phi) @ tab.N.T
    phimax = max(np.max(np.abs(state_old.phi)),
                 np.max(np.abs(state_new.phi)))
    cubic = ((phimax / 4.0) * float(np.sum(W * np.abs(dphq) ** 3))
             / (params.we * params.cn))
    return e1.total - e0.total, viscous, diffusive, cubic


def project_mu(mesh, params, phi, config=None):
    """Chemical potential consistent with a given phase field: the mass
    matrix solve of its variational derivative."""
    tab = _Tables(mesh, 2)
    dim = mesh.dim
    detj = (tab.h / 2.0) ** dim
    W = tab.w[None, :] * detj[:, None]
    phe = mesh.gather(phi)
    phq = phe @ tab.N.T
    s = 2.0 / tab.h
    Me = np.einsum("eq,qa,qb->eab", W, tab.N, tab.N)
    be = np.einsum("eq,qa->ea", W * psi_prime(phq), tab.N)
    dph = np.einsum("en,qnj->eqj", phe, tab.dN) * s[:, None, None]
    be += params.cn ** 2 * np.einsum("eqj,qaj->ea", W[:, :, None] * dph,
                                     tab.dN) * s[:, None]
    amap = AssemblyMap(mesh, 1)
    res = krylov_solve(amap.matrix(Me), amap.vector(be),
                       config or SolverConfig(preconditioner="jacobi",
                                              rel_tol=1e-12))
    if not res.converged:
        raise RuntimeError(f"potential projection failed: {res.reason}")
    return res.x


@dataclass
class DiagnosticsRow:
    """Per-step record; as_list follows the CSV column contract."""

    t: float
    e_total: float
    e_kin: float
    e_mix: float
    e_grav: float
    total_phi_drift: float
    bubble_mass: float
    centroid: tuple
    dt_bound: float
    de: float
    block_iters: int
    ns_newton: int
    ch_newton: int

    @staticmethod
    def header(dim):
        cx = ["centroid_x", "centroid_y", "centroid_z"][:dim]
        return (["t", "E_total", "E_kin", "E_mix", "E_grav",
                 "total_phi_drift", "bubble_mass"] + cx
                + ["dt_bound", "dE", "block_iters", "ns_newton",
                   "ch_newton"])

    def as_list(self):
        return ([self.t, self.e_total, self.e_kin, self.e_mix, self.e_grav,
                 self.total_phi_drift, self.bubble_mass]
                + list(self.centroid)
                + [self.dt_bound, self.de, self.block_iters,
                   self.ns_newton, self.ch_newton])


# ── simulation driver ──────────────────────────────────────────────────


class StepFailure(RuntimeError):
    """Raised when a step fails at full and halved dt; carries the last
    good state for checkpointing."""

    def __init__(self, reason, state):
        super().__init__(reason)
        self.state = state


@dataclass
class RemeshConfig:
    every: int = 10
    min_level: int = 1
    max_level: int = 8
    band: float = 0.999
    coarsen_tol: float = 1e-6
    carve_fn: object = None
    enabled: bool = True


class Simulation:
    """Time stepper owning the mesh, state, systems, and diagnostics.

    A failing step is retried as two half steps before giving up; each
    completed (sub)step emits one DiagnosticsRow.  Remeshes happen at
    step start so every row's energy change is measured on a single
    mesh.
    """

    def __init__(self, mesh, params, state, bc=None, forcing=None,
                 phase_forcing=None, settings=None, remesh=None, nquad=2):
        self.mesh = mesh
        self.params = params
        self.state = state
        self.bc = bc
        self.forcing = forcing
        self.phase_forcing = phase_forcing
        self.settings = settings or SolveSettings()
        self.remesh = remesh
        self.nquad = nquad
        self.steps_taken = 0
        self._rebuild_systems()
        self.phi_total0 = phase_metrics(mesh, state.phi, nquad)[2]

    def _rebuild_systems(self):
        self.flow = FlowSystem(self.mesh, self.params, self.forcing,
                               self.nquad)
        self.phase = PhaseSystem(self.mesh, self.params,
                                 self.phase_forcing, self.nquad)

    def step(self, dt):
        """Advance dt (possibly as two half steps); returns the rows."""
        cfg = self.remesh
        if (cfg is not None and cfg.enabled and self.steps_taken > 0
                and self.steps_taken % cfg.every == 0):
            self.refresh_mesh()
        rows = [self._substep(dt, retry=True)]
        if rows[0] is None:  # full step failed, verified retryable
            rows = [self._substep(dt / 2.0, retry=False),
                    self._substep(dt / 2.0, retry=False)]
        self.steps_taken += 1
        return rows

    def _substep(self, dt, retry):
        e0 = energy(self.mesh, self.params, self.state.v, self.state.phi,
                    self.nquad)
        new, stats = coupled_step(self.flow, self.phase, self.state, dt,
                                  self.bc, self.settings)
        if new is None:
            if retry:
                return None
            raise StepFailure(stats.reason, self.state)
        e1 = energy(self.mesh, self.params, new.v, new.phi, self.nquad)
        bound = stable_dt_bound(self.mesh, self.params, self.state, new,
                                dt, self.nquad)
        vol, centroid, phi_total = phase_metrics(self.mesh, new.phi,
                                                 self.nquad)
        row = DiagnosticsRow(
            t=new.t, e_total=e1.total, e_kin=e1.kin, e_mix=e1.mix,
            e_grav=e1.grav, total_phi_drift=phi_total - self.phi_total0,
            bubble_mass=vol, centroid=tuple(centroid), dt_bound=bound,
            de=e1.total - e0.total, block_iters=stats.rounds,
            ns_newton=stats.ns_iters, ch_newton=stats.ch_iters)
        self.state = new
        return row

    def run(self, t_end, dt, on_row=None):
        """Step until t_end (within half a step); returns all rows."""
        rows = []
        while self.state.t < t_end - dt / 2.0:
            for row in self.step(dt):
                rows.append(row)
                if on_row is not None:
                    on_row(row)
        return rows

    def refresh_mesh(self):
        """Rebuild the tree so the interface band sits at max_level and
        regions where the phase is uniform may coarsen, then transfer
        all fields."""
        cfg = self.remesh
        mesh = self.mesh
        phe = mesh.gather(self.state.phi)
        centers = mesh.elem_origin() + 0.5 * mesh.elem_h()[:, None]
        hard = (np.abs(phe) < cfg.band).any(axis=1)
        soft = (np.abs(phe) <= 1.0 - cfg.coarsen_tol).any(axis=1) & ~hard
        points = np.concatenate([centers[hard], centers[soft]])
        targets = np.concatenate([
            np.full(int(hard.sum()), cfg.max_level, dtype=np.int64),
            mesh.elem_level[soft]])
        tree = balance_2to1(refine_to_points(
            points, targets, cfg.carve_fn, cfg.min_level, cfg.max_level,
            mesh.dim, mesh.tree.domain_scale))
        if tree == mesh.tree:
            return
        new_mesh = build_mesh(tree)
        fields = transfer_fields(mesh, new_mesh,
                                 [self.state.v[:, i]
                                  for i in range(mesh.dim)]
                                 + [self.state.p, self.state.phi,
                                    self.state.mu])
        self.mesh = new_mesh
        self.state = State(np.stack(fields[:mesh.dim], axis=1),
                           fields[mesh.dim], fields[mesh.dim + 1],
                           fields[mesh.dim + 2], self.state.t)
        self._rebuild_systems()
