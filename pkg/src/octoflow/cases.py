"""Benchmark case definitions: manufactured-solution fields and
forcings, rising-bubble and Rayleigh-Taylor setups, and the interface
measurements the acceptance runs report."""

import importlib.resources
from dataclasses import dataclass

import numpy as np

from .chns import (Params, State, VelocityBC, free_slip, no_slip,
                   project_mu)
from .fem import gauss_rule, shape_eval_many
from .mesh import build_mesh
from .tree import balance_2to1, refine_to_band, refine_to_geometry

PI = np.pi


# ── manufactured solution ──────────────────────────────────────────────

def mms_params():
    """Parameter set of the manufactured-solution study."""
    return Params(re=10.0, we=1.0, cn=1.0, pe=3.0, fr=1.0,
                  rho_minus=0.85, eta_minus=1.0)


def mms_velocity(x, t):
    x1, x2 = x[:, 0], x[:, 1]
    st = np.sin(t)
    return np.stack([np.sin(PI * x1) * np.cos(PI * x2) * st,
                     -np.cos(PI * x1) * np.sin(PI * x2) * st], axis=1)


def mms_pressure(x, t):
    return np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]) * np.cos(t)


def mms_phase(x, t):
    """phi and mu share one closed form."""
    return np.cos(PI * x[:, 0]) * np.cos(PI * x[:, 1]) * np.sin(t)


def mms_flow_forcing(params):
    """Momentum source making the closed-form fields an exact solution.

    Symbolically derived strong residual of the momentum equation under
    the closed forms; density and viscosity laws enter with the phase
    never leaving [-1, 1], so the clamp is inactive.
    """
    pe, re, we = params.pe, params.re, params.we
    cn, fr = params.cn, params.fr
    rm, em = params.rho_minus, params.eta_minus

    def forcing(x, t):
        x1, x2 = x[:, 0], x[:, 1]
        s1, c1 = np.sin(PI * x1), np.cos(PI * x1)
        s2, c2 = np.sin(PI * x2), np.cos(PI * x2)
        st, ct = np.sin(t), np.cos(t)
        f1 = (pe * re * we * s1
              * (-PI * c1 ** 2 * c2 * rm * st ** 3
                 + PI * c1 ** 2 * c2 * st ** 3
                 - c1 * c2 ** 2 * ct * rm * st + c1 * c2 ** 2 * ct * st
                 + PI * c1 * rm * st ** 2 + PI * c1 * st ** 2
                 + c2 * ct * rm + c2 * ct)
              + 2 * PI * pe * re * c1
              * (-4 * PI ** 2 * cn * s1 * s2 ** 2 * st ** 2
                 + 3 * PI ** 2 * cn * s1 * st ** 2 + ct * s2)
              + PI ** 2 * pe * we * s1 * st
              * (-3 * c1 * c2 ** 2 * em * st + 3 * c1 * c2 ** 2 * st
                 + c1 * em * s2 ** 2 * st - c1 * s2 ** 2 * st
                 + 2 * c2 * em + 2 * c2)
              + PI ** 2 * re * we * c1 * s1 * st ** 2 * (1 - rm)
              * np.cos(2 * PI * x2)) / (2 * pe * re * we)
        f2 = (fr * pe * re * we * s2
              * (c1 ** 2 * c2 * ct * rm * st - c1 ** 2 * c2 * ct * st
                 - PI * c1 * c2 ** 2 * rm * st ** 3
                 + PI * c1 * c2 ** 2 * st ** 3
                 - c1 * ct * rm - c1 * ct
                 + PI * c2 * rm * st ** 2 + PI * c2 * st ** 2)
              + 2 * PI * fr * pe * re * c2
              * (-4 * PI ** 2 * cn * s1 ** 2 * s2 * st ** 2
                 + 3 * PI ** 2 * cn * s2 * st ** 2 + ct * s1)
              + PI ** 2 * fr * pe * we * s2 * st
              * (3 * c1 ** 2 * c2 * em * st - 3 * c1 ** 2 * c2 * st
                 - 2 * c1 * em - 2 * c1
                 - c2 * em * s1 ** 2 * st + c2 * s1 ** 2 * st)
              + PI ** 2 * fr * re * we * c2 * s2 * st ** 2 * (rm - 1)
              * np.cos(2 * PI * x1)
              + pe * re * we * (-c1 * c2 * rm * st + c1 * c2 * st
                                + rm + 1)) / (2 * fr * pe * re * we)
        return np.stack([f1, f2], axis=1)

    return forcing


def mms_phase_forcing(params):
    """(transport, potential) sources for the closed-form fields."""
    pe, cn = params.pe, params.cn

    def forcing(x, t):
        x1, x2 = x[:, 0], x[:, 1]
        s1, c1 = np.sin(PI * x1), np.cos(PI * x1)
        s2, c2 = np.sin(PI * x2), np.cos(PI * x2)
        st, ct = np.sin(t), np.cos(t)
        f_phi = (c1 * c2 * ct - PI * s1 ** 2 * st ** 2
                 + PI * s2 ** 2 * st ** 2
                 + 2 * PI ** 2 * c1 * c2 * st / (cn * pe))
        f_mu = c1 * c2 * st * (2 * PI ** 2 * cn ** 2
                               + c1 ** 2 * c2 ** 2 * st ** 2 - 2)
        return np.stack([f_phi, f_mu], axis=1)

    return forcing


def mms_bc():
    """Exact-velocity Dirichlet on every wall of the carved unit square."""
    def value(comp):
        return lambda x, t: mms_velocity(x, t)[:, comp]
    tags = ["x_min", "x_max", "y_min", "y_max", "external"]
    return VelocityBC([(tag, c, value(c)) for tag in tags for c in (0, 1)])


def mms_mesh(n):
    """Uniform n-by-n unit-square mesh with spacing exactly 1/n.

    The quadtree root is scaled to (2^L)/n and carved back to the unit
    square, so benchmark spacings that are not powers of two (1/50,
    1/100, 1/150) land exactly on cell faces.
    """
    level = int(np.ceil(np.log2(n)))
    scale = 2.0 ** level / n

    def keep(p):
        return (p[:, 0] <= 1.0) & (p[:, 1] <= 1.0)

    t = refine_to_geometry(lambda p: np.ones(len(p)), keep, level, level,
                           2, domain_scale=scale)
    return build_mesh(balance_2to1(t))


def mms_state(mesh, t=0.0):
    """Exact fields sampled at the nodes."""
    x = mesh.nodes
    return State(v=mms_velocity(x, t), p=mms_pressure(x, t),
                 phi=mms_phase(x, t), mu=mms_phase(x, t), t=t)


def l2_error(mesh, nodal, exact_fn, nquad=3):
    """Quadrature L2 norm of (interpolant of nodal values - exact_fn)."""
    rule = gauss_rule(nquad, mesh.dim)
    N, _ = shape_eval_many(rule.points)
    h = mesh.elem_h()
    W = rule.weights[None, :] * (h[:, None] / 2.0) ** mesh.dim
    xq = (mesh.elem_origin()[:, None, :]
          + (rule.points[None, :, :] + 1.0) * 0.5 * h[:, None, None])
    uq = mesh.gather(np.asarray(nodal)) @ N.T
    eq = np.asarray(exact_fn(xq.reshape(-1, mesh.dim))).reshape(uq.shape)
    return float(np.sqrt(np.sum(W * (uq - eq) ** 2)))


# ── case specifications ────────────────────────────────────────────────

@dataclass
class CaseSpec:
    """Everything a benchmark run needs besides the solver settings."""

    params: Params
    dt: float
    t_final: float
    min_level: int
    max_level: int
    domain_scale: float
    extents: tuple
    carve_fn: object
    bc: VelocityBC
    band: float = 0.999


def interface_band_width(cn, band=0.999):
    """Physical half-width |d| inside which |tanh profile| < band."""
    return float(np.arctanh(band) * np.sqrt(2.0) * cn)


def _carve_box(extents):
    hi = np.asarray([e[1] for e in extents])

    def keep(p):
        return np.all(p <= hi[None, :], axis=1)

    return keep


def bubble_spec(case=1, cn=5e-3, max_level=9, min_level=3, dim=2):
    """Rising-bubble benchmark on [0,2]x[0,4] (x[0,2] in 3D).

    Case 1: density and viscosity ratios 10, We=10 (stiff surface
    tension, modest deformation).  Case 2: ratios 1000/100, We=125.
    """
    if case == 1:
        params = Params(re=35.0, we=10.0, cn=cn, fr=1.0,
                        rho_minus=0.1, eta_minus=0.1)
    elif case == 2:
        params = Params(re=35.0, we=125.0, cn=cn, fr=1.0,
                        rho_minus=1e-3, eta_minus=0.01)
    else:
        raise ValueError("case must be 1 or 2")
    extents = ((0.0, 2.0), (0.0, 4.0)) + (((0.0, 2.0),) if dim == 3 else ())
    walls = ["y_min", "y_max"]
    slips = [("x_min", 0), ("external", 0)]
    if dim == 3:
        slips += [("z_min", 2), ("external", 2)]
    bc = VelocityBC(no_slip(walls, dim) + free_slip(slips))
    return CaseSpec(params=params, dt=2.5e-3, t_final=4.2,
                    min_level=min_level, max_level=max_level,
                    domain_scale=4.0, extents=extents,
                    carve_fn=_carve_box(extents), bc=bc)


def bubble_init(spec, dim=2):
    """(mesh, state) with the bubble interface resolved at max_level.

    phi = +1 in the continuous heavy fluid, -1 inside the bubble; the
    chemical potential starts at its discrete variational value so the
    first step sees a consistent pair.
    """
    center = np.array([1.0, 1.0, 1.0][:dim])
    r = 0.5
    cn = spec.params.cn

    def dist(p):
        return np.linalg.norm(p - center[None, :], axis=1) - r

    tree = refine_to_band(dist, interface_band_width(cn, spec.band),
                          spec.carve_fn, spec.min_level, spec.max_level,
                          dim, domain_scale=spec.domain_scale)
    mesh = build_mesh(balance_2to1(tree))
    phi = np.tanh(dist(mesh.nodes) / (np.sqrt(2.0) * cn))
    state = State(v=np.zeros((mesh.nnodes, dim)), p=np.zeros(mesh.nnodes),
                  phi=phi, mu=project_mu(mesh, spec.params, phi))
    return mesh, state


def bubble_metrics(mesh, phi, v, nquad=2):
    """(centroid, rise_velocity, bubble_mass) of the minus phase.

    Same quadrature and smoothed indicator (1 - phi)/2 as the mass
    diagnostics, so trajectories and drift reports are consistent.
    """
    rule = gauss_rule(nquad, mesh.dim)
    N, _ = shape_eval_many(rule.points)
    h = mesh.elem_h()
    W = rule.weights[None, :] * (h[:, None] / 2.0) ** mesh.dim
    xq = (mesh.elem_origin()[:, None, :]
          + (rule.points[None, :, :] + 1.0) * 0.5 * h[:, None, None])
    ind = 0.5 * (1.0 - np.clip(mesh.gather(phi) @ N.T, -1.0, 1.0))
    vol = float(np.sum(W * ind))
    if vol < 1e-12:
        raise ValueError("empty bubble")
    centroid = np.einsum("eq,eqj->j", W * ind, xq) / vol
    vyq = mesh.gather(v[:, 1]) @ N.T
    rise = float(np.sum(W * ind * vyq)) / vol
    return centroid, rise, vol


def rt_spec(cn=0.01, max_level=9, min_level=3, dim=2):
    """Rayleigh-Taylor channel [0,1]x[0,4] at At=0.5.

    Heavy fluid (phi=+1, density 1) on top, light below with density
    ratio 3 and matched kinematic viscosity, buoyancy-dominated
    (We=1000); no-slip on every wall.
    """
    params = Params(re=3000.0, we=1000.0, cn=cn, fr=1.0,
                    rho_minus=1.0 / 3.0, eta_minus=1.0 / 3.0)
    extents = ((0.0, 1.0), (0.0, 4.0)) + (((0.0, 1.0),) if dim == 3 else ())
    walls = ["x_min", "x_max", "y_min", "y_max", "external"]
    if dim == 3:
        walls += ["z_min", "z_max"]
    bc = VelocityBC(no_slip(walls, dim))
    at = (1.0 - params.rho_minus) / (1.0 + params.rho_minus)
    return CaseSpec(params=params, dt=1e-3, t_final=2.0 / np.sqrt(at),
                    min_level=min_level, max_level=max_level,
                    domain_scale=4.0, extents=extents,
                    carve_fn=_carve_box(extents), bc=bc)


def rt_height(dim, amp=0.1, spread=0.2, h0=2.0):
    """Signed height of a point above the perturbed interface.

    2D: single-mode cosine of amplitude amp; 3D: inverted Gaussian bump
    of amplitude amp and spread centered at (0.5, ., 0.5).  Positive on
    the heavy (top) side.
    """
    if dim == 2:
        def height(p):
            return (p[:, 1] - h0) + amp * np.cos(2 * PI * p[:, 0])
    else:
        def height(p):
            g = amp * np.exp(-((p[:, 0] - 0.5) ** 2
                               + (p[:, 2] - 0.5) ** 2) / spread)
            return (p[:, 1] - h0) + g
    return height


def rt_init(spec, dim=2, amp=0.1, spread=0.2):
    """(mesh, state) for the perturbed stratification."""
    cn = spec.params.cn
    height = rt_height(dim, amp=amp, spread=spread)
    tree = refine_to_band(height, interface_band_width(cn, spec.band),
                          spec.carve_fn, spec.min_level, spec.max_level,
                          dim, domain_scale=spec.domain_scale)
    mesh = build_mesh(balance_2to1(tree))
    phi = np.tanh(height(mesh.nodes) / (np.sqrt(2.0) * cn))
    state = State(v=np.zeros((mesh.nnodes, dim)), p=np.zeros(mesh.nnodes),
                  phi=phi, mu=project_mu(mesh, spec.params, phi))
    return mesh, state


def load_reference(name):
    """(time, value) arrays of a shipped reference curve; see
    data/README.md for provenance and fidelity."""
    text = (importlib.resources.files("octoflow") / "data" / name).read_text()
    rows = np.loadtxt(text.splitlines(), delimiter=",", skiprows=1)
    return rows[:, 0], rows[:, 1]


def rt_fronts(mesh, phi):
    """(top_front_y, bottom_front_y) of the phi=0 contour.

    Crossings are located by linear interpolation along axis-aligned
    element edges of the gathered corner values.

    Raises
    ------
    ValueError if no edge crosses zero.
    """
    phe = mesh.gather(np.asarray(phi))
    h = mesh.elem_h()
    oy = mesh.elem_origin()[:, 1]
    dim = mesh.dim
    nen = 2 ** dim
    ys = []
    for a in range(nen):
        for axis in range(dim):
            b = a | (1 << axis)
            if b == a:
                continue
            fa, fb = phe[:, a], phe[:, b]
            cross = (fa == 0.0) | (fa * fb < 0.0)
            if not cross.any():
                continue
            frac = np.zeros(cross.sum())
            denom = (fb - fa)[cross]
            nz = denom != 0.0
            frac[nz] = -fa[cross][nz] / denom[nz]
            ya = oy[cross] + ((a >> 1) & 1) * h[cross]
            if axis == 1:
                ys.append(ya + frac * h[cross])
            else:
                ys.append(ya)
    if not ys:
        raise ValueError("no interface crossing found")
    ys = np.concatenate(ys)
    return float(ys.max()), float(ys.min())
