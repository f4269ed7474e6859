"""Run configuration, legacy VTK field output, diagnostics CSV, and
framed binary checkpoints."""

import struct
import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .chns import BlockConfig, DiagnosticsRow, Params, SolveSettings
from .chns import State
from .mesh import build_mesh
from .tree import Tree, corner_offsets


class ConfigError(ValueError):
    """Malformed or unknown configuration input."""


# ── configuration ───────────────────────────────────────────────────────

CASES = ("mms", "bubble1", "bubble2", "rt")


@dataclass
class Config:
    """Run settings; dt and t_final of 0 defer to the case defaults."""

    case: str = "mms"
    dim: int = 2
    params: dict = field(default_factory=dict)
    min_level: int = 3
    max_level: int = 8
    remesh_interval: int = 10
    dt: float = 0.0
    t_final: float = 0.0
    ns: dict = field(default_factory=dict)
    ch: dict = field(default_factory=dict)
    block_tol: float = 1e-4
    max_rounds: int = 20
    out_dir: str = "out"
    vtk_interval: int = 50
    csv_path: str = "diagnostics.csv"
    checkpoint_interval: int = 500


_PARAM_KEYS = ("re", "we", "cn", "pe", "fr", "rho_minus", "eta_minus")
_SOLVER_KEYS = {"rel_tol": float, "abs_tol": float, "step_tol": float,
                "max_iters": int, "ksp_rel_tol": float,
                "ksp_max_iters": int}
_SCHEMA = {
    ("case", "name"): ("case", str),
    ("case", "dim"): ("dim", int),
    ("mesh", "min_level"): ("min_level", int),
    ("mesh", "max_level"): ("max_level", int),
    ("mesh", "remesh_interval"): ("remesh_interval", int),
    ("time", "dt"): ("dt", float),
    ("time", "t_final"): ("t_final", float),
    ("solver", "block_tol"): ("block_tol", float),
    ("solver", "max_rounds"): ("max_rounds", int),
    ("output", "directory"): ("out_dir", str),
    ("output", "vtk_interval"): ("vtk_interval", int),
    ("output", "csv"): ("csv_path", str),
    ("output", "checkpoint_interval"): ("checkpoint_interval", int),
}
_SECTIONS = ("case", "mesh", "time", "params", "solver", "solver.ns",
             "solver.ch", "output")


def parse_config(text):
    """Parse sectioned key=value text into a Config.

    Unknown sections or keys are errors; all diagnostics carry the line
    number.  Absent keys keep documented defaults.
    """
    cfg = Config()
    section = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {ln}: malformed section header "
                                  f"{raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"line {ln}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got "
                              f"{raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {ln}: key outside any section")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        try:
            if section == "params":
                if key not in _PARAM_KEYS:
                    raise ConfigError(f"line {ln}: unknown parameter {key!r}")
                cfg.params[key] = float(val)
            elif section in ("solver.ns", "solver.ch"):
                if key not in _SOLVER_KEYS:
                    raise ConfigError(f"line {ln}: unknown solver key "
                                      f"{key!r}")
                d = cfg.ns if section == "solver.ns" else cfg.ch
                d[key] = _SOLVER_KEYS[key](val)
            else:
                if (section, key) not in _SCHEMA:
                    raise ConfigError(f"line {ln}: unknown key {key!r} in "
                                      f"[{section}]")
                attr, typ = _SCHEMA[(section, key)]
                setattr(cfg, attr, typ(val))
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"line {ln}: bad value {val!r} for "
                              f"{key!r}") from None
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.case not in CASES:
        raise ConfigError(f"unknown case {cfg.case!r}; expected one of "
                          f"{', '.join(CASES)}")
    if cfg.dim not in (2, 3):
        raise ConfigError(f"dim must be 2 or 3, got {cfg.dim}")
    if cfg.max_level < cfg.min_level:
        raise ConfigError(f"max_level {cfg.max_level} below min_level "
                          f"{cfg.min_level}")
    if cfg.dt < 0.0 or cfg.t_final < 0.0:
        raise ConfigError("dt and t_final must be positive")
    for name in ("remesh_interval", "vtk_interval", "checkpoint_interval"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be at least 1")


def serialize_config(cfg):
    """Config back to parseable text; parse(serialize(c)) == c."""
    out = [f"[case]", f"name = {cfg.case}", f"dim = {cfg.dim}", "",
           "[mesh]", f"min_level = {cfg.min_level}",
           f"max_level = {cfg.max_level}",
           f"remesh_interval = {cfg.remesh_interval}", "",
           "[time]", f"dt = {cfg.dt!r}", f"t_final = {cfg.t_final!r}", ""]
    if cfg.params:
        out.append("[params]")
        out += [f"{k} = {v!r}" for k, v in cfg.params.items()]
        out.append("")
    out += ["[solver]", f"block_tol = {cfg.block_tol!r}",
            f"max_rounds = {cfg.max_rounds}", ""]
    for name, d in (("solver.ns", cfg.ns), ("solver.ch", cfg.ch)):
        if d:
            out.append(f"[{name}]")
            out += [f"{k} = {v!r}" for k, v in d.items()]
            out.append("")
    out += ["[output]", f"directory = {cfg.out_dir}",
            f"vtk_interval = {cfg.vtk_interval}", f"csv = {cfg.csv_path}",
            f"checkpoint_interval = {cfg.checkpoint_interval}", ""]
    return "\n".join(out)


def apply_param_overrides(base, overrides):
    """Params with config overrides applied field-wise.

    pe is re-derived from cn when cn is overridden without an explicit
    pe, keeping the default coupling.
    """
    merged = {f.name: getattr(base, f.name) for f in fields(Params)}
    merged.update(overrides)
    if "cn" in overrides and "pe" not in overrides:
        merged["pe"] = None
    return Params(**merged)


def solve_settings(cfg):
    """SolveSettings composed from defaults plus config overrides."""
    s = SolveSettings()

    def apply(newton, linear, d):
        nkeys = {k: v for k, v in d.items() if not k.startswith("ksp_")}
        newton = replace(newton, **nkeys)
        if "ksp_rel_tol" in d:
            linear = replace(linear, rel_tol=d["ksp_rel_tol"])
        if "ksp_max_iters" in d:
            linear = replace(linear, max_iters=d["ksp_max_iters"])
        return newton, linear

    ns_n, ns_l = apply(s.ns_newton, s.ns_linear, cfg.ns)
    ch_n, ch_l = apply(s.ch_newton, s.ch_linear, cfg.ch)
    return SolveSettings(ns_newton=ns_n, ns_linear=ns_l, ch_newton=ch_n,
                         ch_linear=ch_l,
                         block=BlockConfig(tol=cfg.block_tol,
                                           max_rounds=cfg.max_rounds))


# ── diagnostics CSV ─────────────────────────────────────────────────────

def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


class DiagnosticsWriter:
    """Streams diagnostics rows to CSV, flushing per row so interrupted
    runs keep their tail."""

    def __init__(self, path, dim):
        self._f = open(path, "w")
        self._f.write(",".join(DiagnosticsRow.header(dim)) + "\n")
        self._f.flush()

    def write(self, row):
        self._f.write(",".join(_fmt(v) for v in row.as_list()) + "\n")
        self._f.flush()

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path):
    """Column name -> array mapping of a diagnostics CSV."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name]) for name in data.dtype.names}


# ── legacy VTK output ───────────────────────────────────────────────────

# bit-ordered corners to VTK vertex order (counterclockwise quads,
# bottom then top face for hexes)
_VTK_ORDER = {2: [0, 1, 3, 2], 3: [0, 1, 3, 2, 4, 5, 7, 6]}
_VTK_CELL = {2: 9, 3: 12}


def write_vtk(mesh, state, path):
    """Legacy ASCII unstructured-grid snapshot of one state.

    Hanging element corners are emitted as extra points at the
    constrained coordinates with interpolated values, so viewers render
    the mesh watertight without constraint support.
    """
    dim, nen = mesh.dim, 2 ** mesh.dim
    offs = corner_offsets(dim).astype(np.float64)
    h = mesh.elem_h()
    xc = (mesh.elem_origin()[:, None, :]
          + offs[None, :, :] * h[:, None, None])
    seglen = np.diff(mesh.gather_indptr)
    starts = mesh.gather_indptr[:-1]
    regular = (seglen == 1) & (mesh.gather_coeffs[starts] == 1.0)
    conn = np.full(mesh.nelems * nen, -1, dtype=np.int64)
    conn[regular] = mesh.gather_nodes[starts[regular]]
    hang = np.flatnonzero(~regular)
    conn[hang] = mesh.nnodes + np.arange(len(hang))
    conn = conn.reshape(mesh.nelems, nen)
    points = np.vstack([mesh.nodes, xc.reshape(-1, dim)[hang]])
    if dim == 2:
        points = np.hstack([points, np.zeros((len(points), 1))])

    arrays = {"p": state.p, "phi": state.phi, "mu": state.mu}
    vel = np.zeros((len(points), 3))
    vel[:mesh.nnodes, :dim] = state.v
    vel[mesh.nnodes:, :dim] = np.stack(
        [mesh.gather(state.v[:, j]).ravel()[hang] for j in range(dim)],
        axis=1)
    point_data = {name: np.concatenate([vals,
                                        mesh.gather(vals).ravel()[hang]])
                  for name, vals in arrays.items()}

    order = _VTK_ORDER[dim]
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"octoflow snapshot t={state.t:.12g}\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(points)} double\n")
        for p in points:
            f.write(f"{p[0]:.16g} {p[1]:.16g} {p[2]:.16g}\n")
        f.write(f"\nCELLS {mesh.nelems} {mesh.nelems * (nen + 1)}\n")
        for row in conn:
            f.write(f"{nen} " + " ".join(str(row[c]) for c in order) + "\n")
        f.write(f"\nCELL_TYPES {mesh.nelems}\n")
        f.write("\n".join([str(_VTK_CELL[dim])] * mesh.nelems) + "\n")
        f.write(f"\nPOINT_DATA {len(points)}\n")
        f.write("VECTORS velocity double\n")
        for p in vel:
            f.write(f"{p[0]:.16g} {p[1]:.16g} {p[2]:.16g}\n")
        for name, vals in point_data.items():
            f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            f.write("\n".join(f"{v:.16g}" for v in vals) + "\n")


# ── checkpoints ─────────────────────────────────────────────────────────

_MAGIC = b"OCPT"
_VERSION = 1


def _write_frame(f, name, arr):
    arr = np.ascontiguousarray(arr)
    payload = arr.tobytes()
    nb, db = name.encode(), arr.dtype.str.encode()
    f.write(struct.pack("<H", len(nb)) + nb)
    f.write(struct.pack("<H", len(db)) + db)
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    f.write(struct.pack("<Q", len(payload)))
    f.write(payload)
    f.write(struct.pack("<I", zlib.crc32(payload)))


def _need(f, n):
    b = f.read(n)
    if len(b) < n:
        raise ValueError("truncated checkpoint")
    return b


def _read_frame(f):
    name = _need(f, struct.unpack("<H", _need(f, 2))[0]).decode()
    dtype = np.dtype(_need(f, struct.unpack("<H", _need(f, 2))[0]).decode())
    ndim = struct.unpack("<B", _need(f, 1))[0]
    shape = struct.unpack(f"<{ndim}q", _need(f, 8 * ndim))
    nbytes = struct.unpack("<Q", _need(f, 8))[0]
    payload = _need(f, nbytes)
    crc = struct.unpack("<I", _need(f, 4))[0]
    if zlib.crc32(payload) != crc:
        raise ValueError(f"checkpoint payload corrupted: {name}")
    return name, np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def checkpoint_save(mesh, state, path):
    """Framed binary snapshot of the tree and nodal fields; round trips
    are bit exact."""
    tree = mesh.tree
    frames = [("meta", np.array([mesh.dim, tree.domain_scale, state.t])),
              ("tree_anchors", tree.anchors),
              ("tree_levels", tree.levels),
              ("tree_flags", tree.flags),
              ("v", state.v), ("p", state.p),
              ("phi", state.phi), ("mu", state.mu)]
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<HBI", _VERSION, 1, len(frames)))
        for name, arr in frames:
            _write_frame(f, name, arr)


def checkpoint_load(path):
    """(mesh, state) from a checkpoint_save file."""
    with open(path, "rb") as f:
        if _need(f, 4) != _MAGIC:
            raise ValueError("not a checkpoint file")
        version, endian, nframes = struct.unpack("<HBI", _need(f, 7))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if endian != 1:
            raise ValueError("unsupported byte order")
        frames = dict(_read_frame(f) for _ in range(nframes))
    try:
        dim, scale, t = frames["meta"]
        tree = Tree(frames["tree_anchors"], frames["tree_levels"],
                    frames["tree_flags"], int(dim), float(scale))
        state = State(v=frames["v"], p=frames["p"], phi=frames["phi"],
                      mu=frames["mu"], t=float(t))
    except KeyError as missing:
        raise ValueError(f"checkpoint missing frame {missing}") from None
    return build_mesh(tree), state
