"""Build a model from a :class:`RunConfig` and run it with on-disk output."""

import os

import numpy as np

from .. import burgers1d, euler2d, peakons, rigidbody
from ..errors import ConfigError, NumericalFailure
from ..meanfield import run as run_engine
from ..noise import basis_from_spec, wiener_path
from ..spectral import Grid1D, Grid2D
from .config import MODEL_DIM, serialize_config
from .output import DiagnosticsWriter, dump_field, load_field, write_plotdata


def _noise_length(cfg):
    if cfg.model == "burgers":
        return cfg.burgers.L
    if cfg.model == "peakons":
        return cfg.peakons.L
    return 2 * np.pi


def build_basis(cfg):
    nz = cfg.noise
    return basis_from_spec(nz.kind, MODEL_DIM[cfg.model], nu=nz.nu,
                           modes=[list(m) for m in nz.modes],
                           vectors=[list(v) for v in nz.vectors], L=_noise_length(cfg))


def _load_initial(path, shape, key):
    root, ext = os.path.splitext(path)
    stem = root if ext in (".f64", ".json") else path
    try:
        data, _ = load_field(stem)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load initial field '{path}': {exc}", key=key) from exc
    if data.shape != shape:
        raise ConfigError(f"initial field has shape {data.shape}, expected {shape}", key=key)
    return data


class _LoopTracker:
    """Advects a material loop with the frozen mean and member 0's noise.

    The engine calls ``check_step`` once before every step (and once after
    the last), which is exactly when the frozen mean of that step is known.
    """

    def __init__(self, loop, basis, grid, seed, steps, dt):
        self.loop = loop
        self.basis = basis
        self.grid = grid
        self.dt = dt
        self.steps = steps
        self.wiener = wiener_path(seed, 0, steps, len(basis), dt)
        self.step = 0

    def advance(self, mean_hat):
        if self.step >= self.steps:
            return
        v = euler2d.velocity_physical(mean_hat, self.grid)
        pts = euler2d.advect_loop(self.loop.points, euler2d.VelocitySampler(v, self.grid),
                                  self.basis, self.wiener[self.step], self.dt)
        if not np.all(np.isfinite(pts)):
            raise NumericalFailure("non-finite loop markers")
        loop = euler2d.MaterialLoop(pts, self.loop.resampled, list(self.loop.flags))
        sp = loop.spacing()
        if sp.max() > euler2d.RESAMPLE_RATIO * sp.min():
            try:
                loop.points = euler2d.resample_loop(loop.points)
                loop.resampled += 1
            except ValueError as exc:
                loop.flags.append(str(exc))
        self.loop = loop
        self.step += 1

    def circulation(self, omega_hat):
        u = euler2d.velocity_physical(omega_hat, self.grid)
        return euler2d.circulation(self.loop.points, euler2d.VelocitySampler(u, self.grid))


class _LoopEuler2D(euler2d.Euler2DSystem):
    def __init__(self, grid, basis, tracker):
        super().__init__(grid, basis)
        self.tracker = tracker

    def check_step(self, states, mean, dt):
        super().check_step(states, mean, dt)
        self.tracker.advance(mean)


def build_model(cfg):
    """Return ``(system, members0, diagnostics_hook, fields)``.

    ``fields(ensemble, mean)`` lists ``(name, array, L)`` to dump.
    """
    basis = build_basis(cfg)
    M = cfg.members
    if cfg.model == "rigidbody":
        rb = cfg.rigidbody
        system = rigidbody.RigidBodySystem(rigidbody.InertiaSpec.from_sequence(rb.inertia), basis)
        members0 = rigidbody.initial_members(rb.pi0, M)

        def fields(ens, mean):
            return [("members", ens.members, None), ("mean", np.asarray(mean), None)]

        return system, members0, system.diagnostics(initial=members0), fields

    if cfg.model == "burgers":
        bc = cfg.burgers
        grid = Grid1D(bc.n, bc.L)
        system = burgers1d.BurgersSystem(grid, basis)
        if bc.u0 == "sine":
            u0 = burgers1d.initial_field("sine", grid)
        else:
            u0 = _load_initial(bc.u0, (bc.n,), "burgers.u0")
        members0 = np.tile(u0, (M, 1))

        def fields(ens, mean):
            return [("mean_u", mean, grid.L), ("u_member0", ens.members[0], grid.L)]

        return system, members0, system.diagnostics(), fields

    if cfg.model == "peakons":
        pk = cfg.peakons
        system = peakons.PeakonSystem(pk.alpha, basis, pk.kernel, pk.L, pk.grid)
        members0 = peakons.initial_members(pk.q0, pk.p0, M)

        def fields(ens, mean):
            out = [("members", ens.members, pk.L)]
            if not isinstance(mean, peakons.PeakonSnapshot):
                out.append(("mean_m", system.spectral.to_grid(mean), pk.L))
            return out

        return system, members0, system.diagnostics(), fields

    ec = cfg.euler2d
    grid = Grid2D(ec.n)
    if ec.omega0 in ("taylor-green", "random-shear"):
        w0 = euler2d.initial_vorticity(ec.omega0, grid, cfg.seed)
    else:
        w0 = grid.project(_load_initial(ec.omega0, (ec.n, ec.n), "euler2d.omega0"))
        w0[0, 0] = 0.0
    members0 = np.tile(w0, (M, 1, 1))
    tracker = None
    if ec.loop:
        cx, cy, r, P = ec.loop
        tracker = _LoopTracker(euler2d.MaterialLoop.circle(cx, cy, r, int(P)), basis, grid,
                               cfg.seed, cfg.steps, cfg.dt)
        system = _LoopEuler2D(grid, basis, tracker)
    else:
        system = euler2d.Euler2DSystem(grid, basis)
    base_hook = system.diagnostics()

    def hook(ens, mean):
        out = base_hook(ens, mean)
        if tracker is not None:
            out["circulation"] = tracker.circulation(ens.members[0])
            out["loop_resampled"] = float(tracker.loop.resampled)
        return out

    def fields(ens, mean):
        return [("mean_omega", grid.ifft(mean), grid.L),
                ("omega_member0", grid.ifft(ens.members[0]), grid.L)]

    return system, members0, hook, fields


def execute(cfg, out_dir=None, workers=None, dump_fields=True):
    """Run ``cfg`` writing diagnostics, dumps and plot data under ``out_dir``.

    Returns the engine result. Numerical failures still leave the
    diagnostics (with the terminal ``failed`` record) and plot data on disk.
    """
    out_dir = cfg.output_dir if out_dir is None else out_dir
    workers = cfg.workers if workers is None else workers
    system, members0, base_hook, fields = build_model(cfg)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.toml"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_config(cfg))
    field_dir = os.path.join(out_dir, "fields")
    if dump_fields:
        os.makedirs(field_dir, exist_ok=True)
    records = []

    def hook(ens, mean):
        values = base_hook(ens, mean)
        if dump_fields:
            step = int(round(ens.t / cfg.dt))
            for name, arr, L in fields(ens, mean):
                meta = {"L": L, "t": float(ens.t), "name": name, "model": cfg.model,
                        "step": step}
                dump_field(arr, meta, os.path.join(field_dir, f"{name}_{step:07d}"))
        return values

    with DiagnosticsWriter(os.path.join(out_dir, "diagnostics.ndjson")) as writer:
        def on_record(rec):
            records.append(rec)
            writer.write(rec)

        try:
            return run_engine(system, members0, cfg.dt, cfg.T, mode=cfg.mode,
                              stepper=cfg.stepper, seed=cfg.seed, diagnostics=hook,
                              output_every=cfg.output_every, workers=workers,
                              on_record=on_record)
        finally:
            write_plotdata(records, os.path.join(out_dir, "plotdata"))
