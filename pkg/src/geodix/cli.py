"""Experiment driver: JSON config in, datasets, charts and reports out.

Subcommands map onto the library stages (forward data generation,
curvature inversion, chart recovery, truth comparison, chain distances)
plus an end-to-end demo.  Every artifact embeds the hash of the fully
materialized configuration, and nothing depends on wall clock or worker
scheduling, so reruns are byte-identical.

Exit codes: 0 success, 1 bad input (config, files, flags), 2 numerical
failure (the message reports how far the computation got), 3 tolerance
gate failed.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import forward, manifold, metric_recovery, surfacedata
from .errors import ConfigError, GeodixError, InputError, NumericalError

MIN_WINDOW_NODES = 5


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Validated experiment description, one JSON file per run."""
    metric: dict
    dim: int
    center: list
    base_direction: list
    t0: float
    xhat_extent: float
    xhat_step: float
    dt: float
    dr: float
    t_max: float
    r_max: float
    strict_step: bool = False
    curvature_bound: float | None = None
    ball: float | None = None
    restart_offsets: tuple = ()
    noise_sigma: float = 0.0
    seed: int = 0
    output_dir: str = "out"
    tolerance: float = 1e-3

    def materialized(self) -> dict:
        """Every field with defaults filled in, the hashing basis."""
        out = {
            "metric": self.metric,
            "dim": self.dim,
            "sigma0": {"center": list(self.center),
                       "base_direction": list(self.base_direction),
                       "t0": self.t0,
                       "xhat_extent": self.xhat_extent,
                       "xhat_step": self.xhat_step},
            "grids": {"dt": self.dt, "dr": self.dr,
                      "t_max": self.t_max, "r_max": self.r_max},
            "inversion": {"strict_step": self.strict_step,
                          "curvature_bound": self.curvature_bound,
                          "ball": self.ball,
                          "restart_offsets": list(self.restart_offsets)},
            "noise": {"sigma": self.noise_sigma, "seed": self.seed},
            "output": {"dir": self.output_dir},
            "tolerance": self.tolerance,
        }
        return out

    def identity(self) -> dict:
        # the output directory names where results land, not what they are
        return {k: v for k, v in self.materialized().items() if k != "output"}

    def config_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def xhat(self) -> np.ndarray:
        k = int(np.floor(self.xhat_extent / self.xhat_step + 1e-9))
        axis = np.arange(-k, k + 1) * self.xhat_step
        if self.dim == 2:
            return axis.reshape(-1, 1)
        a, b = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([a.ravel(), b.ravel()])

    def sigma0_spec(self) -> forward.Sigma0Spec:
        return forward.Sigma0Spec(center=self.center,
                                  base_direction=self.base_direction,
                                  t0=self.t0, xhat=self.xhat())

    def t_grid(self) -> np.ndarray:
        return np.arange(1, int(round(self.t_max / self.dt))) * self.dt


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}.{key}: missing")
    return section[key]


def _positive(value, where: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: not a number: {value!r}") from None
    if not np.isfinite(v) or v <= 0:
        raise ConfigError(f"{where}: must be positive, got {value!r}")
    return v


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    metric = _require(raw, "metric", "config")
    dim = int(_require(raw, "dim", "config"))
    if dim not in (2, 3):
        raise ConfigError(f"config.dim: must be 2 or 3, got {dim}")
    if not isinstance(metric, dict) or "kind" not in metric:
        raise ConfigError("config.metric: need a {kind, dim, params} object")
    if int(metric.get("dim", dim)) != dim:
        raise ConfigError("config.metric.dim: does not match config.dim")

    s0 = _require(raw, "sigma0", "config")
    center = _require(s0, "center", "config.sigma0")
    base = _require(s0, "base_direction", "config.sigma0")
    if len(center) != dim or len(base) != dim:
        raise ConfigError("config.sigma0: center and base_direction must "
                          f"have {dim} components")
    t0 = _positive(_require(s0, "t0", "config.sigma0"), "config.sigma0.t0")
    extent = _positive(_require(s0, "xhat_extent", "config.sigma0"),
                       "config.sigma0.xhat_extent")
    xstep = _positive(_require(s0, "xhat_step", "config.sigma0"),
                      "config.sigma0.xhat_step")

    grids = _require(raw, "grids", "config")
    dt = _positive(_require(grids, "dt", "config.grids"), "config.grids.dt")
    dr = _positive(_require(grids, "dr", "config.grids"), "config.grids.dr")
    t_max = _positive(_require(grids, "t_max", "config.grids"),
                      "config.grids.t_max")
    r_max = _positive(_require(grids, "r_max", "config.grids"),
                      "config.grids.r_max")
    # the marcher needs a full window of data beyond the deepest origin
    if t_max <= r_max + 4.0 * dt * MIN_WINDOW_NODES:
        raise ConfigError("config.grids: t_max must exceed r_max plus the "
                          f"minimum window {4.0 * dt * MIN_WINDOW_NODES:.6g}")

    inv = raw.get("inversion", {})
    kb = inv.get("curvature_bound")
    ball = inv.get("ball")
    cfg = ExperimentConfig(
        metric=metric, dim=dim, center=list(center),
        base_direction=list(base), t0=t0, xhat_extent=extent,
        xhat_step=xstep, dt=dt, dr=dr, t_max=t_max, r_max=r_max,
        strict_step=bool(inv.get("strict_step", False)),
        curvature_bound=None if kb is None
        else _positive(kb, "config.inversion.curvature_bound"),
        ball=None if ball is None else _positive(ball,
                                                 "config.inversion.ball"),
        restart_offsets=tuple(float(o)
                              for o in inv.get("restart_offsets", ())),
        noise_sigma=float(raw.get("noise", {}).get("sigma", 0.0)),
        seed=int(raw.get("noise", {}).get("seed", 0)),
        output_dir=str(raw.get("output", {}).get("dir", "out")),
        tolerance=_positive(raw.get("tolerance", 1e-3), "config.tolerance"),
    )
    if cfg.noise_sigma < 0:
        raise ConfigError("config.noise.sigma: must be non-negative")
    try:
        manifold.from_config(metric)
    except GeodixError as e:
        raise ConfigError(f"config.metric: {e}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} line {e.lineno}: {e.msg}") from None
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _write_json(path, obj) -> str:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return str(path)


def _outdir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _dataset_stem(cfg: ExperimentConfig) -> str:
    return os.path.join(cfg.output_dir, "dataset")


def _load_dataset(path):
    try:
        return forward.load_dataset(path)
    except OSError as e:
        raise InputError(f"dataset: cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"dataset {path} line {e.lineno}: {e.msg}") from None


def _conjugate_crossings(t_grid, samples, valid, r_max) -> int:
    """Caustic passages inside the marched range.

    A conjugate point at data time t_c < r_max shows up either as a pole
    of the shape operator (1/|S| dips below the node spacing in a V shape)
    or, when a node lands on the root itself, as an interior masked band.
    """
    t = np.asarray(t_grid, dtype=float)
    ok = np.asarray(valid, dtype=bool)
    dt = float(t[1] - t[0])
    q = np.full(len(t), np.inf)
    norms = np.linalg.norm(np.asarray(samples)[ok], axis=(1, 2))
    q[ok] = 1.0 / np.maximum(norms, 1e-300)
    count = 0
    for i in range(1, len(t) - 1):
        if t[i] > r_max or not (ok[i - 1] and ok[i] and ok[i + 1]):
            continue
        if q[i] < 2.0 * dt and q[i - 1] >= q[i] < q[i + 1]:
            count += 1
    inside = False
    for i in range(len(t)):
        if not ok[i] and not inside:
            inside = True
            start = i
        elif ok[i] and inside:
            inside = False
            # bands at the grid edges were never bracketed, so not crossed
            if start > 0 and t[start] <= r_max:
                count += 1
    return count


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_forward(cfg: ExperimentConfig, jobs: int = 1) -> int:
    m = manifold.from_config(cfg.metric)
    ds = forward.forward_dataset(m, cfg.sigma0_spec(), cfg.t_grid(),
                                 dr=cfg.dr, noise_sigma=cfg.noise_sigma,
                                 seed=cfg.seed, jobs=jobs)
    outdir = _outdir(cfg)
    files = forward.save_dataset(ds, _dataset_stem(cfg))
    masked = int((~ds.mask).sum())
    report = {
        "command": "forward",
        "config_hash": cfg.config_hash(),
        "config": cfg.identity(),
        "xhat_rows": int(ds.xhat.shape[0]),
        "t_nodes": int(len(ds.t_grid)),
        "masked_total": masked,
        "masked_fraction": float((~ds.mask).mean()),
        "per_xhat_masked": [int(v) for v in (~ds.mask).sum(axis=1)],
        "files": [os.path.basename(str(f)) for f in files],
    }
    rp = _write_json(os.path.join(outdir, "forward_report.json"), report)
    print(f"dataset: {report['xhat_rows']} xhat rows x "
          f"{report['t_nodes']} t nodes, masked {masked} "
          f"({report['masked_fraction']:.2%})")
    print(f"wrote {files[0]}, {files[1]}, {rp}")
    return 0


def _invert_row(args):
    from . import inversion
    t_grid, samples, valid, cfg_tuple = args
    (r_max, dr, strict, offsets, kb, sigma) = cfg_tuple
    return inversion.reconstruct_along_geodesic(
        t_grid, samples, valid, r_max, dr=dr, strict_step=strict,
        restart_offsets=offsets, k_prior=kb, declared_noise=sigma)


def cmd_invert(cfg: ExperimentConfig, dataset=None, jobs: int = 1) -> int:
    ds = _load_dataset(dataset or _dataset_stem(cfg) + ".json")
    outdir = _outdir(cfg)
    cfg_tuple = (cfg.r_max, cfg.dr, cfg.strict_step,
                 tuple(cfg.restart_offsets), cfg.curvature_bound,
                 cfg.noise_sigma)
    rows = [(ds.t_grid, ds.samples[k], ds.mask[k], cfg_tuple)
            for k in range(ds.samples.shape[0])]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_invert_row, rows))
    else:
        results = [_invert_row(row) for row in rows]

    mm = ds.samples.shape[-1]
    curv_path = os.path.join(outdir, "curvature.csv")
    with open(curv_path, "w") as fh:
        cols = [f"R_{i + 1}{j + 1}" for i in range(mm) for j in range(mm)]
        fh.write(",".join(["xhat_index", "r"] + cols) + "\n")
        fh.write(f"# config {cfg.config_hash()}\n")
        for k, res in enumerate(results):
            prof = res.profile
            for i, r in enumerate(prof.r_grid):
                vals = [repr(float(v)) for v in prof.R[i].ravel()]
                fh.write(",".join([str(k), repr(float(r))] + vals) + "\n")
    shape_path = os.path.join(outdir, "shape.csv")
    with open(shape_path, "w") as fh:
        cols = [f"S_{i + 1}{j + 1}" for i in range(mm) for j in range(mm)]
        fh.write(",".join(["xhat_index", "strip_index", "r_origin",
                           "t_first"] + cols) + "\n")
        fh.write(f"# config {cfg.config_hash()}\n")
        for k, res in enumerate(results):
            for s_idx, (r0, samples, valid) in enumerate(res.strips):
                live = np.flatnonzero(valid)
                if live.size == 0:
                    continue
                i0 = int(live[0])
                vals = [repr(float(v)) for v in samples[i0].ravel()]
                fh.write(",".join([str(k), str(s_idx), repr(float(r0)),
                                   repr(float(ds.t_grid[i0]))] + vals) + "\n")

    per_xhat = []
    for k, res in enumerate(results):
        crossed = _conjugate_crossings(ds.t_grid, ds.samples[k],
                                       ds.mask[k], cfg.r_max)
        per_xhat.append({
            "xhat": [float(v) for v in ds.xhat[k]],
            "r_reached": float(res.profile.r_grid[-1]),
            "joints": len(res.joints),
            "conjugate_points_crossed": crossed,
            "k_bound": float(res.k_bound),
        })
        noun = ("conjugate point" if crossed == 1 else "conjugate points")
        print(f"xhat {k}: reached r={per_xhat[-1]['r_reached']:.6g}, "
              f"crossed {crossed} {noun}")
    report = {
        "command": "invert",
        "config_hash": cfg.config_hash(),
        "per_xhat": per_xhat,
        "files": [os.path.basename(curv_path),
                  os.path.basename(shape_path)],
    }
    rp = _write_json(os.path.join(outdir, "invert_report.json"), report)
    print(f"wrote {curv_path}, {shape_path}, {rp}")
    return 0


def cmd_recover(cfg: ExperimentConfig, dataset=None, jobs: int = 1) -> int:
    ds = _load_dataset(dataset or _dataset_stem(cfg) + ".json")
    outdir = _outdir(cfg)
    chart = metric_recovery.recover_chart(
        ds, t0=cfg.t0, r_max=cfg.r_max, dr=cfg.dr,
        strict_step=cfg.strict_step, restart_offsets=cfg.restart_offsets,
        declared_noise=cfg.noise_sigma, jobs=jobs)
    files = metric_recovery.save_chart(chart,
                                       os.path.join(outdir, "chart"))
    report = {
        "command": "recover",
        "config_hash": cfg.config_hash(),
        "masked_fraction": float(1.0 - chart.mask.mean()),
        "r_nodes": int(len(chart.r_grid)),
        "files": [os.path.basename(str(f)) for f in files],
    }
    rp = _write_json(os.path.join(outdir, "recover_report.json"), report)
    print(f"chart: {chart.xhat.shape[0]} xhat rows x {report['r_nodes']} "
          f"r nodes, masked {report['masked_fraction']:.2%}")
    print(f"wrote {files[0]}, {files[1]}, {rp}")
    return 0


def cmd_compare(cfg: ExperimentConfig, chart=None,
                tolerance: float | None = None) -> int:
    outdir = _outdir(cfg)
    chart_path = chart or os.path.join(outdir, "chart.json")
    try:
        rec = metric_recovery.load_chart(chart_path)
    except OSError as e:
        raise InputError(f"chart: cannot read {chart_path}: {e}") from None
    m = manifold.from_config(cfg.metric)
    truth = metric_recovery.ground_truth_chart(m, cfg.sigma0_spec(),
                                               rec.xhat, rec.r_grid)
    tfiles = metric_recovery.save_chart(truth,
                                        os.path.join(outdir, "chart_truth"))
    err = metric_recovery.chart_error(rec, truth)
    tol = cfg.tolerance if tolerance is None else float(tolerance)
    passed = err["max_rel"] is not None and err["max_rel"] <= tol
    report = {
        "command": "compare",
        "config_hash": cfg.config_hash(),
        "tolerance": tol,
        "passed": bool(passed),
        "files": [os.path.basename(str(f)) for f in tfiles],
        **err,
    }
    rp = _write_json(os.path.join(outdir, "compare_report.json"), report)
    shown = "n/a" if err["max_rel"] is None else f"{err['max_rel']:.3e}"
    print(f"max_rel={shown} tolerance={tol:.3e} "
          f"{'PASS' if passed else 'FAIL'} ({rp})")
    return 0 if passed else 3


def cmd_distance(cfg: ExperimentConfig) -> int:
    m = manifold.from_config(cfg.metric)
    outdir = _outdir(cfg)
    rng = np.random.default_rng(cfg.seed)
    pairs = [(np.array([-0.4, 0.0]), np.array([0.4, 0.0]))]
    while len(pairs) < 20:
        p = rng.uniform(-0.55, 0.55, cfg.dim)
        q = rng.uniform(-0.55, 0.55, cfg.dim)
        d = np.linalg.norm(q - p)
        if (0.3 <= d <= 0.85 and np.linalg.norm(p) < 0.6
                and np.linalg.norm(q) < 0.6):
            pairs.append((p, q))
    region = [[-1.0, 1.0]] * cfg.dim
    fam, centers, radii = surfacedata.chain_witness_family(
        m, pairs, region, pad_to=300, pad_box=[[-0.6, 0.6]] * cfg.dim,
        pts_per_surface=96, seed=cfg.seed)
    surfacedata.save_family(fam.surfaces,
                            os.path.join(outdir, "family"))
    rels = []
    rows = []
    for a, b in pairs:
        true = _segment_length(m, a, b)
        est = surfacedata.chain_distance(fam, a, b, merge_radius=0.003)
        rels.append(est / true - 1.0)
        rows.append({"a": [float(v) for v in a], "b": [float(v) for v in b],
                     "true": float(true), "estimate": float(est),
                     "rel_error": float(rels[-1])})
    report = {
        "command": "distance",
        "config_hash": cfg.config_hash(),
        "surfaces": int(len(radii)),
        "pairs": rows,
        "max_abs_rel_error": float(np.abs(rels).max()),
    }
    rp = _write_json(os.path.join(outdir, "distance_report.json"), report)
    print(f"20 pairs over {len(radii)} surfaces: max |rel error| = "
          f"{report['max_abs_rel_error']:.4f}")
    print(f"wrote {rp}")
    return 0


def _segment_length(m, a, b) -> float:
    q = np.linspace(0.0, 1.0, 257)
    seg = a[None, :] + q[:, None] * (b - a)[None, :]
    d_chart = float(np.linalg.norm(b - a))
    tv = (b - a) / d_chart
    g = manifold.metric_batch(m, seg)
    speed = np.sqrt(np.einsum("i,kij,j->k", tv, g, tv))
    return float(np.trapezoid(speed, dx=d_chart / (len(q) - 1)))


DEMO_CONFIG = {
    "metric": {"kind": "euclidean", "dim": 2, "params": {}},
    "dim": 2,
    "sigma0": {"center": [0.0, 0.0], "base_direction": [1.0, 0.0],
               "t0": 1.0, "xhat_extent": 0.2, "xhat_step": 0.2},
    "grids": {"dt": 0.01, "dr": 0.01, "t_max": 2.2, "r_max": 0.8},
    "noise": {"sigma": 0.0, "seed": 0},
    "tolerance": 1e-4,
}


def cmd_demo(output_dir: str, jobs: int = 1) -> int:
    raw = dict(DEMO_CONFIG)
    raw["output"] = {"dir": output_dir}
    cfg = config_from_dict(raw)
    _outdir(cfg)
    _write_json(os.path.join(output_dir, "demo_config.json"),
                cfg.materialized())
    for step in (cmd_forward, cmd_invert, cmd_recover):
        code = step(cfg, jobs=jobs)
        if code:
            return code
    return cmd_compare(cfg)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # route usage problems to exit code 1 like any other bad input
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geodix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=False):
        sp.add_argument("--config", required=True, help="experiment JSON")
        sp.add_argument("--output", help="override the output directory")
        sp.add_argument("--jobs", type=int, default=1,
                        help="worker processes")
        sp.add_argument("--strict-step", action="store_true",
                        help="enforce the guaranteed step cap")
        sp.add_argument("--noise-sigma", type=float,
                        help="override noise level")
        sp.add_argument("--seed", type=int, help="override noise seed")
        sp.add_argument("--restart-offsets",
                        help="comma-separated forced joint positions")
        if dataset:
            sp.add_argument("--dataset", help="dataset JSON path")

    common(sub.add_parser("forward", help="generate a wavefront dataset"))
    common(sub.add_parser("invert", help="recover curvature profiles"),
           dataset=True)
    common(sub.add_parser("recover", help="assemble the chart metric"),
           dataset=True)
    cp = sub.add_parser("compare", help="recovered chart against truth")
    common(cp)
    cp.add_argument("--chart", help="chart JSON path")
    cp.add_argument("--tolerance", type=float,
                    help="override the gate tolerance")
    common(sub.add_parser("distance", help="chain-distance benchmark"))
    dp = sub.add_parser("demo", help="small end-to-end run")
    dp.add_argument("--output", default="demo_out")
    dp.add_argument("--jobs", type=int, default=1)
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if args.output is not None:
        updates["output_dir"] = args.output
    if args.strict_step:
        updates["strict_step"] = True
    if args.noise_sigma is not None:
        if args.noise_sigma < 0:
            raise ConfigError("--noise-sigma: must be non-negative")
        updates["noise_sigma"] = args.noise_sigma
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.restart_offsets is not None:
        try:
            updates["restart_offsets"] = tuple(
                float(v) for v in args.restart_offsets.split(",") if v)
        except ValueError:
            raise ConfigError("--restart-offsets: expected comma-separated "
                              f"numbers, got {args.restart_offsets!r}") from None
    return replace(cfg, **updates) if updates else cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "demo":
            return cmd_demo(args.output, jobs=args.jobs)
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "forward":
            return cmd_forward(cfg, jobs=args.jobs)
        if args.command == "invert":
            return cmd_invert(cfg, dataset=args.dataset, jobs=args.jobs)
        if args.command == "recover":
            return cmd_recover(cfg, dataset=args.dataset, jobs=args.jobs)
        if args.command == "compare":
            return cmd_compare(cfg, chart=args.chart,
                               tolerance=args.tolerance)
        if args.command == "distance":
            return cmd_distance(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
