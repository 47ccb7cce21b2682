"""Command-line pipeline: each subcommand reads and writes files.

    skyshade synth --scene dome --delta -1 --out dome.ply
    skyshade filter --in dome.ply --out dome_f.ply --voxel 0.1
    skyshade features --in dome_f.ply --out features.ply
    skyshade ground --in features.ply --out ground.ply
    skyshade predict --map features.ply --ground ground.ply --nmea base.log --out vmap.csv

Errors are reported as one JSON object on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cloud import MapCloud, load_cloud, save_cloud, voxel_filter
from .config import Config
from .errors import ConfigError, SkyshadeError
from .evaluation import (TrajectorySample, arc_lengths, associate, evaluate, geodetic_to_enu,
                         write_series_csv)
from .features import compute_features, read_features, write_features
from .ground import GroundSet, pose_frame, read_ground, segment_ground, write_ground
from .nmea import (build_snapshots, ground_truth_series, nearest_snapshot, parse_iso8601,
                   read_log, write_ground_truth_csv)
from .predictor import (CalibrationSample, VisibilityMap, calibrate, iter_histograms, predict,
                        predict_baseline, visibility_map, write_diagnostics,
                        write_visibility_csv, write_visibility_ply)
from .sky import SkyGrid, SkyMap, build_sky_map, read_sky_map, write_sky_map
from . import synth

log = logging.getLogger("skyshade")

_DAY = 86400.0

# flag -> (config key, type)
_CONFIG_FLAGS = {
    "--sigma-deg": ("sigma", float),
    "--voxel": ("d_box", float),
    "--knn": ("k_nn", int),
    "--dnn": ("d_nn", float),
    "--delta-ground": ("delta_ground", float),
    "--eps-deg": ("eps_deg", float),
    "--m-occ": ("m_occ", int),
    "--alpha": ("alpha", float),
    "--beta": ("beta", float),
    "--gamma": ("gamma", float),
    "--h-ant": ("h_ant", float),
    "--elevation-mask": ("elevation_mask", float),
    "--snr-cutoff": ("snr_cutoff", float),
    "--origin-lat": ("origin_lat", float),
    "--origin-lon": ("origin_lon", float),
}


class UsageError(SkyshadeError, ValueError):
    pass


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration (flags override the JSON file)")
    g.add_argument("--config", "--params", dest="config", type=Path,
                   help="JSON file with configuration values")
    for flag, (key, kind) in _CONFIG_FLAGS.items():
        g.add_argument(flag, dest=key, type=kind, default=None)
    g.add_argument("--grid", default=None, help="sky cell size as AZxEL degrees, e.g. 7.5x9")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    overrides = {key: getattr(args, key) for key, _ in _CONFIG_FLAGS.values()
                 if getattr(args, key, None) is not None}
    if getattr(args, "grid", None):
        try:
            grid = SkyGrid.parse(args.grid)
        except ValueError as exc:
            raise ConfigError("grid", str(exc)) from exc
        overrides.update(e=grid.e, l=grid.l)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def parse_time(text: str) -> float:
    """Seconds of day from ISO-8601 or a plain number of seconds."""
    try:
        return float(text)
    except ValueError:
        pass
    try:
        t = parse_iso8601(text if "T" in text else "1970-01-01T" + text)
    except ValueError as exc:
        raise UsageError(f"--time: cannot parse {text!r}") from exc
    return t.hour * 3600.0 + t.minute * 60.0 + t.second + t.microsecond * 1e-6


def _snapshots(path, cfg: Config):
    snaps = build_snapshots(read_log(path), strict=False, elevation_mask=cfg.elevation_mask,
                            snr_cutoff=cfg.snr_cutoff)
    if not snaps:
        raise UsageError(f"no constellation snapshot in {path}")
    return snaps


def select_snapshot(snapshots, time_of_day: float | None):
    """Snapshot closest to a time of day (first snapshot when no time is given)."""
    if time_of_day is None:
        return snapshots[0]

    def gap(s):
        d = abs((s.utc_time - time_of_day) % _DAY)
        return min(d, _DAY - d)
    return min(snapshots, key=gap)


def _sky_map(args, cfg: Config) -> SkyMap:
    if getattr(args, "skymap", None):
        sky = read_sky_map(args.skymap)
        if sky.grid != cfg.grid:
            raise ConfigError("grid", f"sky map uses {sky.grid}, configuration uses {cfg.grid}")
        return sky
    if not getattr(args, "nmea", None):
        raise UsageError("give --nmea or --skymap")
    time = None if args.time is None else parse_time(args.time)
    snap = select_snapshot(_snapshots(args.nmea, cfg), time)
    return build_sky_map(snap, cfg.grid, cfg.sigma)


def _write_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_filter(args, cfg: Config):
    cloud = load_cloud(args.input)
    out = voxel_filter(cloud, cfg.d_box)
    save_cloud(args.output, out, binary=not args.ascii)
    _write_json(None, {"input": len(cloud), "dropped_nonfinite": cloud.dropped, "output": len(out),
                       "voxel": cfg.d_box})


def cmd_features(args, cfg: Config):
    cloud = load_cloud(args.input)
    feats = compute_features(cloud, k_nn=cfg.k_nn, d_nn=cfg.d_nn, workers=args.workers)
    write_features(args.output, feats, binary=not args.ascii)
    _write_json(None, {"points": len(feats), "valid": int(feats.valid.sum()),
                       "k_nn": cfg.k_nn, "d_nn": cfg.d_nn})


def cmd_ground(args, cfg: Config):
    feats = read_features(args.input)
    ground = segment_ground(feats, cfg.delta_ground, cfg.eps_deg, cfg.h_ant,
                            offset=args.offset, stride=args.stride)
    write_ground(args.output, ground, binary=not args.ascii)
    _write_json(None, {"points": len(feats), "poses": len(ground)})


def cmd_skymap(args, cfg: Config):
    sky = _sky_map(args, cfg)
    write_sky_map(args.output, sky)
    _write_json(None, {"source_count": sky.source_count, "sum": sky.total, "utc_time": sky.utc_time,
                       "grid": str(sky.grid)})


def _write_vmap(path: Path, vmap: VisibilityMap, baseline: bool, ascii_ply: bool):
    if path.suffix.lower() == ".ply":
        write_visibility_ply(path, vmap, binary=not ascii_ply, baseline=baseline)
    else:
        write_visibility_csv(path, vmap, baseline=baseline)


def _predict(args, cfg: Config, baseline: bool):
    feats = read_features(args.map)
    ground = read_ground(args.ground)
    sky = _sky_map(args, cfg)
    diagnostics = [] if args.diagnostics else None
    vmap = visibility_map(ground, feats, sky, cfg.reduction, args.max_range, diagnostics)
    _write_vmap(args.output, vmap, baseline, args.ascii)
    if diagnostics is not None:
        for i, (pred, hist) in enumerate(diagnostics):
            write_diagnostics(args.diagnostics, i, pred, hist)
    values = vmap.v_hat_baseline if baseline else vmap.v_hat
    _write_json(None, {"poses": len(ground), "v": vmap.v, "utc_time": vmap.snapshot_time,
                       "mean_v_hat": float(values.mean()) if len(values) else None})


def cmd_predict(args, cfg: Config):
    _predict(args, cfg, baseline=False)


def cmd_baseline(args, cfg: Config):
    _predict(args, cfg, baseline=True)


def _trajectory(args, cfg: Config):
    """Measured fixes matched to ground poses, with their constellation sky maps."""
    if cfg.origin is None:
        raise ConfigError("origin_lat", "eval and calibrate need origin_lat and origin_lon")
    truth = ground_truth_series(read_log(args.nmea), elevation_mask=cfg.elevation_mask,
                                snr_cutoff=cfg.snr_cutoff)
    if args.truth_csv:
        write_ground_truth_csv(args.truth_csv, truth.samples)
    if args.constellation:
        snaps = _snapshots(args.constellation, cfg)
    else:
        snaps = _snapshots(args.nmea, cfg)
    feats = read_features(args.map)
    ground = read_ground(args.ground)
    samples = truth.samples
    lats = np.array([s.latitude for s in samples])
    lons = np.array([s.longitude for s in samples])
    assoc = associate(lats, lons, ground.positions, cfg.origin, args.radius)
    used = np.unique(assoc.pose_index)
    hists = {}
    if len(used):
        sub = GroundSet(ground.positions[used], ground.normals[used], used, ground.h_ant)
        for k, h in iter_histograms(sub, feats, cfg.grid, args.max_range):
            hists[int(used[k])] = h
    sky_cache: dict[int, SkyMap] = {}
    rows = []
    for fix_i, pose_i in zip(assoc.fix_index, assoc.pose_index):
        s = samples[fix_i]
        snap = nearest_snapshot(snaps, s.utc_time) if args.constellation is None else \
            select_snapshot(snaps, s.utc_time % _DAY)
        key = id(snap)
        if key not in sky_cache:
            sky_cache[key] = build_sky_map(snap, cfg.grid, cfg.sigma)
        rows.append((s, int(pose_i), sky_cache[key]))
    report = {"fixes": len(samples) + truth.invalid_fixes + truth.unmatched_fixes,
              "invalid_fixes": truth.invalid_fixes, "fixes_without_snapshot": truth.unmatched_fixes,
              "fixes_without_pose": assoc.dropped, "skipped_sentences": dict(truth.errors)}
    return ground, hists, rows, report


def cmd_eval(args, cfg: Config):
    ground, hists, rows, info = _trajectory(args, cfg)
    enu = geodetic_to_enu([r[0].latitude for r in rows], [r[0].longitude for r in rows], cfg.origin)
    arcs = arc_lengths(enu) if rows else np.zeros(0)
    series = []
    for (s, pose_i, sky), arc in zip(rows, arcs):
        pose, hist = ground[pose_i], hists[pose_i]
        series.append(TrajectorySample(
            float(arc), tuple(float(c) for c in ground.positions[pose_i]), float(s.v),
            predict(pose, sky, hist, cfg.reduction).v_hat,
            predict_baseline(pose, sky, hist), s.utc_time))
    report = dataclasses.asdict(evaluate(series, degree=args.degree))
    report.update(info)
    if args.series:
        write_series_csv(args.series, series, args.window)
    _write_json(args.output, report)


def cmd_calibrate(args, cfg: Config):
    ground, hists, rows, info = _trajectory(args, cfg)
    samples = [CalibrationSample(hists[pose_i], sky.in_frame(pose_frame(ground.normals[pose_i])),
                                 float(s.v)) for s, pose_i, sky in rows]
    result = calibrate(samples, m_occ=cfg.m_occ, default=cfg.reduction)
    tuned = dataclasses.replace(cfg, alpha=result.params.alpha, beta=result.params.beta,
                                gamma=result.params.gamma)
    tuned.save(args.output)
    info.update({"alpha": tuned.alpha, "beta": tuned.beta, "gamma": tuned.gamma,
                 "mae": result.mae, "samples": result.n_samples})
    _write_json(None, info)


def cmd_synth(args, cfg: Config):
    rng = np.random.default_rng(args.seed)
    if args.scene == "sky":
        groups = synth.random_constellation(rng, args.gps, args.glonass)
        lat0, lon0 = cfg.origin or (45.0, -73.0)
        epochs = [(args.start + k, lat0, lon0, groups) for k in range(args.epochs)]
        Path(args.output).write_text("\n".join(synth.synthetic_log(epochs)) + "\n")
        _write_json(None, {"scene": "sky", "epochs": args.epochs,
                           "satellites": sum(len(v) for v in groups.values())})
        return
    structure, ground, level = synth.scene_parts(args.scene, rng, args.delta, args.spacing, args.size)
    if args.as_features:
        feats = synth.scene_features(structure, level, ground)
        write_features(args.output, feats, binary=not args.ascii)
        n = len(feats)
    else:
        points = np.vstack([structure, ground])
        save_cloud(args.output, MapCloud(points), binary=not args.ascii,
                   comments=[f"scene {args.scene}", f"seed {args.seed}"])
        n = len(points)
    _write_json(None, {"scene": args.scene, "points": n, "delta": level})


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = argparse.ArgumentParser(prog="skyshade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[parent], help=help_text)
        p.set_defaults(func=func)
        return p

    def io(p, in_help="input file"):
        p.add_argument("--in", dest="input", type=Path, required=True, help=in_help)
        p.add_argument("--out", dest="output", type=Path, required=True)
        p.add_argument("--ascii", action="store_true", help="write ascii PLY")

    p = add("filter", cmd_filter, "keep one point per voxel")
    io(p, "PLY or XYZ CSV point cloud")

    p = add("features", cmd_features, "per-point shape features and normals")
    io(p, "filtered point cloud")
    p.add_argument("--workers", type=int, default=1, help="k-NN query threads (-1: all)")

    p = add("ground", cmd_ground, "segment ground and place virtual receivers")
    io(p, "feature PLY")
    p.add_argument("--offset", choices=("normal", "vertical"), default="normal",
                   help="direction of the antenna offset")
    p.add_argument("--stride", type=int, default=1, help="keep every n-th ground pose")

    def sky_source(p):
        p.add_argument("--nmea", type=Path, help="NMEA log carrying the constellation")
        p.add_argument("--time", help="snapshot time: ISO-8601 or seconds of day")
        p.add_argument("--skymap", type=Path, help="precomputed sky map CSV (instead of --nmea)")

    p = add("skymap", cmd_skymap, "sky map of a constellation snapshot")
    sky_source(p)
    p.add_argument("--out", dest="output", type=Path, required=True)

    for name, func, text in (("predict", cmd_predict, "predicted satellite count per ground pose"),
                             ("baseline", cmd_baseline, "line-of-sight baseline per ground pose")):
        p = add(name, func, text)
        p.add_argument("--map", type=Path, required=True, help="feature PLY")
        p.add_argument("--ground", type=Path, required=True, help="ground pose PLY")
        sky_source(p)
        p.add_argument("--out", dest="output", type=Path, required=True, help=".csv or .ply")
        p.add_argument("--ascii", action="store_true")
        p.add_argument("--max-range", type=float, default=None,
                       help="ignore map points farther than this (meters)")
        p.add_argument("--diagnostics", type=Path, default=None,
                       help="directory for per-pose grid CSVs")

    def trajectory(p):
        p.add_argument("--nmea", type=Path, required=True, help="receiver log with RMC and GSV")
        p.add_argument("--constellation", type=Path, default=None,
                       help="separate log providing the constellation (default: --nmea)")
        p.add_argument("--map", type=Path, required=True, help="feature PLY")
        p.add_argument("--ground", type=Path, required=True, help="ground pose PLY")
        p.add_argument("--radius", type=float, default=2.0, help="fix-to-pose match radius (m)")
        p.add_argument("--max-range", type=float, default=None)
        p.add_argument("--truth-csv", type=Path, default=None, help="write utc_time,lat,lon,v")

    p = add("eval", cmd_eval, "compare predictions with a measured trajectory")
    trajectory(p)
    p.add_argument("--out", dest="output", type=Path, default=None, help="JSON report (default stdout)")
    p.add_argument("--series", type=Path, default=None, help="smoothed series CSV")
    p.add_argument("--window", type=float, default=5.0, help="averaging window (m)")
    p.add_argument("--degree", type=int, default=2, help="fit polynomial degree")

    p = add("calibrate", cmd_calibrate, "grid-search reduction parameters on a trajectory")
    trajectory(p)
    p.add_argument("--out", dest="output", type=Path, required=True, help="tuned configuration JSON")

    p = add("synth", cmd_synth, "synthetic fixtures")
    p.add_argument("--scene", choices=synth.SCENES, required=True)
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=None, help="structure level (dome, canopy)")
    p.add_argument("--spacing", type=float, default=0.1)
    p.add_argument("--size", type=float, default=10.0)
    p.add_argument("--as-features", action="store_true",
                   help="write a feature PLY with the prescribed levels instead of raw points")
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--epochs", type=int, default=10, help="sky scene: number of fixes")
    p.add_argument("--start", type=float, default=43200.0, help="sky scene: first time of day (s)")
    p.add_argument("--gps", type=int, default=8)
    p.add_argument("--glonass", type=int, default=6)
    return parser


def _error(exc: BaseException) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload["field"] = exc.field
    return payload


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        args.func(args, cfg)
    except (SkyshadeError, ValueError, OSError, KeyError) as exc:
        print(json.dumps(_error(exc)), file=sys.stderr)
        return 1 if isinstance(exc, (SkyshadeError, ValueError)) else 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
