"""Command-line front end: ``voxfcm <command> --config run.toml``.

Exit codes: 0 success, 1 configuration error, 2 geometry error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import boundary as bc
from . import validation
from .homogenization import (FCMModel, HomogenizationError, compute_tensor, order_relation_check,
                             tensile_test, window_sweep)
from .material import (IsotropicMaterial, MaterialError, engineering_constants, hashin_shtrikman_upper,
                       isotropic_tensor, reuss_bound, tensor_to_csv, voigt_bound)
from .mesh import MeshError
from .preintegration import CacheMemoryError
from .solver import ConvergenceError, SolverOptions
from .voxel_model import (DEFAULT_ALPHA_VOID, EmptyGeometryError, IndicatorField, VoxelFormatError,
                          flood_fill_clean, load_voxel_grid, make_cubic_void_cell, porosity,
                          segment_threshold, write_mask)

log = logging.getLogger("voxfcm")

EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_SOLVER = 0, 1, 2, 3
COMMANDS = ("segment", "homogenize", "tensile", "sweep", "bounds", "validate-table1",
            "validate-cubic-void", "validate-cell-count")

DEFAULTS = {
    "input": {"path": None, "synthetic": None},
    "segmentation": {"threshold": None, "connectivity": 6, "alpha_void": DEFAULT_ALPHA_VOID, "clean": True},
    "mesh": {"voxels_per_cell": None, "p": 2},
    "material": {"E": None, "nu": None},
    "analysis": {"bcs": ["KUBC", "PBC", "SUBC"], "window": None, "stride": None, "axis": "z",
                 "strain": 1e-3, "quantity": "E_zz", "porosities": [0.0, 0.1, 0.2, 0.3, 0.4,
                                                                    0.5, 0.6, 0.7, 0.8, 0.9],
                 "resolution": 96, "void_edges": [1, 2, 3, 4, 5, 6, 7, 8, 9], "counts": [1, 2, 3],
                 "void_edge": 9.0, "curve_steps": 10},
    "solver": {"tol": 1e-10, "max_iter": None, "threads": 1, "method": "auto", "preconditioner": "jacobi"},
    "output": {"dir": "out"},
}

# command-line flags that override dotted config keys
OVERRIDES = {
    "input": ("input.path", str), "threshold": ("segmentation.threshold", float),
    "connectivity": ("segmentation.connectivity", int), "alpha_void": ("segmentation.alpha_void", float),
    "voxels_per_cell": ("mesh.voxels_per_cell", int), "p": ("mesh.p", int),
    "E": ("material.E", float), "nu": ("material.nu", float),
    "bc": ("analysis.bcs", str), "window": ("analysis.window", int), "stride": ("analysis.stride", int),
    "axis": ("analysis.axis", str), "strain": ("analysis.strain", float),
    "resolution": ("analysis.resolution", int), "tol": ("solver.tol", float),
    "max_iter": ("solver.max_iter", int), "threads": ("solver.threads", int), "outdir": ("output.dir", str),
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict) and k != "synthetic":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be a table")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _set(cfg: dict, dotted: str, value) -> None:
    sec, key = dotted.split(".")
    if key == "bcs" and isinstance(value, str):
        value = [s.strip() for s in value.split(",") if s.strip()]
    cfg[sec][key] = value


def _triple(v, name):
    if v is None:
        return None
    t = (v,) * 3 if isinstance(v, (int, float)) else tuple(v)
    if len(t) != 3 or any(not isinstance(x, int) or x < 1 for x in t):
        raise ConfigError(f"{name} must be a positive integer or a list of three")
    return t


def validate_config(cfg: dict, command: str) -> dict:
    """Check types and ranges; raises ConfigError."""
    inp = cfg["input"]
    needs_field = command in ("segment", "homogenize", "tensile", "sweep")
    if needs_field:
        if (inp["path"] is None) == (inp["synthetic"] is None):
            raise ConfigError("exactly one of input.path and input.synthetic is required")
        if inp["path"] is not None:
            path = Path(inp["path"])
            if not path.is_file():
                raise ConfigError(f"input file {path} does not exist")
            if not Path(str(path) + ".json").is_file():
                raise ConfigError(f"metadata sidecar {path}.json does not exist")
            if cfg["segmentation"]["threshold"] is None:
                raise ConfigError("segmentation.threshold is required for raw voxel input")
        else:
            syn = inp["synthetic"]
            if not isinstance(syn, dict) or syn.get("kind") not in ("cubic_void", "solid"):
                raise ConfigError("input.synthetic.kind must be 'cubic_void' or 'solid'")
            for k in ("edge", "resolution"):
                if k not in syn:
                    raise ConfigError(f"input.synthetic.{k} is required")
    seg = cfg["segmentation"]
    if seg["connectivity"] not in (6, 26):
        raise ConfigError("segmentation.connectivity must be 6 or 26")
    if not 0 < float(seg["alpha_void"]) <= 1e-6:
        raise ConfigError("segmentation.alpha_void must lie in (0, 1e-6]")
    mesh = cfg["mesh"]
    if not isinstance(mesh["p"], int) or not 1 <= mesh["p"] <= 4:
        raise ConfigError("mesh.p must be an integer in 1..4")
    _triple(mesh["voxels_per_cell"], "mesh.voxels_per_cell")
    if command in ("homogenize", "tensile", "sweep", "bounds"):
        mat = cfg["material"]
        if mat["E"] is None or mat["nu"] is None:
            raise ConfigError("material.E and material.nu are required")
        try:
            IsotropicMaterial(float(mat["E"]), float(mat["nu"]))
        except MaterialError as exc:
            raise ConfigError(str(exc)) from exc
    an = cfg["analysis"]
    bcs = [b.upper() for b in an["bcs"]]
    if not bcs or any(b not in (bc.KUBC, bc.PBC, bc.SUBC) for b in bcs):
        raise ConfigError("analysis.bcs entries must be KUBC, PBC or SUBC")
    an["bcs"] = bcs
    if an["axis"] not in bc.AXES:
        raise ConfigError("analysis.axis must be x, y or z")
    if command == "tensile" and float(an["strain"]) == 0:
        raise ConfigError("analysis.strain must be non-zero")
    if command == "sweep":
        if an["bcs"] == DEFAULTS["analysis"]["bcs"]:
            an["bcs"] = bcs = [bc.PBC]
        if an["window"] is None or an["stride"] is None:
            raise ConfigError("analysis.window and analysis.stride are required for sweep")
        _triple(an["window"], "analysis.window")
        _triple(an["stride"], "analysis.stride")
        if len(bcs) != 1:
            raise ConfigError("sweep takes exactly one boundary condition")
    if any(not 0 <= float(x) < 1 for x in an["porosities"]):
        raise ConfigError("analysis.porosities must lie in [0, 1)")
    sol = cfg["solver"]
    if not float(sol["tol"]) > 0:
        raise ConfigError("solver.tol must be positive")
    if not isinstance(sol["threads"], int) or sol["threads"] < 1:
        raise ConfigError("solver.threads must be a positive integer")
    if sol["method"] not in ("auto", "direct", "cg") or sol["preconditioner"] not in ("jacobi", "schwarz"):
        raise ConfigError("solver.method must be auto|direct|cg, solver.preconditioner jacobi|schwarz")
    return cfg


def load_config(path, command: str, overrides: dict | None = None) -> dict:
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    cfg = _merge(DEFAULTS, raw)
    for dotted, value in (overrides or {}).items():
        _set(cfg, dotted, value)
    return validate_config(cfg, command)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

class Outputs:
    """Writes files under the output directory with a provenance header."""

    def __init__(self, cfg: dict, command: str):
        self.dir = Path(cfg["output"]["dir"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.provenance = {"tool": "voxfcm", "version": __version__, "command": command,
                           "config_sha256": config_hash(cfg)}
        self.written: list[Path] = []

    def header(self) -> str:
        return (f"# voxfcm {self.provenance['version']} command={self.provenance['command']} "
                f"config_sha256={self.provenance['config_sha256']}\n")

    def csv(self, name: str, text: str) -> Path:
        return self._write(name, self.header() + text)

    def json(self, name: str, data: dict) -> Path:
        doc = {"provenance": self.provenance, **data}
        return self._write(name, json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n")

    def _write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.written.append(path)
        return path


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _material(cfg) -> IsotropicMaterial:
    return IsotropicMaterial(float(cfg["material"]["E"]), float(cfg["material"]["nu"]))


def _options(cfg) -> SolverOptions:
    s = cfg["solver"]
    return SolverOptions(tol=float(s["tol"]), max_iter=s["max_iter"], method=s["method"],
                         preconditioner=s["preconditioner"], threads=s["threads"])


def build_field(cfg) -> tuple[IndicatorField, dict]:
    """Indicator field from a raw scan (threshold + flood fill) or a synthetic cell."""
    seg = cfg["segmentation"]
    inp = cfg["input"]
    if inp["path"] is not None:
        grid = load_voxel_grid(inp["path"])
        field = segment_threshold(grid, float(seg["threshold"]), float(seg["alpha_void"]))
        before = porosity(field)
        if seg["clean"]:
            field = flood_fill_clean(field, seg["connectivity"])
        info = {"source": str(inp["path"]), "porosity_before_cleaning": before}
    else:
        syn = inp["synthetic"]
        res = int(syn["resolution"])
        edge = float(syn["edge"])
        if syn["kind"] == "solid":
            h = edge / res
            field = IndicatorField(np.ones((res,) * 3), (h, h, h), float(seg["alpha_void"]))
        else:
            field = make_cubic_void_cell(edge, float(syn.get("void_edge", 0.0)), res, float(seg["alpha_void"]))
        tiles = syn.get("tiles", 1)
        tiles = (tiles,) * 3 if isinstance(tiles, int) else tuple(tiles)
        if tiles != (1, 1, 1):
            field = field.tile(tiles)
        info = {"source": f"synthetic:{syn['kind']}"}
    if not field.solid.any():
        raise EmptyGeometryError("empty geometry: no solid voxels")
    info.update({"dims": list(field.dims), "spacing_mm": list(field.spacing), "porosity": porosity(field)})
    return field, info


def _vpc(cfg, dims):
    v = _triple(cfg["mesh"]["voxels_per_cell"], "mesh.voxels_per_cell")
    return v if v is not None else tuple(dims)


def _model(cfg, field) -> FCMModel:
    return FCMModel.from_material(field, _material(cfg), _vpc(cfg, field.dims), cfg["mesh"]["p"],
                                  options=_options(cfg))


def cmd_segment(cfg, out: Outputs) -> dict:
    field, info = build_field(cfg)
    mask = out.dir / "mask.raw"
    write_mask(mask, field)
    out.written += [mask, Path(str(mask) + ".json")]
    summary = {**info, "threshold": cfg["segmentation"]["threshold"],
               "connectivity": cfg["segmentation"]["connectivity"], "mask": "mask.raw"}
    out.json("segment.json", summary)
    return summary


def cmd_homogenize(cfg, out: Outputs) -> dict:
    field, info = build_field(cfg)
    model = _model(cfg, field)
    mat = _material(cfg)
    tensors = {}
    result = {"geometry": info, "mesh": model.mesh.summary(), "material": {"E": mat.E, "nu": mat.nu},
              "tensors": {}}
    for kind in cfg["analysis"]["bcs"]:
        res = compute_tensor(model, kind)
        tensors[kind] = res.C
        out.csv(f"C_{kind}.csv", tensor_to_csv(res.C))
        result["tensors"][kind] = {
            "C": res.C, "engineering_constants": engineering_constants(res.C).as_dict(),
            "asymmetry": res.asymmetry, "hill_residual_max": max(res.hill_residuals),
            "averaging_mismatch_max": max(res.averaging_mismatches),
            "solver": [{"method": r.method, "iterations": r.iterations,
                        "relative_residual": r.relative_residual} for r in res.reports],
        }
    if all(k in tensors for k in (bc.KUBC, bc.PBC, bc.SUBC)):
        result["order_relation"] = order_relation_check(tensors[bc.SUBC], tensors[bc.PBC],
                                                        tensors[bc.KUBC]).as_dict()
    por = info["porosity"]
    result["bounds"] = {"voigt": voigt_bound(mat, por), "reuss": reuss_bound(mat, por)}
    if por < 1:
        result["bounds"]["hs_upper"] = hashin_shtrikman_upper(mat, por)[2]
    out.json("homogenization.json", result)
    return result


def cmd_tensile(cfg, out: Outputs) -> dict:
    field, info = build_field(cfg)
    model = _model(cfg, field)
    an = cfg["analysis"]
    res = tensile_test(model, an["axis"], float(an["strain"]))
    out.csv("stress_strain.csv", res.curve_csv(int(an["curve_steps"])))
    summary = {"geometry": info, "mesh": model.mesh.summary(), "tensile": res.as_dict(),
               "solver": {"method": res.report.method, "iterations": res.report.iterations,
                          "relative_residual": res.report.relative_residual}}
    out.json("tensile.json", summary)
    return summary


def cmd_sweep(cfg, out: Outputs) -> dict:
    field, info = build_field(cfg)
    an = cfg["analysis"]
    window = _triple(an["window"], "analysis.window")
    stride = _triple(an["stride"], "analysis.stride")
    vpc = _triple(cfg["mesh"]["voxels_per_cell"], "mesh.voxels_per_cell")
    rep = window_sweep(field, window, stride, an["bcs"][0], _material(cfg), an["quantity"],
                       voxels_per_cell=vpc, p=cfg["mesh"]["p"], options=_options(cfg),
                       threads=cfg["solver"]["threads"])
    out.csv("windows.csv", rep.windows_csv())
    summary = {"geometry": info, "sweep": rep.as_dict(),
               "failed_windows": [{"origin": r.origin, "error": r.error} for r in rep.windows if r.error]}
    out.json("sweep.json", summary)
    return summary


def cmd_bounds(cfg, out: Outputs) -> dict:
    mat = _material(cfg)
    lines = ["porosity,voigt_C1111,voigt_C1212,hs_K,hs_G,hs_C1111,hs_C1212,hs_psd_below_voigt"]
    rows = []
    for phi in cfg["analysis"]["porosities"]:
        phi = float(phi)
        V = voigt_bound(mat, phi)
        K, G, H = hashin_shtrikman_upper(mat, phi)
        ok = bool(np.linalg.eigvalsh(V - H).min() >= -1e-8 * np.linalg.norm(V))
        rows.append({"porosity": phi, "voigt": V, "hs_upper": H, "hs_below_voigt": ok})
        vals = [phi, V[0, 0], V[3, 3], K, G, H[0, 0], H[3, 3]]
        lines.append(",".join(repr(float(x)) for x in vals) + f",{ok}")
    out.csv("bounds.csv", "\n".join(lines) + "\n")
    summary = {"material": {"E": mat.E, "nu": mat.nu, "C": isotropic_tensor(mat)}, "rows": rows}
    out.json("bounds.json", summary)
    return summary


def cmd_validate_table1(cfg, out: Outputs) -> dict:
    v = _triple(cfg["mesh"]["voxels_per_cell"], "mesh.voxels_per_cell")
    res = validation.scenario_table1(int(cfg["analysis"]["resolution"]), cfg["mesh"]["p"],
                                     v[0] if v else 12, options=_options(cfg))
    validation.write_reports(out.dir, table1=res)
    summary = {"mode": res.mode, "entries": res.entries, "deviations": res.deviations,
               "isotropy_dev": res.isotropy_dev, "asymmetry": res.asymmetry,
               "hill_residual_max": res.hill_max, "particle_fraction": res.particle_fraction}
    out.json("validation/table1.json", summary)
    return summary


def cmd_validate_cubic_void(cfg, out: Outputs) -> dict:
    v = _triple(cfg["mesh"]["voxels_per_cell"], "mesh.voxels_per_cell")
    an = cfg["analysis"]
    rows = validation.scenario_cubic_void([float(x) for x in an["void_edges"]], an["bcs"],
                                          int(an["resolution"]), cfg["mesh"]["p"], v[0] if v else 6,
                                          options=_options(cfg))
    validation.write_reports(out.dir, sweep=rows)
    summary = {"rows": [{"void_edge": r.void_edge, "porosity": r.porosity, "C1313": r.c1313,
                         "order_relation": r.verdict.as_dict() if r.verdict else None} for r in rows]}
    out.json("validation/cubic_void.json", summary)
    return summary


def cmd_validate_cell_count(cfg, out: Outputs) -> dict:
    v = _triple(cfg["mesh"]["voxels_per_cell"], "mesh.voxels_per_cell")
    an = cfg["analysis"]
    rows = validation.scenario_unit_cell_count([int(c) for c in an["counts"]], float(an["void_edge"]),
                                               int(an["resolution"]), cfg["mesh"]["p"],
                                               v[0] if v else 10, options=_options(cfg))
    validation.write_reports(out.dir, counts=rows)
    summary = {"rows": [{"cells": r.cells, "C1313": r.c1313, "gap": r.gap} for r in rows]}
    out.json("validation/unit_cell_count.json", summary)
    return summary


HANDLERS = {
    "segment": cmd_segment, "homogenize": cmd_homogenize, "tensile": cmd_tensile, "sweep": cmd_sweep,
    "bounds": cmd_bounds, "validate-table1": cmd_validate_table1,
    "validate-cubic-void": cmd_validate_cubic_void, "validate-cell-count": cmd_validate_cell_count,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voxfcm", description="Finite-cell homogenization of voxel models")
    ap.add_argument("--version", action="version", version=f"voxfcm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", help="TOML run configuration")
        sp.add_argument("--explain", action="store_true", help="print the effective configuration and exit")
        sp.add_argument("--verbose", "-v", action="store_true")
        for flag, (_, typ) in OVERRIDES.items():
            sp.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=typ, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {OVERRIDES[k][0]: v for k, v in vars(args).items() if k in OVERRIDES and v is not None}
    try:
        cfg = load_config(args.config, args.command, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.explain:
        print(json.dumps({"command": args.command, "config": cfg, "config_sha256": config_hash(cfg)},
                         indent=2, sort_keys=True, default=str))
        return EXIT_OK
    out = Outputs(cfg, args.command)
    try:
        HANDLERS[args.command](cfg, out)
    except (VoxelFormatError, ConfigError, MaterialError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EmptyGeometryError, bc.SUBCInapplicableError, MeshError) as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (ConvergenceError, HomogenizationError, CacheMemoryError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for path in out.written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
