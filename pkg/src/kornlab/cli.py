"""
Command-line front end: ``kornlab {construct,verify,quotient,spectrum,cosserat,report}``.

Configuration comes from an optional ``key = value`` file and flag
overrides (flags win).  Exit codes: 0 pass, 1 claim failure, 2 integrity,
3 missing artifact, 4 configuration.
"""

import argparse
import configparser
import csv
import dataclasses
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kornlab._random import substream
from kornlab.exceptions import ConfigError, IntegrityError, KornlabError, MissingArtifact, NoConvergence
from kornlab.geometry import Box, covering_from_dict, payload_checksum
from kornlab.unimodular import UnimodularCounterexample, _jsonable, verify_construction

EXIT_PASS, EXIT_FAIL, EXIT_INTEGRITY, EXIT_MISSING, EXIT_CONFIG = 0, 1, 2, 3, 4
FORMATS = ("json", "csv", "svg")


def _floats(text):
    return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


@dataclass
class RunConfig:
    domain: tuple = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    mode: str = "single"
    n_list: list = field(default_factory=lambda: [1, 2, 4, 8])
    q: float = 2.0
    eps_pack: float = 1e-3
    lam: float = 1.0
    mesh: int = 4
    seed: int = 0
    out: str = "kornlab_out"
    formats: list = field(default_factory=lambda: ["json", "csv"])
    n_samples: int = 100_000
    n_sup_samples: int = 1_000_000
    quotient_eps: float = 1e-7
    quotient_n_list: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    quotient_samples: int = 400_000
    spectrum_n_list: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    control_meshes: list = field(default_factory=lambda: [8, 16, 24])
    ortho_map: str = ""
    cosserat_grid: int = 9

    # parsers for values read from a config file or flags
    _PARSE = {
        "domain": lambda s: (tuple(_floats(s)[:3]), tuple(_floats(s)[3:])),
        "mode": str,
        "n_list": _ints,
        "q": float,
        "eps_pack": float,
        "lam": float,
        "lambda": float,
        "mesh": int,
        "seed": int,
        "out": str,
        "formats": lambda s: [t.strip() for t in str(s).split(",") if t.strip()],
        "format": lambda s: [t.strip() for t in str(s).split(",") if t.strip()],
        "n_samples": int,
        "n_sup_samples": int,
        "quotient_eps": float,
        "quotient_n_list": _ints,
        "quotient_samples": int,
        "spectrum_n_list": _ints,
        "control_meshes": _ints,
        "ortho_map": str,
        "cosserat_grid": int,
    }
    _ALIAS = {"lambda": "lam", "format": "formats"}

    @classmethod
    def from_sources(cls, path=None, overrides=None):
        values = {}
        errors = {}
        if path:
            p = Path(path)
            if not p.exists():
                raise MissingArtifact(f"config file {path} not found")
            parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
            text = p.read_text()
            if not text.lstrip().startswith("["):
                text = "[run]\n" + text
            parser.read_string(text)
            for section in parser.sections():
                values.update(parser[section])
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        kwargs = {}
        for key, raw in values.items():
            if key not in cls._PARSE:
                errors[key] = "unknown key"
                continue
            try:
                val = raw if not isinstance(raw, str) else cls._PARSE[key](raw)
            except (TypeError, ValueError) as exc:
                errors[key] = f"cannot parse {raw!r}: {exc}"
                continue
            kwargs[cls._ALIAS.get(key, key)] = val
        if errors:
            raise ConfigError(errors)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        e = {}
        lo, hi = (tuple(self.domain[0]), tuple(self.domain[1])) if len(self.domain) == 2 else ((), ())
        if len(lo) != 3 or len(hi) != 3 or any(b <= a for a, b in zip(lo, hi)):
            e["domain"] = "needs six numbers lo1,lo2,lo3,hi1,hi2,hi3 with hi > lo"
        if self.mode not in ("single", "slabs"):
            e["mode"] = "must be single or slabs"
        if not (1.0 < self.q < math.inf):
            e["q"] = "must satisfy q > 1"
        if not (0.0 < self.eps_pack < 0.5):
            e["eps_pack"] = "must lie in (0, 0.5)"
        if not (0.0 < self.quotient_eps < 0.5):
            e["quotient_eps"] = "must lie in (0, 0.5)"
        for name in ("n_list", "quotient_n_list", "spectrum_n_list"):
            v = getattr(self, name)
            if not v or any(k < 1 for k in v) or any(b <= a for a, b in zip(v, v[1:])):
                e[name] = "must be a nonempty ascending list of positive integers"
        if self.lam < 0:
            e["lambda"] = "must be nonnegative"
        if self.mesh < 4:
            e["mesh"] = "mesh resolution must be at least 4"
        if not self.control_meshes or min(self.control_meshes) < 2:
            e["control_meshes"] = "needs meshes with at least 2 cells"
        if not (0 <= self.seed < 2**64):
            e["seed"] = "must be an unsigned 64-bit integer"
        bad = [f for f in self.formats if f not in FORMATS]
        if bad or not self.formats:
            e["format"] = f"unknown formats {bad}; choose from {FORMATS}"
        if self.n_samples < 100 or self.n_sup_samples < 100 or self.quotient_samples < 1000:
            e["n_samples"] = "sample counts too small"
        if self.cosserat_grid < 3:
            e["cosserat_grid"] = "needs at least 3 points per axis"
        if e:
            raise ConfigError(e)

    @property
    def box(self):
        return Box(*self.domain)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["domain"] = [list(self.domain[0]), list(self.domain[1])]
        return d


# -- artifact io ------------------------------------------------------------

def _dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_payload(path, payload):
    body = dict(payload)
    body["checksum"] = payload_checksum(_jsonable(payload))
    _write(path, _dumps(body))


def _read_payload(path):
    if not path.exists():
        raise MissingArtifact(f"{path.name} not found in {path.parent}; run `kornlab construct` first")
    try:
        body = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path.name} is not valid JSON: {exc}") from None
    if not isinstance(body, dict) or "checksum" not in body:
        raise IntegrityError(f"{path.name} has no checksum")
    stored = body.pop("checksum")
    if payload_checksum(body) != stored:
        raise IntegrityError(f"{path.name} failed its checksum")
    return body


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in ("seconds", "history")}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _svg(path, series, xlabel, ylabel, title, loglog=True):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "kornlab"
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (x, y) in series.items():
        ax.plot(x, y, "o-", label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# -- construction shared by the subcommands ---------------------------------

def _models(cfg):
    """Fitted constructions: one per ``n`` in single mode, one shared in slab mode."""
    common = dict(q=cfg.q, eps=cfg.eps_pack, domain=cfg.domain, mode=cfg.mode)
    if cfg.mode == "slabs":
        m = UnimodularCounterexample(n=max(cfg.n_list), n_parts=max(cfg.n_list), **common).fit()
        return {n: m for n in cfg.n_list}
    return {n: UnimodularCounterexample(n=n, **common).fit() for n in cfg.n_list}


def _covering_entries(models, cfg, which):
    entries = []
    seen = set()
    for n, m in models.items():
        parts = m.parts_ if cfg.mode == "slabs" else [m.witness_part()]
        for pc in parts:
            if (id(m), pc.index) in seen:
                continue
            seen.add((id(m), pc.index))
            cov = pc.axis_field.covering if which == "axis" else pc.rot_field.covering
            entries.append({"n": int(pc.level), "part": int(pc.index), "covering": cov.to_dict()})
    return entries


def cmd_construct(cfg):
    out = Path(cfg.out)
    models = _models(cfg)
    for which in ("axis", "rot"):
        _write_payload(out / f"covering_{which}.json", {
            "kind": f"covering_{which}",
            "config": cfg.to_dict(),
            "entries": _covering_entries(models, cfg, which),
        })
    distinct = list({id(m): m for m in models.values()}.values())
    field_payload = {
        "kind": "thm1_field",
        "config": cfg.to_dict(),
        "descriptors": [m.descriptor() for m in distinct],
        "witnesses": [
            {"n": n, "scale": m.scale(n), "sup_norm_bound": m.sup_norm_bound(n), "part": m.witness_part(n).index}
            for n, m in models.items()
        ],
    }
    if cfg.mode == "slabs":
        d = distinct[0].decomposition_
        field_payload["slabs"] = [
            {"part": i, "box": b.to_dict(), "measure": float(v)} for i, (b, v) in enumerate(zip(d.parts, d.measures))
        ]
        field_payload["coverage_defect"] = float(d.coverage_defect())
    _write_payload(out / "thm1_field.json", field_payload)
    print(f"wrote covering_axis.json, covering_rot.json, thm1_field.json to {out}")
    return EXIT_PASS, models


def _load_and_check(cfg, models):
    """Validate stored artifacts against a deterministic rebuild."""
    out = Path(cfg.out)
    stored = {w: _read_payload(out / f"covering_{w}.json") for w in ("axis", "rot")}
    _read_payload(out / "thm1_field.json")
    for which, body in stored.items():
        for entry in body["entries"]:
            covering_from_dict(entry["covering"])
        rebuilt = _covering_entries(models, cfg, which)
        if [e["covering"]["checksum"] for e in rebuilt] != [e["covering"]["checksum"] for e in body["entries"]]:
            raise IntegrityError(f"covering_{which}.json does not match the configuration")


def _emit_report(cfg, stem, payload, header=None, rows=None):
    out = Path(cfg.out)
    if "json" in cfg.formats:
        _write(out / f"{stem}.json", _dumps(_strip_timing(payload)))
    if "csv" in cfg.formats and header is not None:
        _write(out / f"{stem}.csv", _csv_text(header, rows))


def cmd_verify(cfg):
    from kornlab.rotational import SyntheticFrameMap, TabulatedOrthoMap, verify_rotational
    from kornlab.unimodular import REPORT_COLUMNS, VerificationReport

    models = _models(cfg)
    _load_and_check(cfg, models)
    records = []
    for n, m in models.items():
        if cfg.mode == "slabs":
            m = UnimodularCounterexample(**{**m.get_params(), "n": n}).fit()
        records.append(verify_construction(m, cfg.seed, cfg.n_samples, cfg.n_sup_samples))
    rep1 = VerificationReport(records, cfg.eps_pack, meta={"seed": cfg.seed, "q": cfg.q, "mode": cfg.mode})
    ortho = TabulatedOrthoMap.from_csv(cfg.ortho_map) if cfg.ortho_map else SyntheticFrameMap(seed=cfg.seed)
    rep2 = verify_rotational(cfg.n_list, q=cfg.q, seed=cfg.seed, ortho_map=ortho, n_samples=cfg.n_samples,
                             n_sup_samples=min(cfg.n_sup_samples, 200_000))
    cols2 = REPORT_COLUMNS
    for stem, rep, cols in (("unimodular_report", rep1, REPORT_COLUMNS), ("rotational_report", rep2, cols2)):
        _emit_report(cfg, stem, rep.to_dict(), cols, [[getattr(r, c) for c in cols] for r in rep.records])
    failures = [dict(f, report="unimodular") for f in rep1.failures] + [dict(f, report="rotational") for f in rep2.failures]
    return _finish(cfg, "verify", failures)


def _finish(cfg, stage, failures):
    status = {"stage": stage, "passed": not failures, "failures": failures}
    _write(Path(cfg.out) / f"{stage}_status.json", _dumps(status))
    if failures:
        print(json.dumps({"failures": failures}, sort_keys=True), file=sys.stderr)
        return EXIT_FAIL
    print(f"{stage}: all claims pass")
    return EXIT_PASS


def cmd_quotient(cfg):
    from kornlab.analysis.experiments import ladder_rows, quotient_ladder

    reports, fit = quotient_ladder(cfg.quotient_n_list, cfg.q, cfg.lam, cfg.quotient_eps, cfg.seed,
                                   cfg.quotient_samples, domain=cfg.domain)
    ks = [r.K for r in reports]
    payload = {"reports": [r.to_dict() for r in reports], "fit": fit, "config": cfg.to_dict()}
    _emit_report(cfg, "quotient", payload, ["n", "q", "lambda", "kappa_or_K", "budget"], ladder_rows("quotient", reports))
    if "svg" in cfg.formats:
        ns = [r.n for r in reports]
        _svg(Path(cfg.out) / "quotient.svg", {"K(n)": (ns, ks), "bound": (ns, [r.K_bound for r in reports])},
             "n", "K", "Korn quotient of the witness")
    failures = []
    if len(ks) >= 2 and not (0.9 <= fit["alpha"] <= 1.1):
        failures.append({"claim": "decay_rate", "alpha": fit["alpha"]})
    failures += [{"claim": "K_bound", "n": r.n} for r in reports if not r.K <= r.K_bound]
    return _finish(cfg, "quotient", failures)


def cmd_spectrum(cfg):
    from kornlab.analysis.experiments import control_spectrum, counterexample_spectrum, ladder_rows, strictly_decreasing

    for name in ("covering_axis.json", "covering_rot.json", "thm1_field.json"):
        _read_payload(Path(cfg.out) / name)
    ctl = control_spectrum(cfg.control_meshes, lam=0.0, box=cfg.box, seed=cfg.seed)
    rows = counterexample_spectrum(cfg.spectrum_n_list, cells_per_edge=cfg.mesh, lam=cfg.lam, eps=cfg.eps_pack,
                                   seed=cfg.seed)
    payload = {
        "control": [r.to_dict() for r in ctl],
        "counterexample": [{k: (v.to_dict() if k == "result" else v) for k, v in r.items()} for r in rows],
        "config": cfg.to_dict(),
        "note": "coefficient sampled at Gauss points; values show the trend, not a converged continuum limit",
    }
    # for the spectrum ladder the budget column holds the witness quotient, an upper bound on kappa
    _emit_report(cfg, "spectrum", payload, ["n", "q", "lambda", "kappa_or_K", "budget"], ladder_rows("spectrum", rows))
    if "csv" in cfg.formats:
        _write(Path(cfg.out) / "spectrum_control.csv",
               _csv_text(["mesh", "lambda", "kappa", "iterations", "residual"],
                         [(r.mesh, r.lam, r.kappa, r.iterations, r.residual) for r in ctl]))
    if "svg" in cfg.formats:
        ns = [r["n"] for r in rows]
        _svg(Path(cfg.out) / "spectrum.svg",
             {"kappa(n)": (ns, [r["kappa"] for r in rows]), "witness quotient": (ns, [r["witness_rq"] for r in rows])},
             "n", "kappa", "Discrete coercivity constant")
    failures = [{"claim": "control_band", "mesh": r.mesh, "kappa": r.kappa} for r in ctl if not 0.45 <= r.kappa <= 0.75]
    ks = [r["kappa"] for r in rows]
    if not strictly_decreasing(ks):
        failures.append({"claim": "kappa_decreasing", "kappa": ks})
    failures += [{"claim": "witness_dominance", "n": r["n"]} for r in rows if not r["kappa"] <= r["witness_rq"]]
    return _finish(cfg, "spectrum", failures)


def cmd_cosserat(cfg):
    from scipy.spatial.transform import Rotation

    from kornlab.analysis.cosserat import cosserat_energy, lattice_points

    g = cfg.cosserat_grid
    box = cfg.box
    shape = (g, g, g)
    h = tuple(float(s) / (g - 1) for s in box.sides)
    X = lattice_points(shape, h, box.lo)
    rng = substream(cfg.seed, "cosserat")
    Y = (X - box.lo) / box.sides
    rotvec = 0.4 * np.stack([np.sin(2 * Y[..., 1]), Y[..., 0] * Y[..., 2], np.cos(Y[..., 0])], axis=-1)
    R = Rotation.from_rotvec(rotvec.reshape(-1, 3)).as_matrix().reshape(shape + (3, 3))
    phi = X + 0.05 * np.sin(np.pi * Y[..., [1, 2, 0]])
    eye = np.broadcast_to(np.eye(3), shape + (3, 3))
    params = dict(spacing=h, mu_e=1.0, lambda_e=1.0, L_c=0.5, q_c=3.0, lo=box.lo)
    e_id = cosserat_energy(X, eye, **params)
    e0 = cosserat_energy(phi, R, **params)
    rel = []
    for Q in Rotation.random(10, random_state=rng).as_matrix():
        e = cosserat_energy(phi @ Q.T, Q @ R, **params)
        rel.append(abs(e - e0) / abs(e0))
    payload = {"identity_energy": e_id, "energy": e0, "invariance_rel_max": max(rel), "invariance_rel": rel,
               "params": {k: v for k, v in params.items()}, "grid": g}
    _emit_report(cfg, "cosserat", payload, ["trial", "relative_change"], list(enumerate(rel)))
    failures = []
    if e_id != 0.0:
        failures.append({"claim": "identity_zero", "energy": e_id})
    if max(rel) > 1e-10:
        failures.append({"claim": "rigid_invariance", "rel": max(rel)})
    return _finish(cfg, "cosserat", failures)


def cmd_report(cfg):
    out = Path(cfg.out)
    found = sorted(out.glob("*_status.json"))
    if not found:
        raise MissingArtifact(f"no stage results in {out}; run the other subcommands first")
    stages = [json.loads(p.read_text()) for p in found]
    summary = {"stages": stages, "passed": all(s["passed"] for s in stages)}
    _write(out / "report.json", _dumps(summary))
    rows = [(s["stage"], "pass" if s["passed"] else "fail", len(s["failures"])) for s in stages]
    _write(out / "report.csv", _csv_text(["stage", "status", "failures"], rows))
    for r in rows:
        print(f"{r[0]:>10}: {r[1]}")
    return EXIT_PASS if summary["passed"] else EXIT_FAIL


COMMANDS = {
    "construct": lambda cfg: cmd_construct(cfg)[0],
    "verify": cmd_verify,
    "quotient": cmd_quotient,
    "spectrum": cmd_spectrum,
    "cosserat": cmd_cosserat,
    "report": cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(prog="kornlab", description=__doc__.strip().splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", help="unsigned 64-bit seed")
    p.add_argument("--q", help="integrability exponent")
    p.add_argument("--n-list", dest="n_list", help="comma-separated ascending levels")
    p.add_argument("--eps", dest="eps_pack", help="packing tolerance in (0, 0.5)")
    p.add_argument("--lambda", dest="lam", help="mass shift")
    p.add_argument("--mesh", help="cells per grid-cube edge for the spectrum ladder")
    p.add_argument("--mode", help="single or slabs")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", dest="formats", action="append", help="json, csv or svg (repeatable)")
    return p


def _limit_threads():
    n = os.environ.get("KORNLAB_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if overrides.get("formats"):
        overrides["formats"] = ",".join(overrides["formats"])
    limiter = _limit_threads()
    try:
        cfg = RunConfig.from_sources(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "fields": exc.errors}, sort_keys=True), file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(json.dumps({"error": "integrity", "message": str(exc)}), file=sys.stderr)
        return EXIT_INTEGRITY
    except MissingArtifact as exc:
        print(json.dumps({"error": "missing_artifact", "message": str(exc)}), file=sys.stderr)
        return EXIT_MISSING
    except NoConvergence as exc:
        diag = {k: v for k, v in exc.diagnostics.items() if k != "history"}
        print(json.dumps({"error": "no_convergence", "message": str(exc), "diagnostics": _jsonable(diag)}),
              file=sys.stderr)
        return EXIT_FAIL
    except KornlabError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_FAIL
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
