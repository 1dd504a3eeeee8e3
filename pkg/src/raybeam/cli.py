"""Experiment runner: reproducible configs in, CSV tables and JSON out.

Subcommands mirror the library modules. Every run validates its config
first, then writes a manifest echoing the resolved config and the library
version next to the outputs; nothing carries timestamps, so identical
config and seed reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, beam, caustics, flow, linearize, xray
from .errors import ConfigError, RayBeamError
from .fields import BumpPotential, Domain, check_admissibility, make_field

EXPERIMENTS = (
    "scatter",
    "linearize",
    "xray",
    "beam",
    "caustics",
    "sensitivity-chain",
    "selftest",
)


# ----------------------------------------------------------------------------
# config parsing


def _require(cfg, key, types, ctx):
    if key not in cfg:
        raise ConfigError(f"{ctx}: missing required key {key!r}")
    if not isinstance(cfg[key], types):
        raise ConfigError(f"{ctx}: key {key!r} has wrong type {type(cfg[key]).__name__}")
    return cfg[key]


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    return cfg


def build_domain(cfg):
    block = _require(cfg, "domain", dict, "config")
    return Domain(
        center=np.asarray(_require(block, "center", list, "domain"), dtype=float),
        radius=float(_require(block, "radius", (int, float), "domain")),
        epsilon0=float(_require(block, "epsilon0", (int, float), "domain")),
        dim=int(_require(block, "dim", int, "domain")),
    )


def build_field(cfg, domain):
    block = _require(cfg, "field", dict, "config")
    kind = _require(block, "kind", str, "field")
    params = {k: v for k, v in block.items() if k != "kind"}
    return make_field(kind, domain, **params)


def build_potential(block):
    return BumpPotential(
        center=_require(block, "center", list, "potential"),
        radius=float(_require(block, "radius", (int, float), "potential")),
        height=float(block.get("height", 1.0)),
    )


def build_fan(cfg, field, domain):
    block = _require(cfg, "fan", dict, "config")
    return xray.boundary_fan(
        field,
        domain,
        n_boundary=int(_require(block, "n_boundary", int, "fan")),
        n_dir=int(_require(block, "n_dir", int, "fan")),
        margin=float(block.get("margin", 0.1)),
    )


# ----------------------------------------------------------------------------
# output helpers


class OutputDir:
    """Buffered result bundle: nothing touches the filesystem until flush,
    so failed runs leave no partial outputs behind."""

    def __init__(self, path, config):
        self.path = Path(path)
        self.config = config
        self._pending = []

    def write_manifest(self, extra=None):
        manifest = {"version": __version__, "config": self.config}
        if extra:
            manifest.update(extra)
        self.write_json("manifest.json", manifest)

    def write_json(self, name, payload):
        text = json.dumps(payload, sort_keys=True, indent=2, default=_jsonable) + "\n"
        self._pending.append((name, text))

    def write_csv(self, name, header, rows):
        import io

        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        writer.writerows(rows)
        self._pending.append((name, buf.getvalue()))

    def flush(self):
        self.path.mkdir(parents=True, exist_ok=True)
        for name, text in self._pending:
            with open(self.path / name, "w", newline="") as fh:
                fh.write(text)
        self._pending = []


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


# ----------------------------------------------------------------------------
# experiment runners


def run_scatter(cfg, out):
    domain = build_domain(cfg)
    field = build_field(cfg, domain)
    fan = build_fan(cfg, field, domain)
    X0 = np.stack([p.x for p in fan.nodes])
    D0 = np.stack([p.xi for p in fan.nodes])
    records = flow.scattering_fan(field, domain, X0, D0, t_max=cfg.get("t_max"))
    rows = []
    for p, rec in zip(fan.nodes, records):
        if rec is None:
            continue
        rows.append(
            [*p.x, *p.xi, rec.l, *rec.exit.x, *rec.exit.xi, int(rec.entered_inner)]
        )
    d = domain.dim
    header = (
        [f"x0_{i}" for i in range(d)]
        + [f"xi0_{i}" for i in range(d)]
        + ["l"]
        + [f"x1_{i}" for i in range(d)]
        + [f"xi1_{i}" for i in range(d)]
        + ["entered_inner"]
    )
    out.write_csv("scatter.csv", header, rows)
    summary = {"n_nodes": len(fan.nodes), "n_recorded": len(rows)}
    if cfg.get("admissibility"):
        blk = cfg["admissibility"]
        rep = check_admissibility(
            field,
            domain,
            T=float(blk.get("T", 6.0)),
            n_samples=int(blk.get("n_samples", 1024)),
            seed=int(cfg.get("seed", 0)),
        )
        summary["admissibility"] = {
            "c_bounds_ok": rep.c_bounds_ok,
            "support_ok": rep.support_ok,
            "nontrapping_ok": rep.nontrapping_ok,
            "epsilon_star": rep.epsilon_star,
            "epsilon1": rep.epsilon1,
            "T": rep.T,
            "failures": rep.failures,
        }
    out.write_json("summary.json", summary)
    return 0


def run_linearize(cfg, out):
    domain = build_domain(cfg)
    field = build_field(cfg, domain)
    blk = _require(cfg, "probe", dict, "config")
    psi = build_potential(_require(blk, "potential", dict, "probe"))
    x0 = np.asarray(_require(blk, "x0", list, "probe"), dtype=float)
    direction = np.asarray(_require(blk, "direction", list, "probe"), dtype=float)
    p0 = flow.cosphere_point(field, x0, direction)
    T = float(blk.get("T", 4.0))
    eps_list = [float(e) for e in blk.get("eps_list", [1e-1, 10**-1.5, 1e-2, 10**-2.5])]
    slope, details = linearize.remainder_probe(field, p0, psi, T, eps_list)
    out.write_json(
        "linearize.json",
        {"p0": {"x": p0.x, "xi": p0.xi}, "T": T, "slope": slope, **details},
    )
    return 0


def run_xray(cfg, out):
    domain = build_domain(cfg)
    field = build_field(cfg, domain)
    fblk = _require(cfg, "test_function", dict, "config")
    f = xray.vector_bump(
        domain,
        np.asarray(_require(fblk, "value", list, "test_function"), dtype=float),
        center=_require(fblk, "center", list, "test_function"),
        radius=float(_require(fblk, "radius", (int, float), "test_function")),
    )
    fan = build_fan(cfg, field, domain)
    values = xray.transform_fan(field, domain, f, fan.nodes)
    d = domain.dim
    rows = [
        [*p.x, *p.xi, *vals] for p, vals in zip(fan.nodes, values)
    ]
    header = (
        [f"x0_{i}" for i in range(d)]
        + [f"xi0_{i}" for i in range(d)]
        + [f"I_{i}" for i in range(2 * d)]
    )
    out.write_csv("transform.csv", header, rows)

    symbol_out = []
    for blk in cfg.get("symbol_points", []):
        x = np.asarray(blk["x"], dtype=float)
        xi = np.asarray(blk["xi"], dtype=float)
        res = xray.symbol_n1(field, domain, x, xi, n_nodes=int(cfg.get("symbol_nodes", 48)))
        symbol_out.append(
            {
                "x": x,
                "xi": xi,
                "eigenvalues": np.linalg.eigvalsh(res.matrix),
                "min_eig": res.min_eig,
                "elliptic": res.elliptic,
            }
        )
    summary = {"n_fan": len(fan.nodes), "symbol": symbol_out}
    if cfg.get("normal_scan"):
        eps2 = float(cfg["normal_scan"].get("epsilon2", 0.4))
        ok, dmin = xray.diffeomorphism_scan(field, np.asarray(cfg["normal_scan"]["x"], dtype=float), eps2)
        summary["normal_scan"] = {"epsilon2": eps2, "diffeomorphic": ok, "min_det": dmin}
    out.write_json("summary.json", summary)
    return 0


def run_beam(cfg, out):
    domain = build_domain(cfg)
    field = build_field(cfg, domain)
    blk = _require(cfg, "beam", dict, "config")
    mode = _require(blk, "mode", str, "beam")
    x0 = np.asarray(_require(blk, "x0", list, "beam"), dtype=float)
    direction = np.asarray(_require(blk, "direction", list, "beam"), dtype=float)
    q0 = flow.cosphere_point(field, x0, direction)
    s0 = beam.BeamState(x=q0.x, xi=q0.xi, M=1j * np.eye(domain.dim), a=1.0, t=0.0)
    lams = [float(v) for v in blk.get("lambdas", [50.0, 100.0, 200.0, 400.0, 800.0])]

    if mode == "propagate":
        T = float(blk.get("T", 2.0))
        path = beam.propagate_beam(field, s0, (0.0, T))
        ts = np.linspace(0.0, T, int(blk.get("n_out", 25)))
        rows = []
        for t in ts:
            st = path.state(t)
            rows.append([t, *st.x, *st.xi, st.a.real, st.a.imag, *st.M.real.ravel(), *st.M.imag.ravel()])
        d = domain.dim
        header = (
            ["t"] + [f"x_{i}" for i in range(d)] + [f"xi_{i}" for i in range(d)]
            + ["a_re", "a_im"]
            + [f"M_re_{i}{j}" for i in range(d) for j in range(d)]
            + [f"M_im_{i}{j}" for i in range(d) for j in range(d)]
        )
        out.write_csv("beam_path.csv", header, rows)
        out.write_json(
            "summary.json",
            {"min_im_eig": path.min_im_eig, "max_M_norm": path.max_M_norm, "T": T},
        )
    elif mode == "reflect":
        rec = flow.scattering_relation(field, domain, q0)
        path = beam.propagate_beam(field, s0, (0.0, rec.l))
        chart = beam.BoundaryChart(domain, rec.exit.x)
        jet = beam.boundary_jet(field, path, chart, rec.l)
        refl = beam.reflect_beam(field, path, chart, rec.l)
        out.write_json(
            "summary.json",
            {
                "hit_time": rec.l,
                "hit_point": rec.exit.x,
                "jet_gradient": jet.gradient,
                "Mhat_re": jet.Mhat.real,
                "Mhat_im": jet.Mhat.imag,
                "min_im_eig_Mhat": jet.min_im_eig,
                "reflected_xi": refl.xi,
                "reflected_M_re": refl.M.real,
                "reflected_M_im": refl.M.imag,
            },
        )
    elif mode == "residual":
        T = float(blk.get("T", 2.0))
        norms, slope, r2 = beam.residual_scan(field, s0, (0.0, T), lams, n_t=int(blk.get("n_t", 16)))
        out.write_json(
            "summary.json",
            {"norms": {str(k): v for k, v in norms.items()}, "slope": slope, "r_squared": r2},
        )
    elif mode == "interact":
        dz = [float(v) for v in blk.get("separations", [0.08, 0.16, 0.32])]
        Mhat = 1j * np.eye(domain.dim)
        lin = np.concatenate([[-1.0], np.zeros(domain.dim - 1)])
        sweeps = []
        for sep in dz:
            vals = []
            for lam in lams:
                A = beam.FrozenBeam(amplitude=lam ** (domain.dim / 4.0), base=np.zeros(domain.dim), linear=lin, quad=Mhat)
                B = beam.FrozenBeam(
                    amplitude=lam ** (domain.dim / 4.0),
                    base=np.concatenate([[sep], np.zeros(domain.dim - 1)]),
                    linear=lin,
                    quad=Mhat,
                )
                vals.append(abs(beam.interaction(A, B, lam)))
            from .util import linear_fit

            slope, _, r2 = linear_fit(np.asarray(lams), np.log(vals))
            sweeps.append({"separation": sep, "slope": slope, "r_squared": r2, "values": vals})
        out.write_json("summary.json", {"sweeps": sweeps})
    else:
        raise ConfigError(f"unknown beam mode {mode!r}")
    return 0


def run_caustics(cfg, out):
    domain = build_domain(cfg)
    field = build_field(cfg, domain)
    blk = _require(cfg, "caustics", dict, "config")
    x = np.asarray(_require(blk, "x", list, "caustics"), dtype=float)
    cert = caustics.complete_set_search(
        field,
        x,
        n_theta=int(blk.get("n_theta", 128)),
        t_max=float(blk.get("t_max", 2.0)),
        n_steps=int(blk.get("n_steps", 240)),
        seed=int(cfg.get("seed", 0)),
    )
    rows = []
    for sample in cert.Z_samples:
        for root in sample["roots"]:
            rows.append(
                [*sample["theta"], root["t"], root["det_residual"], root["transversality"],
                 root["graph_rank"], root["classification"]]
            )
    out.write_csv(
        "census.csv",
        [f"theta_{i}" for i in range(domain.dim)]
        + ["root_t", "det_residual", "transversality", "graph_rank", "classification"],
        rows,
    )
    out.write_json(
        "certificate.json",
        {
            "base": cert.base,
            "coverage_gap": cert.coverage_gap,
            "passed": cert.passed,
            "n_theta": cert.n_theta,
            "n_kept": cert.n_kept,
            "symmetrized": cert.symmetrized,
            "grid_tol": cert.grid_tol,
            "samples": cert.Z_samples,
        },
    )
    return 0


def run_sensitivity_chain(cfg, out):
    domain = build_domain(cfg)
    field = build_field(cfg, domain)
    blk = _require(cfg, "chain", dict, "config")
    psi = build_potential(_require(blk, "potential", dict, "chain"))
    fan = build_fan(cfg, field, domain)
    eps_list = [float(e) for e in blk.get("eps_list", [1e-1, 10**-1.5, 1e-2, 10**-2.5])]
    T = float(blk.get("T", 4.0))
    result = xray.sensitivity_chain(field, domain, psi, eps_list, fan.nodes, T=T)
    out.write_csv(
        "chain.csv",
        ["eps", "raw_max", "residual_max"],
        list(zip(result.eps, result.raw_max, result.residual_max)),
    )
    out.write_json(
        "summary.json",
        {
            "raw_slope": result.raw_slope,
            "residual_slope": result.residual_slope,
            "residual_r2": result.residual_r2,
            "T": T,
            "n_fan": len(fan.nodes),
        },
    )
    return 0


def run_selftest(cfg, out):
    from .acceptance import run_all

    results = run_all(verbose=True)
    out.write_json("selftest.json", {"results": results})
    return 0 if all(r["passed"] for r in results) else 1


RUNNERS = {
    "scatter": run_scatter,
    "linearize": run_linearize,
    "xray": run_xray,
    "beam": run_beam,
    "caustics": run_caustics,
    "sensitivity-chain": run_sensitivity_chain,
    "selftest": run_selftest,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="raybeam",
        description="ray-flow / beam / transform experiments with reproducible outputs",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", type=str, default=None, help="JSON config path")
    parser.add_argument("--out", type=str, default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for fans")
    args = parser.parse_args(argv)

    try:
        if args.experiment == "selftest":
            cfg = {} if args.config is None else load_config(args.config)
        else:
            if args.config is None:
                raise ConfigError("--config is required for this experiment")
            cfg = load_config(args.config)
            declared = cfg.get("experiment")
            if declared is not None and declared != args.experiment:
                raise ConfigError(
                    f"config declares experiment {declared!r}, got {args.experiment!r}"
                )
        if args.seed is not None:
            cfg["seed"] = args.seed
        cfg.setdefault("seed", 0)
        cfg["workers"] = args.workers
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        out = OutputDir(args.out, cfg)
        code = RUNNERS[args.experiment](cfg, out)
        out.write_manifest()
        out.flush()
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RayBeamError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        try:
            fail = OutputDir(args.out, cfg)
            fail.write_json("failure.json", {"error": str(exc)})
            fail.flush()
        except Exception:
            pass
        return 1


if __name__ == "__main__":
    sys.exit(main())
