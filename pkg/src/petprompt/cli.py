"""Command-line front end.

Subcommands: ``phantom`` (write a synthetic suite), ``evaluate`` (interaction
runs + metric report), ``covariance`` (metabolic covariance network), and
``serve`` (expose a reference backend on the wire protocol).

Environment overrides: PETPROMPT_BACKEND (backend spec for evaluate) and
PETPROMPT_OUTDIR (output directory). Exit codes: 0 ok, 1 partial case
failures, 2 configuration or transport error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import signal
import sys
from pathlib import Path

import numpy as np

from . import covariance as covnet
from . import nifti, phantoms
from .backends import RegionGrowBackend, ThresholdBackend
from .errors import ProtocolError, TransportError
from .evaluate import RunConfig, evaluate, write_report
from .protocol import BackendServer


def _add_phantom(sub):
    p = sub.add_parser("phantom", help="generate a deterministic phantom suite")
    p.add_argument("--suite", choices=phantoms.SUITE_NAMES, required=True)
    p.add_argument("--cases", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--dims", type=int, nargs=3, default=(64, 64, 64))
    p.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    p.add_argument("--noise", type=float, default=None, help="noise sigma override")
    p.add_argument("--out", type=Path, default=None)
    return p


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="run interaction trajectories and report")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument(
        "--backend",
        default=None,
        help="threshold | region_grow | oracle | remote:<host:port or unix:/path>",
    )
    p.add_argument("--points", type=int, nargs="+", default=[1])
    p.add_argument("--mode", choices=("global", "lesion_wise"), default="global")
    p.add_argument("--edge", type=int, default=128)
    p.add_argument("--cap", type=int, default=64)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--tau-unit", choices=("mm", "voxel"), default="mm")
    p.add_argument("--theta", type=float, default=1.0, help="threshold backend SUV cut")
    p.add_argument("--frac", type=float, default=0.41, help="region-grow seed fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out", type=Path, default=None)
    return p


def _add_covariance(sub):
    p = sub.add_parser("covariance", help="build the metabolic covariance network")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=0.3)
    p.add_argument("--out", type=Path, default=None)
    return p


def _add_serve(sub):
    p = sub.add_parser("serve", help="serve a reference backend over the wire")
    p.add_argument("--backend", choices=("threshold", "region_grow"), required=True)
    p.add_argument("--address", default="127.0.0.1:7741")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--frac", type=float, default=0.41)
    return p


def _outdir(args) -> Path:
    out = args.out or os.environ.get("PETPROMPT_OUTDIR")
    if out is None:
        raise ValueError("no output directory: pass --out or set PETPROMPT_OUTDIR")
    return Path(out)


def cmd_phantom(args) -> int:
    cases = phantoms.suite(
        args.suite,
        args.cases,
        args.seed,
        dims=tuple(args.dims),
        spacing=tuple(args.spacing),
        noise_sigma=args.noise,
    )
    manifest = phantoms.write_suite(cases, _outdir(args))
    print(f"wrote {len(cases)} cases; manifest at {manifest}")
    return 0


def cmd_evaluate(args) -> int:
    backend = args.backend or os.environ.get("PETPROMPT_BACKEND") or "region_grow"
    config = RunConfig(
        manifest=args.manifest,
        output_dir=_outdir(args),
        backend=backend,
        n_points=tuple(args.points),
        mode=args.mode,
        patch_edge=args.edge,
        window_cap=args.cap,
        tau=args.tau,
        tau_unit=args.tau_unit,
        theta=args.theta,
        frac=args.frac,
        seed=args.seed,
        parallelism=args.parallelism,
    )
    report = evaluate(config)
    cases_path, summary_path = write_report(report, config.output_dir)
    print(f"wrote {cases_path} and {summary_path}")
    if report.n_failed:
        print(f"{report.n_failed} case(s) failed", file=sys.stderr)
    return report.exit_code


def cmd_covariance(args) -> int:
    spec = json.loads(Path(args.manifest).read_text())
    base = Path(args.manifest).parent
    roi_names = {int(k): v for k, v in spec["rois"].items()}
    roi_ids = sorted(roi_names)
    subjects = spec["subjects"]
    values = np.zeros((len(subjects), len(roi_ids)))
    for si, subj in enumerate(subjects):
        grid = nifti.read_volume(base / subj["volume"])
        labels, _ = nifti.read_labels(base / subj["labels"], roi_names)
        for ri, roi_id in enumerate(roi_ids):
            values[si, ri] = covnet.roi_mean(grid, labels.mask_for([roi_id]))
    uptake = covnet.UptakeMatrix(
        values, tuple(roi_names[i] for i in roi_ids)
    )
    network = covnet.build_network(uptake, threshold=args.threshold)

    outdir = _outdir(args)
    outdir.mkdir(parents=True, exist_ok=True)
    matrix_path = outdir / "correlation.csv"
    with open(matrix_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["roi", *network.roi_names])
        for name, row in zip(network.roi_names, network.corr):
            writer.writerow([name, *[repr(float(v)) for v in row]])
    edges_path = outdir / "edges.json"
    edges_path.write_text(
        json.dumps(
            {
                "threshold": args.threshold,
                "edges": [
                    {"roi_a": a, "roi_b": b, "r": r} for a, b, r in network.edges
                ],
                "degenerate_rois": list(network.degenerate),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(f"wrote {matrix_path} and {edges_path}")
    return 0


def cmd_serve(args) -> int:
    if args.backend == "threshold":
        backend = ThresholdBackend(args.theta)
    else:
        backend = RegionGrowBackend(args.frac)
    server = BackendServer(backend, args.address)

    def _stop(signum, frame):
        server.shutdown()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    print(f"serving {backend.name} on {server.address}", flush=True)
    server.serve_forever()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="petprompt",
        description="Interactive point-prompt PET segmentation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_phantom(sub)
    _add_evaluate(sub)
    _add_covariance(sub)
    _add_serve(sub)
    args = parser.parse_args(argv)
    handlers = {
        "phantom": cmd_phantom,
        "evaluate": cmd_evaluate,
        "covariance": cmd_covariance,
        "serve": cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except (TransportError, ProtocolError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
