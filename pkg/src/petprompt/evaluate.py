"""Dataset evaluation: load a case manifest, drive interaction trajectories
against a backend, and emit per-case CSV rows plus a median (Q1–Q3)
aggregate table in machine and human form.

Reports are deterministic functions of (manifest bytes, config, backend
identity): rows are sorted, floats use repr, and no timestamps, addresses,
or latencies are embedded.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import nifti
from .backends import (
    Backend,
    PerfectOracleBackend,
    RegionGrowBackend,
    ThresholdBackend,
)
from .clicks import run_interaction, run_lesion_wise
from .errors import TransportError
from .metrics import aggregate
from .patches import PatchConfig
from .protocol import RemoteBackend
from .volume import BinaryMask, mask_volume


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    output_dir: Path
    backend: str = "region_grow"  # reference kind or "remote:<address>"
    n_points: tuple[int, ...] = (1,)
    mode: str = "global"  # or "lesion_wise"
    patch_edge: int = 128
    window_cap: int = 64
    tau: float = 1.0
    tau_unit: str = "mm"
    theta: float = 1.0
    frac: float = 0.41
    seed: int = 0
    parallelism: int = 1

    def __post_init__(self):
        if not self.n_points or any(n < 1 for n in self.n_points):
            raise ValueError("every prompt budget must be >= 1")
        if self.patch_edge % 2 != 0:
            raise ValueError("patch edge must be even (stride = edge/2)")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.mode not in ("global", "lesion_wise"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        object.__setattr__(self, "manifest", Path(self.manifest))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        object.__setattr__(self, "n_points", tuple(sorted(set(self.n_points))))


@dataclass(frozen=True)
class CaseEntry:
    case_id: str
    volume: Path
    labels: Path
    targets: tuple[tuple[str, tuple[int, ...]], ...]  # (name, label ids)


@dataclass(frozen=True)
class CaseRow:
    case_id: str
    target: str
    n_points: int | None
    dsc: float | None
    nsd: float | None
    status: str  # "ok" | "failed"
    error: str = ""


@dataclass
class Report:
    backend_name: str
    rows: list[CaseRow] = field(default_factory=list)
    config: RunConfig | None = None

    @property
    def n_failed(self) -> int:
        return len({r.case_id for r in self.rows if r.status == "failed"})

    @property
    def exit_code(self) -> int:
        return 1 if self.n_failed else 0


def load_manifest(path) -> list[CaseEntry]:
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ValueError("manifest must be a JSON list of case objects")
    cases = []
    for e in entries:
        targets = tuple(
            (t["name"], tuple(int(x) for x in t["labels"])) for t in e["targets"]
        )
        cases.append(
            CaseEntry(
                case_id=str(e["case_id"]),
                volume=path.parent / e["volume"],
                labels=path.parent / e["labels"],
                targets=targets,
            )
        )
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate case ids in manifest")
    return cases


def _make_case_backend(config: RunConfig, ground_truth: BinaryMask | None) -> Backend:
    kind = config.backend
    if kind.startswith("remote:"):
        return RemoteBackend(kind[len("remote:") :])
    if kind == "threshold":
        return ThresholdBackend(config.theta)
    if kind == "region_grow":
        return RegionGrowBackend(config.frac)
    if kind == "oracle":
        if ground_truth is None:
            raise ValueError("oracle backend needs a ground truth mask")
        return PerfectOracleBackend(ground_truth)
    raise ValueError(f"unknown backend {kind!r}")


def backend_display_name(config: RunConfig) -> str:
    """Logical backend identity for reports. Remote backends report the name
    announced in their handshake so that a served reference backend yields a
    report byte-identical to the in-process run."""
    if config.backend.startswith("remote:"):
        probe = RemoteBackend(config.backend[len("remote:") :])
        try:
            return probe.name
        finally:
            probe.close()
    return config.backend


def _evaluate_case(config: RunConfig, entry: CaseEntry) -> list[CaseRow]:
    rows: list[CaseRow] = []
    patch_cfg = PatchConfig(edge=config.patch_edge, window_cap=config.window_cap)
    max_budget = max(config.n_points)
    try:
        grid = nifti.read_volume(entry.volume)
        labels, _ = nifti.read_labels(entry.labels)
    except Exception as exc:  # unreadable case: recorded, run continues
        return [
            CaseRow(entry.case_id, "", None, None, None, "failed", str(exc))
        ]
    for target_name, label_ids in entry.targets:
        try:
            truth = labels.mask_for(label_ids)
            if mask_volume(truth) == 0:
                raise ValueError(f"target {target_name} is empty")
            backend = _make_case_backend(config, truth)
            try:
                session = f"{entry.case_id}/{target_name}"
                if config.mode == "global":
                    traj = run_interaction(
                        backend,
                        grid,
                        truth,
                        max_budget,
                        patch_cfg,
                        tau=config.tau,
                        tau_unit=config.tau_unit,
                        session=session,
                        target_name=target_name,
                        case_id=entry.case_id,
                    )
                    metric_at = traj.metric_at_budget
                else:
                    result = run_lesion_wise(
                        backend,
                        grid,
                        truth,
                        max_budget,
                        patch_cfg,
                        tau=config.tau,
                        tau_unit=config.tau_unit,
                        session=session,
                        target_name=target_name,
                        case_id=entry.case_id,
                    )
                    metric_at = result.metric_at_budget
                for budget in config.n_points:
                    m = metric_at(budget)
                    rows.append(
                        CaseRow(
                            entry.case_id, target_name, budget, m.dsc, m.nsd, "ok"
                        )
                    )
            finally:
                close = getattr(backend, "close", None)
                if close is not None:
                    close()
        except TransportError:
            raise  # backend connectivity problems abort the whole run
        except Exception as exc:
            rows.append(
                CaseRow(entry.case_id, target_name, None, None, None, "failed", str(exc))
            )
    return rows


def evaluate(config: RunConfig) -> Report:
    """Run every manifest case against the configured backend.

    A handshake/transport failure aborts immediately (TransportError);
    unreadable or failing cases become failure rows and the run continues.
    """
    cases = load_manifest(config.manifest)
    report = Report(backend_name=backend_display_name(config), config=config)
    if config.parallelism == 1:
        for entry in cases:
            report.rows.extend(_evaluate_case(config, entry))
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            for rows in pool.map(lambda e: _evaluate_case(config, e), cases):
                report.rows.extend(rows)
    report.rows.sort(
        key=lambda r: (r.case_id, r.target, r.n_points if r.n_points else 0)
    )
    return report


def summarize(report: Report) -> dict:
    """Aggregate table: per target and per prompt budget, median (Q1–Q3) of
    DSC and NSD over successful cases."""
    config = report.config
    targets: dict[str, dict[str, dict]] = {}
    names = sorted({r.target for r in report.rows if r.status == "ok"})
    for target in names:
        per_budget: dict[str, dict] = {}
        for budget in config.n_points:
            picked = [
                r
                for r in report.rows
                if r.status == "ok" and r.target == target and r.n_points == budget
            ]
            if not picked:
                continue
            entry = {}
            for metric_name, values in (
                ("dsc", [r.dsc for r in picked]),
                ("nsd", [r.nsd for r in picked]),
            ):
                stat = aggregate(values)
                entry[metric_name] = {
                    "median": stat.median,
                    "q1": stat.q1,
                    "q3": stat.q3,
                    "n": stat.n,
                    "formatted": stat.formatted(),
                }
            per_budget[str(budget)] = entry
        targets[target] = per_budget
    return {
        "backend": report.backend_name,
        "mode": config.mode,
        "tau": config.tau,
        "tau_unit": config.tau_unit,
        "budgets": list(config.n_points),
        "patch_edge": config.patch_edge,
        "window_cap": config.window_cap,
        "seed": config.seed,
        "n_cases": len({r.case_id for r in report.rows}),
        "n_failed": report.n_failed,
        "targets": targets,
    }


def write_report(report: Report, output_dir) -> tuple[Path, Path]:
    """Write cases.csv and summary.json; returns their paths."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    cases_path = output_dir / "cases.csv"
    with open(cases_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case_id", "target", "n_points", "dsc", "nsd", "status", "error"])
        for r in report.rows:
            writer.writerow(
                [
                    r.case_id,
                    r.target,
                    "" if r.n_points is None else r.n_points,
                    "" if r.dsc is None else repr(r.dsc),
                    "" if r.nsd is None else repr(r.nsd),
                    r.status,
                    r.error,
                ]
            )
    summary_path = output_dir / "summary.json"
    summary_path.write_text(
        json.dumps(summarize(report), indent=2, sort_keys=True) + "\n"
    )
    return cases_path, summary_path
