import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from tqdm import tqdm

from ldplab.config import ExperimentConfig, ProbeConfig
from ldplab.lab import Lab
from ldplab.probes import NO_TARGET, PROBES, ProbeError, ProbeResult
from ldplab.utils import set_threads

logger = logging.getLogger(__name__)

SUMMARY_FIELDS = ["probe_id", "kind", "digest", "headline", "target", "deviation", "flags"]
EXIT_OK, EXIT_CONFIG, EXIT_PROBE = 0, 1, 2


@dataclass
class ReportRow:
    probe_id: str
    kind: str
    digest: str
    headline: float
    target: float | None
    deviation: float | None
    flags: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    series: dict[str, list] | None = None
    table: list[dict[str, Any]] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(f.startswith("error:") for f in self.flags)


def inputs_digest(space: dict, probe: ProbeConfig, seed: int) -> str:
    """sha256 over the canonical JSON of everything the probe's output depends on."""
    payload = {"space": space, "kind": probe.kind, "params": probe.params, "seed": seed}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _format(value) -> Any:
    if isinstance(value, float):
        return repr(float(value)) if math.isfinite(value) else str(float(value))
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value, default=str)
    return "" if value is None else value


def write_csv(path: Path, rows: list[dict[str, Any]], fieldnames: list[str] | None = None):
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            fieldnames.extend(k for k in row if k not in fieldnames)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row.get(k)) for k in fieldnames})


def run_probe(lab: Lab, probe: ProbeConfig, seed: int) -> ProbeResult:
    try:
        return PROBES[probe.kind](lab, probe.params, seed)
    except Exception as e:
        raise ProbeError(probe.id, f"{type(e).__name__}: {e}") from e


def run_experiment(
    config: ExperimentConfig,
    output_dir: str | Path | None = None,
    progress_bar: bool = False,
) -> list[ReportRow]:
    """Run the probes in declared order, writing <id>.csv per probe, <id>.dat per series and summary.csv.

    Wall times go to timings.csv so that the other files are identical across reruns.
    """
    threads = set_threads(config.threads)
    logger.info("running %d probe(s) with %d thread(s)", len(config.probes), threads)
    out = Path(output_dir if output_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    lab = Lab.from_spec(config.space, progress_bar)
    space_dict = {"kind": config.space.kind, **config.space.params}
    rows = []
    for probe in tqdm(config.probes, desc="Probes", disable=not progress_bar):
        digest = inputs_digest(space_dict, probe, config.seed)
        start = time.perf_counter()
        try:
            result = run_probe(lab, probe, config.seed)
            row = ReportRow(
                probe.id,
                probe.kind,
                digest,
                result.headline,
                result.target,
                result.deviation,
                list(result.flags),
                series=result.series,
                table=result.table,
            )
        except ProbeError as e:
            logger.error("%s", e)
            row = ReportRow(probe.id, probe.kind, digest, math.nan, None, None, [NO_TARGET, f"error:{e.message}"])
        row.wall_time = time.perf_counter() - start
        rows.append(row)

        if row.table:
            write_csv(out / f"{probe.id}.csv", row.table)
        if row.series:
            emit_plotdata(rows, probe.id, out / f"{probe.id}.dat")

    summary = [{**asdict(r), "flags": ";".join(r.flags)} for r in rows]
    write_csv(out / "summary.csv", summary, SUMMARY_FIELDS)
    write_csv(out / "timings.csv", [{"probe_id": r.probe_id, "wall_time": r.wall_time} for r in rows])
    return rows


def exit_status(rows: list[ReportRow]) -> int:
    """Deviations never fail a run, errors do."""
    return EXIT_PROBE if any(r.failed for r in rows) else EXIT_OK


def emit_plotdata(rows: list[ReportRow], series: str, path: str | Path | None = None) -> str:
    """Whitespace-separated columns with a commented header; written to `path` when given."""
    matches = [r for r in rows if r.probe_id == series]
    if not matches:
        raise ValueError(f"no probe with id {series!r}")
    row = matches[0]
    if not row.series:
        raise ValueError(f"probe {series!r} ({row.kind}) has no grid series")
    names = list(row.series)
    lines = ["# " + " ".join(names)]
    for values in zip(*row.series.values()):
        lines.append(" ".join(repr(float(v)) for v in values))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
