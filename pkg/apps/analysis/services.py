"""
Post-hoc analyses of trained diffs and sweep tables.

Byte counts are exact integers. Human-readable sizes use decimal megabytes
(1 MB = 10**6 bytes); mebibytes are reported alongside where both readings
matter.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter
from scipy.stats import spearmanr

from diffprune.errors import DiffPruneError

from .errors import AnalysisError, SweepCellError

logger = logging.getLogger(__name__)

FULL_WEIGHTS = "full-weights"
POSITIONS_AND_WEIGHTS = "positions+weights"
SCHEMES = (FULL_WEIGHTS, POSITIONS_AND_WEIGHTS)

BYTES_PER_WEIGHT = 4
BYTES_PER_POSITION = 4

SWEEP_COLUMNS = (
    "t", "method", "accuracy", "nonzero_fraction", "zero_group_fraction", "seeds", "wall_seconds",
)
ABLATION_COLUMNS = (
    "t", "structured", "without_projection", "without_finetune", "natural_sparsity",
)
LAYER_COLUMNS = ("layer", "nonzero", "fraction")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SparsityReport:
    per_layer: list
    counts: list
    total_nonzero: int
    target: float | None = None

    def fraction(self, label):
        return dict(self.per_layer).get(label, 0.0)

    def rows(self):
        return [
            {"layer": label, "nonzero": count, "fraction": fraction}
            for (label, fraction), (_, count) in zip(self.per_layer, self.counts)
        ]


@dataclass(frozen=True)
class StorageEstimate:
    scheme: str
    bytes: int
    bytes_per_weight: int = BYTES_PER_WEIGHT
    bytes_per_position: int = BYTES_PER_POSITION

    @property
    def assumptions(self):
        return {"bytes_per_weight": self.bytes_per_weight, "bytes_per_position": self.bytes_per_position}

    @property
    def megabytes(self):
        return self.bytes / 10**6

    @property
    def mebibytes(self):
        return self.bytes / 2**20

    def describe(self):
        return f"{self.scheme}: {self.bytes:,} bytes = {self.megabytes:.1f} MB ({self.mebibytes:.1f} MiB)"


@dataclass(frozen=True)
class ParameterEfficiency:
    new_per_task: float
    total_multiplier: float


def _nonhead_layers(space):
    used = {seg.layer for seg in space.nonhead_segments}
    return [(idx, label) for idx, label in space.layers if idx in used]


def per_layer_sparsity(delta, target=None):
    """Share of the diff's non-head nonzeros that falls in each layer.

    Head entries are left out; they are trained densely for every task.
    Layers without nonzeros are listed with fraction 0.
    """
    space = delta.space
    layers = _nonhead_layers(space)
    positions = delta.positions[~space.head_mask[delta.positions]]
    per_coordinate = space.layer_index[positions]
    counts = [(label, int(np.count_nonzero(per_coordinate == idx))) for idx, label in layers]
    total = int(positions.size)
    if total == 0:
        return SparsityReport([], counts, 0, target)
    per_layer = [(label, count / total) for label, count in counts]
    return SparsityReport(per_layer, counts, total, target)


def zero_group_fraction(delta, groups):
    """Fraction of groups that contain none of the diff's positions."""
    groups = getattr(groups, "groups", groups)
    if len(groups) == 0:
        raise AnalysisError("zero_group_fraction needs at least one group")
    touched = np.zeros(delta.dim, dtype=bool)
    touched[delta.positions] = True
    untouched = sum(1 for members in groups if not touched[np.asarray(members, dtype=np.int64)].any())
    return untouched / len(groups)


def _count(value, name):
    if isinstance(value, float):
        if not value.is_integer():
            raise AnalysisError(f"{name} must be a whole number, got {value}")
        value = int(value)
    value = int(value)
    if value < 0:
        raise AnalysisError(f"{name} must be non-negative, got {value}")
    return value


def storage_cost(n_params, n_nonzero, scheme=POSITIONS_AND_WEIGHTS):
    """Bytes needed to store one task: dense weights, or positions plus values."""
    n_params = _count(n_params, "n_params")
    n_nonzero = _count(n_nonzero, "n_nonzero")
    if n_nonzero > n_params:
        raise AnalysisError(f"n_nonzero {n_nonzero} exceeds n_params {n_params}")
    if scheme == FULL_WEIGHTS:
        size = BYTES_PER_WEIGHT * n_params
    elif scheme == POSITIONS_AND_WEIGHTS:
        size = (BYTES_PER_WEIGHT + BYTES_PER_POSITION) * n_nonzero
    else:
        raise AnalysisError(f"unknown storage scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
    return StorageEstimate(scheme, size)


def natural_sparsity(delta):
    """Non-head nonzero fraction of a diff, typically measured before projection."""
    return delta.nonzero_fraction


def parameter_efficiency(n_params, n_nonzero, n_tasks):
    n_params = _count(n_params, "n_params")
    n_nonzero = _count(n_nonzero, "n_nonzero")
    n_tasks = _count(n_tasks, "n_tasks")
    if n_params == 0:
        raise AnalysisError("n_params must be positive")
    f = n_nonzero / n_params
    return ParameterEfficiency(new_per_task=f, total_multiplier=1 + n_tasks * f)


def layer_consistency(report_a, report_b):
    """Spearman rank correlation of two reports' per-layer fractions.

    Layers missing from one report count as 0 there. Returns nan when either
    side is constant.
    """
    labels = [label for label, _ in report_a.counts]
    labels += [label for label, _ in report_b.counts if label not in labels]
    if len(labels) < 2:
        raise AnalysisError("layer_consistency needs at least two layers")
    a = [report_a.fraction(label) for label in labels]
    b = [report_b.fraction(label) for label in labels]
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return math.nan
    return float(spearmanr(a, b).statistic)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepCell:
    t: float
    method: str
    seed: int


@dataclass(frozen=True)
class CellResult:
    accuracy: float
    nonzero_fraction: float
    zero_group_fraction: float | None = None
    wall_seconds: float = 0.0


@dataclass(frozen=True)
class SweepRow:
    t: float
    method: str
    accuracy: float
    nonzero_fraction: float
    zero_group_fraction: float | None
    seeds: int
    wall_seconds: float
    accuracies: tuple = field(default=(), compare=False)

    def as_dict(self):
        row = asdict(self)
        row.pop("accuracies")
        return row


def sweep_cells(sparsities, methods, seeds=(0,)):
    """Cells in table order: t, then method, then seed."""
    sparsities = [float(t) for t in sparsities]
    if not sparsities or not methods or not seeds:
        raise AnalysisError("a sweep needs at least one sparsity, method and seed")
    for t in sparsities:
        if not 0.0 < t <= 1.0:
            raise AnalysisError(f"sparsity {t} is outside (0, 1]")
    return [SweepCell(t, method, int(seed)) for t in sparsities for method in methods for seed in seeds]


def run_cells_inline(run_cell, cells):
    results = []
    for cell in cells:
        try:
            results.append(run_cell(cell))
        except DiffPruneError as exc:
            raise SweepCellError(cell.t, cell.method, cell.seed, exc) from exc
        logger.info("sweep cell t=%s method=%s seed=%s accuracy=%.4f",
                    cell.t, cell.method, cell.seed, results[-1].accuracy)
    return results


def _median(values):
    values = [v for v in values if v is not None]
    return float(np.median(values)) if values else None


def sparsity_sweep(run_cell, sparsities, methods, seeds=(0,), *, runner=None):
    """Run every (t, method, seed) cell and reduce over seeds by the median.

    `run_cell(cell)` returns a CellResult. `runner(run_cell, cells)` may
    execute the cells elsewhere but must return results in cell order.
    """
    cells = sweep_cells(sparsities, methods, seeds)
    results = (runner or run_cells_inline)(run_cell, cells)
    if len(results) != len(cells):
        raise AnalysisError(f"runner returned {len(results)} results for {len(cells)} cells")

    grouped = {}
    for cell, result in zip(cells, results):
        grouped.setdefault((cell.t, cell.method), []).append(result)

    rows = []
    for (t, method), bucket in grouped.items():
        rows.append(SweepRow(
            t=t,
            method=method,
            accuracy=_median([r.accuracy for r in bucket]),
            nonzero_fraction=_median([r.nonzero_fraction for r in bucket]),
            zero_group_fraction=_median([r.zero_group_fraction for r in bucket]),
            seeds=len(bucket),
            wall_seconds=_median([r.wall_seconds for r in bucket]),
            accuracies=tuple(r.accuracy for r in bucket),
        ))
    return rows


def projection_ablation(rows):
    """Per t: structured accuracy next to its no-projection and no-finetune variants."""
    by_cell = {(row.t, row.method): row for row in rows}
    table = []
    for t in dict.fromkeys(row.t for row in rows):
        full = by_cell.get((t, "structured"))
        no_projection = by_cell.get((t, "structured-no-projection"))
        no_finetune = by_cell.get((t, "structured-no-finetune"))
        table.append({
            "t": t,
            "structured": full.accuracy if full else None,
            "without_projection": no_projection.accuracy if no_projection else None,
            "without_finetune": no_finetune.accuracy if no_finetune else None,
            "natural_sparsity": no_projection.nonzero_fraction if no_projection else None,
        })
    return table


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def _as_dict(row):
    return row.as_dict() if hasattr(row, "as_dict") else dict(row)


def write_csv(path, columns, rows, config=None):
    """Header plus one line per row, UTF-8; the config goes to `<path>.config.json`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(_as_dict(row))
    if config is not None:
        sidecar = path.with_name(path.name + ".config.json")
        sidecar.write_text(json.dumps(config, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def write_xlsx(path, sheets):
    """One worksheet per (title, columns, rows) table, header row styled."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    header_font = Font(bold=True, size=11, color="FFFFFF")
    header_fill = PatternFill(start_color="1a365d", end_color="1a365d", fill_type="solid")
    border = Border(
        left=Side(style="thin"),
        right=Side(style="thin"),
        top=Side(style="thin"),
        bottom=Side(style="thin"),
    )

    wb = Workbook()
    wb.remove(wb.active)
    for title, columns, rows in sheets:
        ws = wb.create_sheet(title=title[:31])
        for col, name in enumerate(columns, start=1):
            cell = ws.cell(row=1, column=col, value=name)
            cell.font = header_font
            cell.fill = header_fill
            cell.border = border
            cell.alignment = Alignment(horizontal="center")
            ws.column_dimensions[get_column_letter(col)].width = max(12, len(name) + 4)
        for r, row in enumerate(rows, start=2):
            values = _as_dict(row)
            for col, name in enumerate(columns, start=1):
                ws.cell(row=r, column=col, value=values.get(name)).border = border
        ws.freeze_panes = "A2"

    wb.save(path)
    logger.info("wrote %s", path)
    return path
