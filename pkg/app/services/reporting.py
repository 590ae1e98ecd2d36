"""
Report rendering for evaluation results.

Markdown reports hold one table per M with rows by gamma and columns by model;
JSON reports carry the same layout plus per-fold detail.
"""

from __future__ import annotations

import json
from collections import defaultdict
from typing import Any, Literal

from jinja2 import Environment, PackageLoader

from app.schemas.config import VARIANT_ORDER, EvalConfig, ModelVariant
from app.schemas.evaluation import EvalCell


BOLD_TOLERANCE = 5e-4
REPORT_TITLE = "Engagement prediction: AUC, forward chaining"

_env = Environment(
    loader=PackageLoader("app", "templates"),
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
    autoescape=False,
)


def best_variants(cells: list[EvalCell]) -> set[ModelVariant]:
    """Variants whose mean AUC lies within the bold tolerance of the row maximum."""
    means = {cell.variant: cell.mean_auc for cell in cells if cell.mean_auc is not None}
    if not means:
        return set()
    top = max(means.values())
    return {variant for variant, mean in means.items() if mean >= top - BOLD_TOLERANCE}


def _tables(cells: list[EvalCell]) -> list[dict[str, Any]]:
    by_m: dict[int, dict[int, list[EvalCell]]] = defaultdict(lambda: defaultdict(list))
    for cell in cells:
        by_m[cell.M][cell.gamma].append(cell)

    tables = []
    for M in sorted(by_m):
        present = {cell.variant for row in by_m[M].values() for cell in row}
        columns = [v for v in VARIANT_ORDER if v in present]
        rows = []
        for gamma in sorted(by_m[M]):
            row_cells = {cell.variant: cell for cell in by_m[M][gamma]}
            best = best_variants(list(row_cells.values()))
            rows.append({"gamma": gamma, "cells": row_cells, "best": best})
        tables.append({"M": M, "columns": columns, "rows": rows})
    return tables


def _fold_count(cells: list[EvalCell]) -> int | None:
    return len(cells[0].fold_aucs) if cells else None


def render_markdown(cells: list[EvalCell]) -> str:
    folds = _fold_count(cells)
    caption = (
        f"AUC results, {folds}-fold forward chaining. Cells are mean±std over folds "
        f"(population standard deviation); the best result per row is in bold."
        if folds else "No results."
    )
    tables = []
    for table in _tables(cells):
        rows = []
        for row in table["rows"]:
            rendered = []
            for variant in table["columns"]:
                cell = row["cells"].get(variant)
                if cell is None:
                    rendered.append("n/a")
                    continue
                text = cell.formatted()
                rendered.append(f"**{text}**" if variant in row["best"] else text)
            rows.append({"gamma": row["gamma"], "cells": rendered})
        tables.append({
            "M": table["M"],
            "headers": [v.display_name for v in table["columns"]],
            "rows": rows,
        })

    degenerate = [
        f"{cell.variant.display_name}, M={cell.M}, γ={cell.gamma}: folds {', '.join(map(str, cell.degenerate_folds))}"
        for cell in cells if cell.degenerate
    ]
    return _env.get_template("report.md.j2").render(
        title=REPORT_TITLE, caption=caption, tables=tables, degenerate=degenerate
    )


def report_document(cells: list[EvalCell], config: EvalConfig | None = None) -> dict[str, Any]:
    """JSON-ready report with per-fold results (ROC points excluded) and the run config."""
    tables = []
    for table in _tables(cells):
        rows = []
        for row in table["rows"]:
            rows.append({
                "gamma": row["gamma"],
                "best": [v.value for v in table["columns"] if v in row["best"]],
                "cells": {
                    variant.value: row["cells"][variant].model_dump(mode="json", exclude={"folds": {"__all__": {"roc"}}})
                    for variant in table["columns"] if variant in row["cells"]
                },
            })
        tables.append({"M": table["M"], "variants": [v.value for v in table["columns"]], "rows": rows})

    return {
        "metadata": {
            "title": REPORT_TITLE,
            "fold_count": _fold_count(cells),
            "std": "population",
            "bold_tolerance": BOLD_TOLERANCE,
            "window": cells[0].window.value if cells else None,
            "degenerate_cells": sum(cell.degenerate for cell in cells),
            "config": config.model_dump(mode="json") if config is not None else None,
        },
        "tables": tables,
    }


def render_report(
    cells: list[EvalCell],
    fmt: Literal["markdown", "json"] = "markdown",
    config: EvalConfig | None = None,
) -> str:
    """
    Render evaluation cells as a markdown or JSON document.

    Args:
        cells: Cells of any number of (M, gamma, variant) combinations.
        fmt: ``markdown`` or ``json``.
        config: Resolved grid settings, embedded in the JSON metadata.

    Returns:
        str: The document, newline-terminated.

    Raises:
        ValueError: If the format is unknown.
    """
    if fmt == "markdown":
        return render_markdown(cells)
    if fmt == "json":
        return json.dumps(report_document(cells, config), indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown report format '{fmt}'")


def roc_document(cells: list[EvalCell]) -> dict[str, Any]:
    """ROC points of every non-degenerate fold, keyed by cell."""
    curves = []
    for cell in cells:
        for fold in cell.folds:
            if fold.degenerate:
                continue
            curves.append({
                "variant": cell.variant.value,
                "M": cell.M,
                "gamma": cell.gamma,
                "fold": fold.fold,
                "auc": fold.auc,
                "points": [point.model_dump(mode="json") for point in fold.roc],
            })
    return {"curves": curves}
