import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .analysis import classify_positivity
from .continuation import Branch, Diagram
from .mesh import Grid
from .plot_generator import plot_png

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["branch_id", "eps", "step", "s_arc", "lambda", "norm_inf", "norm_h1", "min_u",
               "hopf_margin", "positivity_class", "turning", "residual_inf"]


def _plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats as null"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if hasattr(value, "to_dict"):
        return _plain(value.to_dict())
    return value


class DiagramExporter:
    """
    Serializes the branches of a run: one CSV row per branch point, a JSON
    summary of the limit diagram and gnuplot-style polylines.
    """

    def __init__(self, branches: Sequence[Branch], grid: Grid, diagram: Optional[Diagram] = None,
                 pos_tol: float = 1e-8):
        self.branches = list(branches)
        self.grid = grid
        self.diagram = diagram
        self.pos_tol = pos_tol
        self.diagram_data: Dict[str, Any] = {
            "eps_levels": [],
            "per_level": [],
            "loop_report": None,
            "hausdorff_sequence": [],
            "anomalies": [],
            "metadata": {"generator": "loopcont DiagramExporter", "version": 1},
        }

    def branches_frame(self) -> pd.DataFrame:
        rows = []
        for branch_id, br in enumerate(self.branches):
            for step, p in enumerate(br.points):
                verdict = classify_positivity(p.u, self.grid, self.pos_tol)
                rows.append({
                    "branch_id": branch_id, "eps": br.eps, "step": step, "s_arc": p.s_arc,
                    "lambda": p.lam, "norm_inf": p.norm_inf, "norm_h1": p.norm_h1, "min_u": p.min_u,
                    "hopf_margin": verdict.hopf_margin, "positivity_class": verdict.klass,
                    "turning": int(p.turning), "residual_inf": p.residual_inf,
                })
        return pd.DataFrame(rows, columns=CSV_COLUMNS)

    def generate_diagram_data(self) -> Dict[str, Any]:
        self._add_levels()
        if self.diagram is not None:
            self._add_limit()
        return _plain(self.diagram_data)

    def _add_levels(self):
        for br in self.branches:
            self.diagram_data["eps_levels"].append(br.eps)
            self.diagram_data["per_level"].append({
                "eps": br.eps,
                "side": br.side,
                "endpoints": br.endpoints(),
                "closed_mushroom": br.closed_mushroom,
                "n_points": len(br.points),
                "end_bif": br.end_bif,
                "turning_points": [[p.lam, p.norm_inf] for p in br.turning_points],
            })
            self.diagram_data["anomalies"].extend(f"eps={br.eps:g}: {m}" for m in br.anomalies)

    def _add_limit(self):
        d = self.diagram
        self.diagram_data["loop_report"] = d.loop_report.to_dict()
        self.diagram_data["hausdorff_sequence"] = list(d.hausdorff_sequence)
        self.diagram_data["stabilized"] = d.stabilized
        self.diagram_data["final_hausdorff"] = d.final_hausdorff
        self.diagram_data["within_tol"] = d.within_tol
        # level anomalies are already listed per branch
        extra = [m for m in d.anomalies if m not in self.diagram_data["anomalies"]]
        self.diagram_data["anomalies"].extend(extra)

    def plotdata(self) -> str:
        blocks = []
        for br in self.branches:
            lines = [f"# eps={br.eps!r} side={br.side}"]
            lines.extend(f"{p.lam!r} {p.norm_inf!r}" for p in br.points)
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + "\n"


def write_branches_csv(frame: pd.DataFrame, path: Path) -> Path:
    # default float formatting is repr, the shortest round-trip decimal
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def write_json(data: Dict[str, Any], path: Path) -> Path:
    path.write_text(json.dumps(_plain(data), indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def report_data(engine) -> Dict[str, Any]:
    """Everything the engine collected, with the resolved config first"""
    results = dict(engine.results)
    certs = results.pop("certificates", {})
    results["certificates"] = {k: v for k, v in certs.items() if not hasattr(v, "to_dict")}
    return results


def write_outputs(engine, out_dir: Path) -> List[Path]:
    """Write every emit target the engine has data for"""
    emit = set(engine.config.output.emit)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if engine.branches:
        exporter = DiagramExporter(engine.branches, engine.grid, engine.diagram,
                                   pos_tol=engine.config.analysis.pos_tol)
        if "branches_csv" in emit:
            written.append(write_branches_csv(exporter.branches_frame(), out_dir / "branches.csv"))
        if "diagram_json" in emit:
            written.append(write_json(exporter.generate_diagram_data(), out_dir / "diagram.json"))
        if "plotdata" in emit:
            path = out_dir / "branches.dat"
            path.write_text(exporter.plotdata(), encoding="utf-8")
            written.append(path)
        if "plot_png" in emit:
            written.append(plot_png(engine.branches, out_dir / "branches.png"))
    if "report_json" in emit:
        written.append(write_json(report_data(engine), out_dir / "report.json"))
    for path in written:
        logger.info(f"Wrote {path}")
    return written
