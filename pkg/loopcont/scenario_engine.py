"""
End-to-end scenario runs: validate the weights and nonlinearities, compute the
principal eigenvalues, trace the eps-level branches, pass to the limit and
certify the result against the a priori constants.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .analysis import (build_supersolution, check_floor, check_positivity_continuation,
                       check_supersolution_bound, compute_lambda_bar, compute_small_solution_floor,
                       estimate_q_threshold)
from .config import RunConfig
from .continuation import Branch, fit_bifurcation_direction, trace_branch, whyburn_limit
from .diagram_exporter import write_outputs
from .eigen import margin_flagged, principal_eigs, transversality_margin
from .errors import (ConfigError, FitError, GridError, LoopContError, SingularJacobianError,
                     StructuralHypothesisError,
                     WeightDomainError, WeightExprError)
from .mesh import BoundaryCondition, assemble_laplacian, build_grid
from .nonlin import make_spec, validate_hypotheses
from .nsolve import ProblemContext
from .weights import HbData, check_ab_posi, check_H_b, check_H_psi, sample_weights

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_ANOMALY = 3

MODES = ("validate", "eigen", "trace", "loop", "qscan", "bounds")

CONFIG_ERRORS = (ConfigError, GridError, WeightExprError, WeightDomainError, StructuralHypothesisError)

# exponent clauses that only bind for one boundary condition
BC_CLAUSES = {
    BoundaryCondition.DIRICHLET: ("p_neumann_subcritical",),
    BoundaryCondition.NEUMANN: ("p_subcritical",),
}

DEFAULT_Q_GRID = [0.1, 0.3, 0.5, 0.7, 0.9, 0.95]
CRITICAL_SHIFT = 1e-3
# steps for the lambda_minus branch traced only for the direction fit
FIT_STEPS = 200


class ValidationFailed(LoopContError):
    """A required hypothesis failed before any solve"""


class ScenarioEngine:
    """Runs one configured scenario and collects everything the writers need"""

    def __init__(self, config: RunConfig, strict: bool = False):
        self.config = config
        self.strict = strict
        self.grid = None
        self.laplacian = None
        self.field = None
        self.spec = None
        self.ctx: Optional[ProblemContext] = None
        self.pair = None
        self.bounds = None
        self.branches: List[Branch] = []
        self.diagram = None
        self.results: Dict[str, Any] = {
            "config": config.to_dict(),
            "mode": None,
            "validation": {},
            "eigen": None,
            "bounds": None,
            "certificates": {},
            "direction_fit": None,
            "q_scan": None,
            "loop_report": None,
            "warnings": [],
            "anomalies": [],
            "errors": [],
            "exit_code": EXIT_OK,
        }

    def warn(self, message: str):
        logger.warning(message)
        self.results["warnings"].append(message)

    def anomaly(self, message: str):
        logger.warning(f"Anomaly: {message}")
        self.results["anomalies"].append(message)

    def setup(self):
        """Grid, operator, weights and nonlinearities from the config"""
        cfg = self.config
        self.grid = build_grid(cfg.domain.dim, cfg.domain.n, cfg.domain.extent, cfg.domain.bc)
        self.laplacian = assemble_laplacian(self.grid)

        w = cfg.weights
        balls = None
        if w.pos_ball is not None or w.neg_ball is not None:
            balls = (w.pos_ball, w.neg_ball)
        hb = None
        if w.hb_gamma is not None:
            hb = HbData(gamma=w.hb_gamma, tube_width=w.hb_tube_width,
                        beta_min=w.hb_beta_min, beta_max=w.hb_beta_max)
        self.field = sample_weights(w.a_expr, w.b_expr, self.grid, pos_balls=balls, hb_data=hb)

        if w.critical_shift and self.grid.bc is BoundaryCondition.NEUMANN and self.field.a_int >= 0:
            volume = float(np.prod([hi - lo for lo, hi in self.grid.extent]))
            shift = self.field.a_int / volume + CRITICAL_SHIFT * float(np.max(np.abs(self.field.a_full)))
            self.field = self.field.shifted(shift)
            self.results["weight_shift"] = shift
            self.warn(f"Integral of a was {self.field.a_int + shift * volume:.6g}; a shifted by {shift:.6g}")

        nl = cfg.nonlinearity
        self.spec = make_spec(nl.f_family, nl.q, nl.g_family, nl.p, f_r=nl.f_r, g_r=nl.g_r, g_k=nl.g_k)
        tol = cfg.continuation.tol_res
        if tol is None:
            self.ctx = ProblemContext(self.laplacian, self.field, self.spec)
        else:
            self.ctx = ProblemContext(self.laplacian, self.field, self.spec, tol_rel=0.0, tol_abs=tol)
        logger.info(f"Scenario set up: {self.grid.bc.value} grid with {self.grid.size} unknowns, "
                    f"f={self.spec.f_family.label()}, g={self.spec.g_family.label()}")

    def validate(self) -> bool:
        """Every hypothesis check; raises ValidationFailed on a failed clause"""
        v = self.results["validation"]
        report = validate_hypotheses(self.spec, self.config.N)
        for clause in BC_CLAUSES[self.grid.bc]:
            report.clauses.pop(clause, None)
        v["hypotheses"] = report.to_dict()
        for clause in report.inconclusive:
            self.warn(f"Hypothesis {clause} is inconclusive on the sampling ladder")

        v["components"] = {which: check_H_psi(self.field, which).to_dict() for which in ("a", "-a", "b")}
        ab = check_ab_posi(self.field)
        v["ab_posi"] = ab.to_dict()
        if ab.searched and ab.ok:
            logger.info(f"Positivity balls found by search: {ab.witness.to_dict()}")

        failures = [f"hypothesis {c} failed" for c in report.failed]
        if not ab.ok:
            failures.append(f"positivity balls: {ab.message}")
        if self.field.hb_data is not None:
            hb = check_H_b(self.field, self.spec.p, N=self.config.N)
            v["H_b"] = hb.to_dict()
            if not hb.ok:
                failures.append(f"b geometry ({hb.failing_clause}): {hb.message}")
        if failures:
            raise ValidationFailed("; ".join(failures))
        logger.info("Validation passed")
        return True

    def solve_eigen(self):
        eps = self.config.continuation.eps_schedule[0]
        self.pair = principal_eigs(self.laplacian, self.field, self.spec, eps)
        margin = transversality_margin(self.pair)
        self.results["eigen"] = dict(self.pair.to_dict(), transversality_margin=margin)
        if margin_flagged(margin):
            self.warn(f"Principal eigenvalue may not be simple (margin {margin:.3g})")
        return self.pair

    def compute_bounds(self):
        self.bounds = compute_lambda_bar(self.field, self.spec, "plus")
        out = {"apriori": self.bounds.to_dict()}
        an = self.config.analysis
        Lambda = an.Lambda if an.Lambda is not None else 0.25 * self.bounds.lambda_bar
        try:
            floor = compute_small_solution_floor(self.field, self.spec, Lambda, ctx=self.ctx, bounds=self.bounds)
            self.bounds.C_Lambda, self.bounds.s1 = floor.C_Lambda, floor.s1
            out["floor"] = floor.to_dict()
            self.results["certificates"]["floor"] = floor
        except LoopContError as e:
            self.warn(f"Small-solution floor unavailable: {e}")
        lam_range = [-self.bounds.lambda_bar_neg, self.bounds.lambda_bar]
        cert = build_supersolution(self.field, self.spec, lam_range, an.C1, self.ctx)
        out["supersolution"] = cert.to_dict()
        self.results["certificates"]["supersolution"] = cert
        if not cert.ok:
            self.anomaly(cert.message)
        self.results["bounds"] = out
        return self.bounds

    def trace(self):
        """A single branch at the coarsest eps level"""
        cont = self.config.continuation
        eps = cont.eps_schedule[0]
        pair = self.pair.scaled(eps)
        branch = trace_branch(pair, cont.side, self.ctx, cont.ds0, cont.ds_max, cont.max_steps,
                              norm_cap=cont.norm_cap)
        self.branches = [branch]
        for msg in branch.anomalies:
            self.anomaly(f"eps={eps:g}: {msg}")
        self._direction_fit()
        return branch

    def run_loop(self):
        cont = self.config.continuation
        if len(cont.eps_schedule) < 3:
            raise ConfigError("loop needs at least three eps levels", key="eps_schedule", section="continuation")
        self.compute_bounds()
        lam_bar, lam_bar_neg = self.bounds.lambda_bar, self.bounds.lambda_bar_neg
        delta = self.config.analysis.delta_factor * lam_bar
        sides = ["plus", "minus"] if cont.both_sides else [cont.side]
        diagrams = []
        for side in sides:
            diagram = whyburn_limit(self.ctx, self.pair, cont.eps_schedule,
                                    hausdorff_tol=cont.hausdorff_tol, ds0=cont.ds0, ds_max=cont.ds_max,
                                    max_steps=cont.max_steps, lambda_bar=lam_bar,
                                    lambda_bar_neg=lam_bar_neg, norm_cap=cont.norm_cap, delta=delta,
                                    workers=cont.workers, side=side)
            diagrams.append(diagram)
            for msg in diagram.anomalies:
                self.anomaly(msg)
            for msg in diagram.warnings:
                self.warn(msg)
        self.diagram = diagrams[0]
        self.branches = [br for d in diagrams for br in d.branches]
        self.results["loop_report"] = self.diagram.loop_report.to_dict()
        if not self.diagram.loop_report.touches_origin:
            self.warn("Limit branch does not reach (0, 0) within tolerance")
        if not self.diagram.loop_report.liminf_ok:
            self.anomaly("some eps level stays away from the limit branch near (0, 0) or u0")
        self._certify(lam_bar, lam_bar_neg)
        self._direction_fit()
        return self.diagram

    def _certify(self, lam_bar: float, lam_bar_neg: float):
        pos_tol = self.config.analysis.pos_tol
        for br in self.branches:
            lam = br.lambdas
            if np.any(lam >= lam_bar) or np.any(lam <= -lam_bar_neg):
                self.anomaly(f"eps={br.eps:g}: branch leaves the a priori box "
                             f"({lam.min():.6g}, {lam.max():.6g})")
            for item in check_positivity_continuation(br, self.grid, pos_tol):
                self.anomaly(f"eps={item['eps']:g}: isolated dead core at step {item['step']}")
        certs = self.results["certificates"]
        if "floor" in certs:
            violations = check_floor(self.branches, certs["floor"], self.grid)
            certs["floor_violations"] = violations
            if violations:
                self.anomaly(f"{len(violations)} branch point(s) below the small-solution floor")
        cert = certs.get("supersolution")
        if cert is not None:
            violations = [v for br in self.branches for v in check_supersolution_bound(br, cert, self.field)]
            certs["supersolution_violations"] = violations
            if violations:
                self.anomaly(f"{len(violations)} branch point(s) above the comparison supersolution")

    def _direction_fit(self):
        """Fit on the coarsest-eps branch leaving lambda_minus, traced here if the run did not"""
        if self.grid.bc is not BoundaryCondition.NEUMANN:
            return
        cont = self.config.continuation
        eps = cont.eps_schedule[0]
        branch = next((br for br in self.branches if br.side == "minus" and br.eps == eps), None)
        try:
            if branch is None:
                branch = trace_branch(self.pair.scaled(eps), "minus", self.ctx, cont.ds0, cont.ds_max,
                                      min(cont.max_steps, FIT_STEPS), norm_cap=cont.norm_cap)
            fit = fit_bifurcation_direction(branch, self.pair, self.spec, self.field)
        except (FitError, SingularJacobianError) as e:
            self.warn(f"Bifurcation direction not fitted: {e}")
            return
        self.results["direction_fit"] = fit.to_dict()

    def run_qscan(self):
        an = self.config.analysis
        q_grid = an.q_grid if an.q_grid is not None else DEFAULT_Q_GRID
        table = estimate_q_threshold(self.field, self.ctx, q_grid, pos_tol=an.pos_tol,
                                     seed=self.config.run.seed)
        self.results["q_scan"] = table.to_dict()
        for w in table.warnings:
            self.results["warnings"].append(w)
        return table

    def run(self, mode: str = "loop") -> int:
        """Run ``mode`` and return the exit code; outputs are written even on anomalies"""
        if mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}, got {mode!r}")
        self.results["mode"] = mode
        code = EXIT_OK
        try:
            self.setup()
            self.validate()
            if mode == "bounds":
                self.compute_bounds()
            elif mode == "qscan":
                self.run_qscan()
            elif mode != "validate":
                self.solve_eigen()
                if mode == "trace":
                    self.trace()
                elif mode == "loop":
                    self.run_loop()
        except (ValidationFailed, *CONFIG_ERRORS) as e:
            logger.error(f"Error in {mode}: {e}")
            self.results["errors"].append({"module": type(e).__module__, "type": type(e).__name__,
                                           "message": str(e)})
            code = EXIT_CONFIG
        except (LoopContError, ValueError, np.linalg.LinAlgError) as e:
            logger.exception(f"Error in {mode}")
            self.results["errors"].append({"module": type(e).__module__, "type": type(e).__name__,
                                           "message": str(e)})
            code = EXIT_SOLVER
        if code == EXIT_OK and (self.results["anomalies"] or (self.strict and self.results["warnings"])):
            code = EXIT_ANOMALY
        self.results["exit_code"] = code
        return code


def run_scenario(config: RunConfig, mode: str = "loop", strict: bool = False,
                 out_dir: Optional[Path] = None) -> Dict[str, Any]:
    """Run a scenario, write its requested outputs and return the report"""
    engine = ScenarioEngine(config, strict=strict)
    code = engine.run(mode)
    out_dir = Path(out_dir if out_dir is not None else config.output.dir)
    written = write_outputs(engine, out_dir)
    engine.results["written"] = [str(p) for p in written]
    logger.info(f"Scenario finished with exit code {code}")
    return engine.results
