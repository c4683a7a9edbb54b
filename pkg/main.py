import argparse
import logging
import sys
from pathlib import Path

import givenData
from loopcont.config import config_from_dict, load_config, override
from loopcont.errors import ConfigError
from loopcont.scenario_engine import EXIT_CONFIG, MODES, run_scenario

logger = logging.getLogger("loopcont")


def get_args(argv=None):
    parser = argparse.ArgumentParser(description="Bifurcation diagrams of indefinite concave-convex problems")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "validate": "check the weights and nonlinearities without solving",
        "eigen": "principal eigenvalues of the linearization at zero",
        "trace": "trace one branch at the coarsest eps level",
        "loop": "full pipeline: every eps level, limit diagram and certificates",
        "qscan": "scan q for the positivity of solutions of the concave problem",
        "bounds": "a priori parameter bound, supersolution and small-solution floor",
    }
    for mode in MODES:
        p = sub.add_parser(mode, help=helps[mode])
        p.add_argument("config", help="config file, or the name of a bundled scenario in givenData")
        p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, default=None, help="random seed for multi-start searches")
        p.add_argument("--strict", action="store_true", help="treat warnings as anomalies")
        p.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    return parser.parse_args(argv)


def resolve_config(name: str):
    path = Path(name)
    if path.exists():
        return load_config(path)
    if name in givenData.scenarios:
        logger.info(f"Using bundled scenario {name}")
        return config_from_dict(givenData.scenarios[name])
    raise ConfigError(f"no config file or bundled scenario named {name!r}")


def main(args) -> int:
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = override(resolve_config(args.config), out=args.out, seed=args.seed)
    except ConfigError as e:
        logger.error(f"Error in config: {e}")
        return EXIT_CONFIG
    report = run_scenario(config, mode=args.command, strict=args.strict)
    for path in report.get("written", []):
        print(path)
    return report["exit_code"]


if __name__ == '__main__':
    args = get_args()
    sys.exit(main(args))
