"""Command-line interface: ``fmfsdm <command> [options]``.

Exit status: 0 on success, 1 on domain errors (invalid scenario, failed
calibration; a JSON error document goes to stderr), 2 on I/O or parse
errors. Command-line values override scenario fields, which override
defaults; the effective scenario is echoed into every output bundle.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .errors import FmfsdmError, MissingScenarioFilesError, ScenarioError
from .pipeline import MODES, calibrate_scenario, max_baud_rate, run_scenario, snr_vs_power_sweep
from .report import calibration_bundle, reproduce_report, simulation_bundle, sweep_bundle
from .scenario import load_scenario, scenario_hash, scenarios_dir
from .tables import read_targets_csv

OUTPUT_ENV = "FMFSDM_OUTPUT_DIR"
DEFAULT_OUTPUT = "fmfsdm-output"

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _assignment(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError("expected KEY=VALUE")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def wavelength_to_nm(value: float) -> float:
    """Accept meters (value < 1e-3, e.g. ``1565e-9``) or nanometers (>= 1)."""
    if 0 < value < 1e-3:
        return value * 1e9
    if value >= 1:
        return value
    raise argparse.ArgumentTypeError(f"wavelength {value!r} is neither meters (< 1e-3) nor nm (>= 1)")


def _wavelength(text: str) -> float:
    return wavelength_to_nm(float(text))


def _output_dir(args) -> Path:
    return Path(args.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def _add_scenario(p):
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--set", dest="overrides", action="append", type=_assignment, default=[], metavar="KEY=VALUE",
                   help="override a scenario field by dotted path, e.g. fiber.length=40 (value parsed as JSON)")


def _add_output(p):
    p.add_argument("--output-dir", help=f"bundle root directory (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")


def _add_run(p):
    p.add_argument("--seed", type=_seed, help="PRNG seed, overrides counting.seed")
    p.add_argument("--mode", choices=MODES, default=MODES[0], help="execution mode (default: %(default)s)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="maximum worker threads (default: %(default)s)")
    p.add_argument("--repetitions", type=_positive_int, help="Monte Carlo repetitions, overrides counting.repetitions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmfsdm", description="Few-mode-fiber quantum/classical SDM link simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("validate", help="check a scenario file and print its content hash",
                       description="Validate a scenario; print a JSON summary on success.")
    _add_scenario(p)

    p = sub.add_parser("simulate", help="run a scenario and write per-mode tables",
                       description="Run a scenario and write stats, stage and SNR tables.")
    _add_scenario(p)
    _add_run(p)
    _add_output(p)

    p = sub.add_parser("calibrate", help="fit inter-group coupling from the calibration section",
                       description="Calibrate coupling (and filter extinction) and write the calibrated scenario.")
    _add_scenario(p)
    p.add_argument("--targets", help="Q x Q group cross-talk CSV in dB; empty cells are masked")
    p.add_argument("--parameterization", choices=("pairwise", "adjacent", "uniform", "uniform-adjacent"),
                   help="coupling parameterization, overrides calibration.parameterization")
    p.add_argument("--crosstalk-model", choices=("fiber", "composite"),
                   help="fit cross-talk targets with the fiber alone or MUX x fiber x DeMUX")
    _add_output(p)

    p = sub.add_parser("sweep", help="SNR versus classical output power",
                       description="Sweep the classical output power and report SNR of monitored outputs.")
    _add_scenario(p)
    p.add_argument("--powers", type=float, nargs="+", help="classical output powers in W, overrides sweep.output_powers")
    p.add_argument("--outputs", nargs="+", help="monitored quantum outputs (e.g. HG00), overrides sweep.monitor")
    _add_run(p)
    _add_output(p)

    p = sub.add_parser("budget", help="shot-noise-limited baud rate",
                       description="Maximum baud rate B = P / (N_p h c / lambda).")
    p.add_argument("--power", type=float, required=True, help="classical power in W")
    p.add_argument("--wavelength", type=_wavelength, required=True,
                   help="wavelength in m (values < 1e-3, e.g. 1565e-9) or nm (values >= 1, e.g. 1565)")
    p.add_argument("--photons", type=float, default=20, help="photons per pulse N_p (default: %(default)s)")

    p = sub.add_parser("reproduce", help="calibrate and run the reference scenarios with pass/fail flags",
                       description="Build the reproduction report from a directory of reference scenarios.")
    p.add_argument("scenario_dir", nargs="?", help="directory with the reference scenarios (default: shipped set)")
    _add_run(p)
    _add_output(p)
    return parser


def _overrides(args) -> dict:
    out = dict(getattr(args, "overrides", []) or [])
    if getattr(args, "seed", None) is not None:
        out["counting.seed"] = args.seed
    if getattr(args, "repetitions", None) is not None:
        out["counting.repetitions"] = args.repetitions
    if getattr(args, "powers", None):
        out["sweep.output_powers"] = args.powers
    if getattr(args, "outputs", None):
        out["sweep.monitor"] = args.outputs
    if getattr(args, "parameterization", None):
        out["calibration.parameterization"] = args.parameterization
    if getattr(args, "crosstalk_model", None):
        out["calibration.crosstalk_model"] = args.crosstalk_model
    if getattr(args, "targets", None):
        table = read_targets_csv(args.targets)
        out["calibration.crosstalk_targets_db"] = [[None if math.isnan(v) else v for v in row] for row in table]
    return out


def _emit(data):
    print(json.dumps(data, indent=2, sort_keys=True))


def _cmd_validate(args):
    s = load_scenario(args.scenario, _overrides(args))
    _emit({"status": "valid", "name": s.name, "scenario_hash": scenario_hash(s),
           "modes": s.fiber.mode_count, "channels": len(s.plan)})


def _cmd_simulate(args):
    s = load_scenario(args.scenario, _overrides(args))
    res = run_scenario(s, args.mode, jobs=args.jobs)
    root = simulation_bundle(s, res).write(_output_dir(args))
    _emit({"status": "ok", "bundle": str(root), "group_fqp": None if res.group_fqp is None else
           [float(x) for x in res.group_fqp]})


def _cmd_calibrate(args):
    s = load_scenario(args.scenario, _overrides(args))
    calibrated, summary = calibrate_scenario(s)
    root = calibration_bundle(s, calibrated, summary).write(_output_dir(args))
    _emit({"status": "ok", "bundle": str(root), **summary})


def _cmd_sweep(args):
    s = load_scenario(args.scenario, _overrides(args))
    powers = list(s.sweep_powers)
    if not powers:
        raise ScenarioError(["no sweep powers: give --powers or sweep.output_powers"])
    curves = {m.label: snr_vs_power_sweep(s, powers, m, args.mode, args.jobs) for m in s.monitored_outputs()}
    root = sweep_bundle(s, curves).write(_output_dir(args))
    _emit({"status": "ok", "bundle": str(root)})


def _cmd_budget(args):
    b = max_baud_rate(args.power, args.wavelength, args.photons)
    print(f"max baud rate: {b.max_baud:.6e} Bd ({b.max_baud / 1e9:.4f} GBd)")
    print(f"photon energy: {b.photon_energy:.9e} J at {b.wavelength:g} nm, {b.photons_per_pulse:g} photons/pulse")


def _cmd_reproduce(args):
    directory = Path(args.scenario_dir) if args.scenario_dir else scenarios_dir()
    overrides = {"counting.repetitions": args.repetitions} if args.repetitions else None
    bundle = reproduce_report(directory, args.mode, args.jobs, args.seed, overrides)
    root = bundle.write(_output_dir(args))
    sys.stdout.write(bundle.text)
    print(f"bundle: {root}")
    return EXIT_OK if bundle.summary["all_pass"] else EXIT_DOMAIN


COMMANDS = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "calibrate": _cmd_calibrate,
    "sweep": _cmd_sweep,
    "budget": _cmd_budget,
    "reproduce": _cmd_reproduce,
}


def _error(kind: str, exc: BaseException, **extra) -> None:
    doc = {"error": kind, "type": type(exc).__name__, "message": str(exc), **extra}
    print(json.dumps(doc, indent=2, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        status = COMMANDS[args.command](args)
    except MissingScenarioFilesError as exc:
        _error("io", exc, missing=exc.missing, directory=exc.directory)
        return EXIT_IO
    except ScenarioError as exc:
        _error("domain", exc, violations=exc.violations)
        return EXIT_DOMAIN
    except FmfsdmError as exc:
        _error("domain", exc, violations=[str(exc)])
        return EXIT_DOMAIN
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        _error("io", exc)
        return EXIT_IO
    return EXIT_OK if status is None else status


if __name__ == "__main__":
    sys.exit(main())
