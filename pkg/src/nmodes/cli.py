"""``nmodes`` command-line interface.

Exit codes: 0 success, 1 numerical failure, 2 usage or validation error,
3 partial result (truncated manifold).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import archive
from .continuation import DEFAULT_DE, DEFAULT_EMAX, DEFAULT_NMAX, compute_generator, mode_states, point_at_energy
from .dynamics import linearize
from .errors import ContractViolation, EnergyRangeError, ModelSpecError, NModesError
from .metrics import ModalBranch, compare, energy_frequency_table
from .models import load_model_spec, validate_model_spec

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3
STROBE_POINTS = 101

log = logging.getLogger("nmodes")


class UsageError(Exception):
    pass


def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def _fractions(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"model spec not found: {path}")
    model = load_model_spec(path)
    return model, model.spec(), path.stem


def _load_archive(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"archive not found: {path}")
    doc = archive.load_archive_document(path)
    return archive.manifold_from_dict(doc), doc


def _branch(model_path, archive_path):
    model, _, name = _load_model(model_path)
    manifold, doc = _load_archive(archive_path)
    if manifold.fingerprint != model.fingerprint:
        raise UsageError(f"archive {archive_path} was not computed for model {model_path} (fingerprint mismatch)")
    if not manifold.points:
        raise UsageError(f"archive {archive_path} is empty")
    return ModalBranch(model, manifold, doc.get("model_name") or name)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_linearize(args) -> int:
    model, _, name = _load_model(args.model)
    modes = linearize(model)
    rows = [(i + 1, w, w / (2 * np.pi), 2 * np.pi / w) for i, w in enumerate(modes.omegas)]
    print(f"{'mode':>4}  {'omega_rad_s':>14}  {'freq_hz':>12}  {'period_s':>12}")
    for i, w, f, T in rows:
        print(f"{i:>4}  {w:>14.6f}  {f:>12.6f}  {T:>12.6f}")
    if args.csv:
        archive.write_csv(args.csv, ("mode", "omega_rad_s", "freq_hz", "period_s"), rows)
    return EXIT_OK


def cmd_manifold(args) -> int:
    model, spec, name = _load_model(args.model)
    if args.mode > model.n_dofs:
        raise UsageError(f"mode index {args.mode} exceeds DoFs ({model.n_dofs})")
    manifold = compute_generator(model, args.mode, args.de, args.emax, args.nmax, first_step=args.first_step)
    archive.save_archive(args.out, manifold, model_spec=spec, model_name=name)
    E = manifold.energies
    top = f"{E[-1]:.6g} J" if E.size else "none"
    print(f"mode {args.mode}: {len(manifold)} points, max energy {top}")
    if manifold.truncated:
        print(f"truncated: {manifold.diagnostic}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_compare(args) -> int:
    A = _branch(args.model_a, args.archive_a)
    B = _branch(args.model_b, args.archive_b)
    if A.manifold.mode_index != B.manifold.mode_index:
        raise UsageError("archives hold different mode indices")
    report = compare(A, B, args.s, integrals=not args.no_integrals)
    archive.write_csv(args.out, archive.REPORT_COLUMNS, report.rows())
    flagged = [c for c, d in zip("xyz", report.degenerate) if d]
    if flagged:
        print(f"degenerate components (silent signals): {', '.join(flagged)}", file=sys.stderr)
    print(f"{report.energies.size} energies written to {args.out}")
    return EXIT_OK


def cmd_strobe(args) -> int:
    branch = _branch(args.model, args.archive)
    lo, hi = branch.energy_range
    if not 0 < args.energy <= hi + 1e-9:
        raise EnergyRangeError(f"energy {args.energy} J outside the branch (0, {hi:.6g}]")
    point = point_at_energy(branch.model, branch.manifold, args.energy)
    fractions = np.asarray(args.fractions, dtype=float)
    Q = mode_states(branch.model, point, fractions)
    s = np.linspace(0.0, branch.length, STROBE_POINTS)
    shapes = branch.model.backbone(Q, s)
    rows = []
    for frac, shape in zip(fractions, shapes):
        for sj, (x, y, z) in zip(s, shape):
            rows.append((frac, frac * point.T, sj, x, y, z))
    archive.write_csv(args.out, archive.STROBE_COLUMNS, rows)
    return EXIT_OK


def cmd_energy_frequency(args) -> int:
    manifold, doc = _load_archive(args.archive)
    if not manifold.points:
        raise UsageError(f"archive {args.archive} is empty")
    name = doc.get("model_name") or Path(args.archive).stem
    rows = [(name, manifold.mode_index, E, w, f) for E, w, f in energy_frequency_table(manifold)]
    archive.write_csv(args.out, archive.ENERGY_FREQUENCY_COLUMNS, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmodes", description="Nonlinear normal modes of planar arm models.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("linearize", help="linear mode frequencies")
    p.add_argument("--model", required=True, help="model-spec JSON file")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("manifold", help="continue one mode into a manifold archive")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", type=_positive(int), required=True, help="1-based mode index")
    p.add_argument("--de", type=_positive(float), default=DEFAULT_DE, help="reference energy step (J)")
    p.add_argument("--emax", type=_positive(float), default=DEFAULT_EMAX, help="maximum energy (J)")
    p.add_argument("--nmax", type=_positive(int), default=DEFAULT_NMAX, help="Newton iterations per step")
    p.add_argument("--first-step", type=_positive(float), default=None, help="first energy increment (J)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_manifold)

    p = sub.add_parser("compare", help="similarity report between two archives")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--archive-a", required=True)
    p.add_argument("--archive-b", required=True)
    p.add_argument("--s", type=_fractions, default=None, help="arc lengths (m), default: tip")
    p.add_argument("--no-integrals", action="store_true", help="skip arc-length integrals")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("strobe", help="backbone shapes at fractions of the period")
    p.add_argument("--archive", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--energy", type=_positive(float), required=True)
    p.add_argument("--fractions", type=_fractions, default=[0.0, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_strobe)

    p = sub.add_parser("energy-frequency", help="energy-frequency table of an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_energy_frequency)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ContractViolation, ModelSpecError, EnergyRangeError, OSError) as exc:
        print(f"nmodes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NModesError as exc:
        print(f"nmodes: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
