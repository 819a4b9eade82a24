"""
PETC-IMC - command-line entrypoint.

Subcommands: validate, abstract, evaluate, simulate, check.
Exit codes: 0 ok, 1 input error, 2 assumption violation, 3 abstraction failure, 4 sandwich violation.
"""
import argparse
import logging
import sys
from typing import Dict, List, Optional

from .abstraction import AbstractionBuilder, reward_vectors
from .config import load_config, resolve_threads
from .errors import AbstractionError, AssumptionViolation, IMCFormatError, PETCError, StructuralError
from .geometry import HyperRect, Partition, grid_partition
from .imc import IntervalMarkovChain, IntervalValueIteration, ValueBounds, aggregate_expectation
from .model import InitialDistribution, PETCSystem, RewardSpec, validate_system
from .report import ReportGenerator
from .sim import MCResult, mc_expectation
from .utils import fmt_float, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ASSUMPTION = 2
EXIT_ABSTRACTION = 3
EXIT_SANDWICH = 4


def setup_logging(level=logging.INFO):
    """Configure root logging for the command line."""
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        force=True,
    )


class Run:
    """Everything a subcommand needs, loaded from one configuration file."""

    def __init__(self, args: argparse.Namespace):
        """Load the configuration and build system, partition, initial law and reward."""
        self.config: Dict = load_config(args.config)
        solver = self.config['solver']
        if args.seed is not None:
            solver['int_seed'] = int(args.seed)
            solver['mc_seed'] = int(args.seed)
        self.threads = resolve_threads(args.threads)

        self.system = PETCSystem.from_config(self.config)
        self.validation = validate_system(self.system)
        region = self.config['region']
        self.partition: Partition = grid_partition(HyperRect(region['x_lower'], region['x_upper']), region['grid'])
        if self.partition.domain.dim != self.system.n:
            raise StructuralError(
                f"region dimension {self.partition.domain.dim} does not match state dimension {self.system.n}"
            )
        self.p0 = InitialDistribution.from_config(self.config)
        self.p0.require_dimension(self.system.n)
        self.reward = RewardSpec.from_config(self.config)
        self.reporter = ReportGenerator(self.config)

    def build_imc(self) -> IntervalMarkovChain:
        """Abstract the configured system."""
        builder = AbstractionBuilder(self.system, self.config, threads=self.threads, validation=self.validation)
        return builder.build_imc(self.partition, self.p0)

    def evaluate(self, imc: IntervalMarkovChain) -> ValueBounds:
        """Interval value iteration and p0 aggregation on an IMC of this configuration."""
        k = self.system.k_max
        expected = len(self.partition) * (k + 1) + 1
        if imc.n_states != expected:
            raise IMCFormatError(f"IMC has {imc.n_states} states but the configuration implies {expected}")
        r_lo, r_hi = reward_vectors(self.reward, imc, self.partition, k)
        solver = IntervalValueIteration(self.config)
        vb = solver.run(imc, r_lo, r_hi, self.reward.gamma, self.reward.bound(k))
        aggregate_expectation(imc, vb)
        return vb

    def simulate(self) -> MCResult:
        """Monte Carlo estimate of the discounted reward."""
        solver = self.config['solver']
        return mc_expectation(
            self.system, self.reward, self.p0, self.partition,
            steps=solver.get('mc_steps'),
            paths=int(solver.get('mc_paths', 10000)),
            seed=int(solver.get('mc_seed', 0)),
            threads=self.threads,
            tail_target=float(solver.get('tail_target', 1e-6)),
        )


def cmd_validate(args: argparse.Namespace) -> int:
    """Print the validation report; exit 2 when an assumption fails."""
    run = Run(args)
    for line in run.validation.lines():
        print(line)
    print(f"partition: {len(run.partition)} cells, grid {list(run.partition.counts)}")
    run.validation.require()
    print("validation passed")
    return EXIT_OK


def cmd_abstract(args: argparse.Namespace) -> int:
    """Build and save the IMC."""
    run = Run(args)
    run.validation.require()
    imc = run.build_imc()
    out = args.out or 'imc.json'
    imc.save(out)
    repairs = imc.meta.get('repairs', [])
    print(f"states: {imc.n_states}")
    print(f"edges: {imc.n_edges}")
    print(f"repairs: {len(repairs)}")
    print(f"IMC written to {out}")
    return EXIT_OK


def _write_bounds(run: Run, imc: IntervalMarkovChain, vb: ValueBounds, out: str, csv: Optional[str]):
    """Write value bounds as JSON and optionally CSV."""
    data = vb.to_dict(imc.states)
    data['meta'] = {'soundness': imc.meta.get('soundness'), 'int_seed': imc.meta.get('int_seed')}
    write_json(out, data)
    if csv:
        vb.to_frame(imc.states).to_csv(csv, index=False, float_format='%.17g')
        logger.info(f"Per-state values written to {csv}")


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Bound the expected reward from a saved or freshly built IMC."""
    run = Run(args)
    if args.imc:
        imc = IntervalMarkovChain.load(args.imc)
    else:
        run.validation.require()
        imc = run.build_imc()
    vb = run.evaluate(imc)
    e_lo, e_hi = vb.expectation
    out = args.out or 'bounds.json'
    _write_bounds(run, imc, vb, out, args.csv)
    print(f"expectation: [{fmt_float(e_lo)}, {fmt_float(e_hi)}]")
    if args.report:
        run.reporter.generate_report('evaluate', args.report, run.system, run.validation, imc, vb)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    """Estimate the expected reward by simulation."""
    run = Run(args)
    run.validation.require()
    mc = run.simulate()
    out = args.out or 'estimate.json'
    write_json(out, mc.to_dict())
    print(f"estimate: {fmt_float(mc.estimate)}")
    print(f"std_error: {fmt_float(mc.std_error)}")
    print(f"truncation: {fmt_float(mc.truncation)}")
    return EXIT_OK


def sandwich_verdict(e_lo: float, e_hi: float, mc: MCResult, r_max: float, gamma: float) -> Dict:
    """Check E_lo - margin <= estimate <= E_hi + margin and non-triviality."""
    margin = 3.0 * mc.std_error + mc.truncation
    sandwich = e_lo - margin <= mc.estimate <= e_hi + margin
    non_trivial = (e_hi - e_lo) < r_max / (1.0 - gamma)
    return {
        'e_lo': e_lo,
        'e_hi': e_hi,
        'estimate': mc.estimate,
        'margin': margin,
        'sandwich': bool(sandwich),
        'non_trivial': bool(non_trivial),
        'passed': bool(sandwich and non_trivial),
    }


def cmd_check(args: argparse.Namespace) -> int:
    """Run abstraction, value iteration and simulation and compare them."""
    run = Run(args)
    run.validation.require()
    imc = run.build_imc()
    vb = run.evaluate(imc)
    mc = run.simulate()
    e_lo, e_hi = vb.expectation
    verdict = sandwich_verdict(e_lo, e_hi, mc, run.reward.bound(run.system.k_max), run.reward.gamma)

    print(f"lower bound: {fmt_float(e_lo)}")
    print(f"estimate:    {fmt_float(mc.estimate)} (std_error {fmt_float(mc.std_error)})")
    print(f"upper bound: {fmt_float(e_hi)}")
    print(f"margin:      {fmt_float(verdict['margin'])}")
    if args.out:
        write_json(args.out, {**verdict, 'std_error': mc.std_error, 'truncation': mc.truncation})
    if args.csv:
        vb.to_frame(imc.states).to_csv(args.csv, index=False, float_format='%.17g')
    if args.report:
        run.reporter.generate_report('check', args.report, run.system, run.validation, imc, vb, mc, verdict)

    if not verdict['passed']:
        reason = 'sandwich violated' if not verdict['sandwich'] else 'bounds are trivial'
        logger.error(f"Check failed: {reason}")
        print(f"check FAILED: {reason}")
        return EXIT_SANDWICH
    print("check passed")
    return EXIT_OK


COMMANDS = {
    'validate': cmd_validate,
    'abstract': cmd_abstract,
    'evaluate': cmd_evaluate,
    'simulate': cmd_simulate,
    'check': cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    """Command-line arguments."""
    parser = argparse.ArgumentParser(
        description='Interval Markov chain abstraction and reward bounds for stochastic PETC systems'
    )
    parser.add_argument('command', choices=sorted(COMMANDS), help='Subcommand to run')
    parser.add_argument('--config', required=True, help='Path to the run configuration (JSON or YAML)')
    parser.add_argument('--out', help='Output file')
    parser.add_argument('--imc', help='IMC file to evaluate (evaluate only)')
    parser.add_argument('--seed', type=int, help='Overrides solver.int_seed and solver.mc_seed')
    parser.add_argument('--threads', type=int, help='Worker threads (default: PETC_IMC_THREADS or 1)')
    parser.add_argument('--csv', help='Optional per-state CSV dump')
    parser.add_argument('--report', help='Optional markdown report path')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO)

    try:
        return COMMANDS[args.command](args)
    except AssumptionViolation as e:
        logger.error(f"Assumption violated: {e}")
        print(f"assumption violated: {e}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except AbstractionError as e:
        logger.error(f"Abstraction failed at row {e.row}: {e}")
        print(f"abstraction failed: {e}", file=sys.stderr)
        return EXIT_ABSTRACTION
    except PETCError as e:
        logger.error(f"Input error: {e}")
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == '__main__':
    sys.exit(main())
