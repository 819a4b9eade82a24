"""
Markdown report generator for abstraction and verification runs.
"""
from datetime import datetime
from typing import Dict, Optional
import logging

import numpy as np
import pandas as pd

from .imc import IntervalMarkovChain, ValueBounds
from .model import PETCSystem, ValidationReport
from .sim import MCResult
from .utils import create_markdown_table, fmt_float

logger = logging.getLogger(__name__)


class ReportGenerator:
    """Generator for run reports."""

    def __init__(self, config: Dict):
        """Keep the run configuration for the header."""
        self.config = config

    def _generate_header(self, command: str) -> str:
        """Title and run settings."""
        return f"""# PETC-IMC Run Report - {command}

**Generated:** {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}
---"""

    def _generate_system_section(self, system: PETCSystem, validation: Optional[ValidationReport]) -> str:
        """System matrices and validation checks."""
        lines = [
            "## System",
            "",
            f"- n = {system.n}, epsilon = {system.epsilon}, k_max = {system.k_max}",
            f"- discount gamma = {self.config.get('solver', {}).get('gamma')}",
        ]
        if validation is not None:
            lines.append("")
            lines.extend(f"- {line}" for line in validation.lines())
        return "\n".join(lines)

    def _generate_imc_section(self, imc: IntervalMarkovChain) -> str:
        """State and edge counts with any row repairs."""
        meta = imc.meta
        stats = pd.DataFrame([
            {'Quantity': 'states', 'Value': imc.n_states},
            {'Quantity': 'edges', 'Value': imc.n_edges},
            {'Quantity': 'pruned destinations', 'Value': meta.get('pruned_destinations', 0)},
            {'Quantity': 'row repairs', 'Value': len(meta.get('repairs', []))},
            {'Quantity': 'integration tolerance', 'Value': meta.get('int_tol')},
            {'Quantity': 'integrator seed', 'Value': meta.get('int_seed')},
        ])
        section = "## Interval Markov Chain\n\n" + create_markdown_table(stats)
        repairs = meta.get('repairs', [])
        if repairs:
            section += "\n\n### Repairs\n\n" + create_markdown_table(pd.DataFrame(repairs))
        if meta.get('soundness'):
            section += f"\n\n_{meta['soundness']}_"
        return section

    def _generate_bounds_section(self, imc: IntervalMarkovChain, vb: ValueBounds) -> str:
        """Expectation bounds and a sample of per-state values."""
        frame = vb.to_frame(imc.states)
        frame['p0'] = imc.p0
        top = frame[frame['p0'] > 0].sort_values(by='p0', ascending=False).head(20)
        lines = ["## Value Bounds", ""]
        if vb.expectation is not None:
            lines.append(f"**Expectation interval:** [{fmt_float(vb.expectation[0])}, {fmt_float(vb.expectation[1])}]")
            lines.append("")
        lines.append(f"Iterations: {vb.iterations}, tail bound: {vb.tail_bound:.3e}, "
                     f"mean width: {float(np.mean(vb.upper - vb.lower)):.4g}")
        lines.append("")
        lines.append(create_markdown_table(top[['state', 'p0', 'v_lo', 'v_hi']]))
        return "\n".join(lines)

    def _generate_simulation_section(self, mc: MCResult) -> str:
        """Monte Carlo estimate and its error terms."""
        return (
            "## Monte Carlo\n\n"
            f"- estimate: {fmt_float(mc.estimate)}\n"
            f"- standard error: {fmt_float(mc.std_error)}\n"
            f"- truncation: {fmt_float(mc.truncation)}\n"
            f"- paths x steps: {mc.paths} x {mc.steps}"
        )

    def _generate_verdict(self, verdict: Dict) -> str:
        """Sandwich verdict."""
        status = "PASS" if verdict.get('passed') else "FAIL"
        return (
            f"## Verdict: {status}\n\n"
            f"- sandwich holds: {verdict.get('sandwich')}\n"
            f"- non-trivial: {verdict.get('non_trivial')}\n"
            f"- margin: {fmt_float(verdict.get('margin', 0.0))}"
        )

    def generate_report(self, command: str, output_path: str, system: PETCSystem,
                        validation: Optional[ValidationReport] = None,
                        imc: Optional[IntervalMarkovChain] = None,
                        value_bounds: Optional[ValueBounds] = None,
                        mc: Optional[MCResult] = None,
                        verdict: Optional[Dict] = None):
        """Write the markdown report of one subcommand to `path`."""
        sections = [self._generate_header(command), self._generate_system_section(system, validation)]
        if imc is not None:
            sections.append(self._generate_imc_section(imc))
            if value_bounds is not None:
                sections.append(self._generate_bounds_section(imc, value_bounds))
        if mc is not None:
            sections.append(self._generate_simulation_section(mc))
        if verdict is not None:
            sections.append(self._generate_verdict(verdict))

        with open(output_path, 'w', encoding='utf-8') as f:
            f.write("\n\n".join(sections) + "\n")
        logger.info(f"Report written to {output_path}")
