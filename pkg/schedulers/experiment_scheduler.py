#!/usr/bin/env python3
"""
Experiment Scheduler - command-line entry point for the simulation lab

    run <config> [--seed-list 0,1,2] [--out dir] [--preset name]
    certify <compressor> [--bits b] [--q q] [--r r] [--radius R] [--samples N] [--trials M]
    ledger <regime> [--config cfg | constants...] [--suggest]
    attack <config> [--out dir] [--preset name]
    test
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

from dotenv import load_dotenv

load_dotenv()

# Add project root to path
current_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(current_dir)

from src.harness.config import parse_config
from src.harness.presets import PRESETS
from src.harness.runner import ExperimentRunner
from src.loaders.trace_csv_loader import TraceCsvLoader
from src.simulation.algorithms import REGIMES, THEOREM_ALPHA_X, make_schedule
from src.simulation.compress import KINDS, CompressorSpec, certify, privacy_delta, wrap_certificate
from src.simulation.randomness import RandomStreams
from src.simulation.theory import (DEFAULT_BETA5, DEFAULT_C_TILDE, ProblemConstants, ledger_theorem1,
                                   ledger_theorem2, ledger_theorem3, suggest_params)
from src.simulation.topology import spectral_bounds
from src.utils.error_handler import InputError, LabError
from src.utils.logger import setup_logging

logger = logging.getLogger(__name__)

LEDGER_PARAMS = {
    'theorem1': ('beta1', 'beta2', 'omega'),
    'theorem1_speedup': ('beta1', 'beta2', 'T', 'n'),
    'theorem2': ('beta1', 'beta2', 'theta', 'T'),
    'theorem3': ('beta0', 'beta1', 'beta2', 't1'),
}


class ExperimentScheduler:
    """Dispatches CLI subcommands to the runner, certifier and ledgers"""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or os.getenv('RCPSGD_OUTPUT_DIR') or 'results'
        self.runner = ExperimentRunner(self.output_dir)

    def _load(self, source: str, preset: Optional[str], seed_list: Optional[str], out: Optional[str]):
        config = parse_config(source, preset=preset)
        if seed_list:
            config.seeds = [int(part) for part in seed_list.split(',') if part.strip()]
        if out:
            config.output = out
        elif config.output is None:
            config.output = self.output_dir
        return config

    def run_experiment(self, source: str, preset: Optional[str] = None, seed_list: Optional[str] = None,
                       out: Optional[str] = None) -> bool:
        config = self._load(source, preset, seed_list, out)
        results = self.runner.execute(config)
        logger.info(f"✅ Artifacts in {results['output_dir']}")
        return results['successful'] + results['diverged'] > 0

    def certify_compressor(self, kind: str, bits: int = 2, q: float = 0.0, r: float = 1.0, radius: float = 10.0,
                           samples: int = 1000, trials: int = 200, dim: int = 9, seed: int = 0,
                           out: Optional[str] = None) -> bool:
        spec = CompressorSpec(kind=kind, bits=bits, privacy_q=0.0, scale_r=r)
        logger.info(f"🔍 Certifying {spec.label} on the radius-{radius:g} ball ({samples} × {trials} draws)")
        cert = certify(spec, r=r, domain_radius=radius, samples=samples, trials_per_sample=trials,
                       rng=RandomStreams(seed).stream('certify'), dim=dim)
        certificates = [cert]
        logger.info(f"✅ {cert.kind}: phi={cert.phi:g}, sigma_c={cert.sigma_c:.6g}, "
                    f"violation_rate={cert.violation_rate:.3%}")
        if q > 0:
            wrapped = wrap_certificate(cert, q)
            certificates.append(wrapped)
            delta = privacy_delta(CompressorSpec(kind=kind, bits=bits, privacy_q=q, scale_r=r))
            logger.info(f"✅ {wrapped.kind}: phi={wrapped.phi:g}, sigma_c={wrapped.sigma_c:.6g}, delta={delta:g}")
        TraceCsvLoader(out or self.output_dir).load_certificates(certificates)
        return True

    def ledger_report(self, regime: str, args: argparse.Namespace) -> bool:
        if args.config:
            config = parse_config(args.config, preset=args.preset)
            graph = self.runner.build_graph(config)
            problem, _ = self.runner.build_problem(config, with_optimum=False)
            compressor = self.runner.compressor_spec(config)
            alpha_x = config.schedule.get('alpha_x') or THEOREM_ALPHA_X
            pc, _ = self.runner.problem_constants(config, problem, spectral_bounds(graph), compressor,
                                                  alpha_x, config.seeds[0])
            params = config.schedule_params()
            params.setdefault('T', config.T)
            params.setdefault('n', config.n)
        else:
            pc = ProblemConstants(L_f=args.L_f, lambda_min_pos=args.lambda_min, lambda_max=args.lambda_max,
                                  phi1=args.phi1, r0=args.r0, sigma_sq=args.sigma_sq, nu=args.nu, r=args.r,
                                  alpha_x=args.alpha_x, n=args.n)
            params = {key: getattr(args, key) for key in ('beta0', 'beta1', 'beta2', 'omega', 'theta', 't1',
                                                          'c_tilde', 'h0', 'T', 'n')}
            params = {key: value for key, value in params.items() if value is not None}

        if args.suggest:
            suggested = suggest_params(pc, regime, n=int(params.get('n', 1)), T=int(params.get('T', 1000)))
            params.update(suggested)

        needed = LEDGER_PARAMS[regime]
        missing = [name for name in needed if name not in params]
        if missing:
            raise InputError(f"{regime} ledger needs --{', --'.join(missing)} (or --suggest)")

        if regime in ('theorem1', 'theorem1_speedup'):
            if regime == 'theorem1_speedup':
                params['omega'] = make_schedule(regime, params, pc).params['omega']
            ledger = ledger_theorem1(pc, params['beta1'], params['beta2'], params['omega'],
                                     beta5=params.get('beta5', DEFAULT_BETA5))
        elif regime == 'theorem2':
            ledger = ledger_theorem2(pc, params['beta1'], params['beta2'], params['theta'], int(params['T']),
                                     params.get('beta5', DEFAULT_BETA5))
        else:
            ledger = ledger_theorem3(pc, params['beta0'], params['beta1'], params['beta2'], params['t1'],
                                     params.get('c_tilde', DEFAULT_C_TILDE), params.get('h0'))

        path = TraceCsvLoader(args.out or self.output_dir).load_ledger(ledger)
        if ledger.feasible:
            logger.info(f"✅ {ledger.theorem} ledger feasible ({path})")
        else:
            logger.warning(f"⚠️ {ledger.theorem} ledger infeasible: {', '.join(ledger.violated)} ({path})")
        return ledger.feasible

    def run_attack(self, source: str, preset: Optional[str] = None, out: Optional[str] = None) -> bool:
        config = self._load(source, preset, None, out)
        results = self.runner.execute_attack(config)
        logger.info(f"✅ Attack artifacts in {results['output_dir']}")
        return True

    def test_system(self) -> bool:
        """Quick self-check: output dir, graph spectrum, compressor, one short run"""
        logger.info("🔍 Testing simulation lab...")
        checks: Dict[str, bool] = {}

        checks['output_dir'] = TraceCsvLoader(self.output_dir).test_connection()
        try:
            config = parse_config('T=20\nmetrics_every=5\nproblem.fstar=false\nproblem.samples=60',
                                  preset='rcp-sgd-2')
            experiment = self.runner.prepare(config)
            ring = experiment.bounds
            checks['spectrum'] = abs(ring.lambda_max - 4.0) < 1e-9
            cert = certify(CompressorSpec('identity'), samples=100, trials_per_sample=2,
                           rng=RandomStreams(0).stream('certify'))
            checks['certify'] = cert.phi == 1.0 and cert.sigma_c == 0.0
            results = self.runner.execute(config, write=False)
            checks['run'] = results['successful'] == 1
        except LabError as e:
            logger.error(f"❌ Self-check failed: {e}")
            checks.setdefault('run', False)

        for name, ok in checks.items():
            logger.info(f"   {'✅' if ok else '❌'} {name}")
        return all(checks.values())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Compressed private decentralized SGD lab')
    sub = parser.add_subparsers(dest='command', required=True)

    run_p = sub.add_parser('run', help='run a config or preset over its seeds')
    run_p.add_argument('config', help='config file, inline text, or preset name')
    run_p.add_argument('--seed-list', default=None, help='comma-separated seeds overriding the config')
    run_p.add_argument('--out', default=None)
    run_p.add_argument('--preset', default=None, choices=sorted(PRESETS))

    cert_p = sub.add_parser('certify', help='Monte-Carlo certificate (r, phi, sigma_c) for a compressor')
    cert_p.add_argument('compressor', choices=KINDS)
    cert_p.add_argument('--bits', type=int, default=2)
    cert_p.add_argument('--q', type=float, default=0.0)
    cert_p.add_argument('--r', type=float, default=1.0)
    cert_p.add_argument('--radius', type=float, default=10.0)
    cert_p.add_argument('--samples', type=int, default=1000)
    cert_p.add_argument('--trials', type=int, default=200)
    cert_p.add_argument('--dim', type=int, default=9)
    cert_p.add_argument('--seed', type=int, default=0)
    cert_p.add_argument('--out', default=None)

    led_p = sub.add_parser('ledger', help='evaluate the constant ledger of a theorem regime')
    led_p.add_argument('regime', choices=[regime for regime in REGIMES if regime.startswith('theorem')])
    led_p.add_argument('--config', default=None, help='derive constants from a run config')
    led_p.add_argument('--preset', default=None, choices=sorted(PRESETS))
    led_p.add_argument('--suggest', action='store_true', help='search for feasible parameters first')
    led_p.add_argument('--out', default=None)
    for name in ('L_f', 'lambda_min', 'lambda_max'):
        led_p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, default=1.0)
    led_p.add_argument('--phi1', type=float, default=1.0)
    led_p.add_argument('--r0', type=float, default=0.0)
    led_p.add_argument('--r', type=float, default=1.0)
    led_p.add_argument('--sigma-sq', dest='sigma_sq', type=float, default=0.0)
    led_p.add_argument('--nu', type=float, default=None)
    led_p.add_argument('--n', type=int, default=1)
    led_p.add_argument('--T', type=int, default=1000)
    for name in ('beta0', 'beta1', 'beta2', 'omega', 'theta', 't1', 'h0'):
        led_p.add_argument(f'--{name}', type=float, default=None)
    led_p.add_argument('--alpha-x', dest='alpha_x', type=float, default=None)
    led_p.add_argument('--c-tilde', dest='c_tilde', type=float, default=None)

    atk_p = sub.add_parser('attack', help='gradient-inversion attack (attack.mode=gradient campaign or wire eavesdropper)')
    atk_p.add_argument('config', help='config file, inline text, or preset name')
    atk_p.add_argument('--out', default=None)
    atk_p.add_argument('--preset', default=None, choices=sorted(PRESETS))

    sub.add_parser('test', help='quick self-check')
    return parser


def main(argv: Optional[List[str]] = None):
    """Main scheduler function"""
    setup_logging()
    args = build_parser().parse_args(argv)
    logger.info(f"🚀 Starting experiment scheduler: {args.command}")
    scheduler = ExperimentScheduler()

    try:
        if args.command == 'run':
            success = scheduler.run_experiment(args.config, args.preset, args.seed_list, args.out)
        elif args.command == 'certify':
            success = scheduler.certify_compressor(args.compressor, args.bits, args.q, args.r, args.radius,
                                                   args.samples, args.trials, args.dim, args.seed, args.out)
        elif args.command == 'ledger':
            success = scheduler.ledger_report(args.regime, args)
        elif args.command == 'attack':
            success = scheduler.run_attack(args.config, args.preset, args.out)
        else:
            success = scheduler.test_system()
    except LabError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        sys.exit(1)
    except Exception as e:
        logger.error(f"💥 Unexpected error: {e}")
        logger.exception("Full error traceback:")
        sys.exit(1)

    if success:
        logger.info(f"🎉 {args.command} completed successfully")
        sys.exit(0)
    logger.error(f"💥 {args.command} failed")
    sys.exit(1)


if __name__ == "__main__":
    main()
