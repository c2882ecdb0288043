"""
Experiment orchestration: config -> graph, problem, schedule -> per-seed runs
-> traces, aggregate and header artifacts.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import pandas as pd
from dotenv import load_dotenv

import src
from src.extractors.dataset_extractor import Dataset, load_csv_dataset, make_logistic_dataset, partition
from src.harness.config import RunConfig
from src.loaders.trace_csv_loader import DEFAULT_OUTPUT_DIR, TraceCsvLoader
from src.simulation.algorithms import RunSetup, Schedule, Trace, make_schedule, run
from src.simulation.attack import attack_campaign, wire_attack
from src.simulation.compress import Certificate, CompressorSpec, certify, privacy_delta, wrap_certificate
from src.simulation.metrics import aggregate_frames
from src.simulation.problems import LogisticNonconvexProblem, OptimumCache, Problem, make_pl_quadratic
from src.simulation.randomness import RandomStreams
from src.simulation.theory import (DEFAULT_BETA5, DEFAULT_C_TILDE, ConstantLedger, ProblemConstants,
                                   ledger_theorem1, ledger_theorem2, ledger_theorem3)
from src.simulation.topology import Graph, SpectralBounds, build_graph, spectral_bounds
from src.utils.error_handler import ConfigError, LabError

load_dotenv()

logger = logging.getLogger(__name__)

# certification sizes used for header ledgers; the `certify` command takes its own
LEDGER_CERT_SAMPLES = 200
LEDGER_CERT_TRIALS = 100
LEDGER_CERT_RADIUS = 10.0
NOISE_INTERPRETATION = 'noise_std is a standard deviation; 0.07071 is the variance-0.005 reading'


@dataclass
class Experiment:
    """Everything a seed run needs, built once per config"""
    setup: RunSetup
    dataset: Optional[Dataset]
    bounds: SpectralBounds
    ledger: Optional[ConstantLedger] = None
    certificate: Optional[Certificate] = None


def _run_seed(args: Tuple[RunSetup, int]) -> Trace:
    setup, seed = args
    return run(setup, seed)


class ExperimentRunner:
    """Build experiments from RunConfigs, run every seed and write the artifacts"""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or os.getenv('RCPSGD_OUTPUT_DIR')

    def build_graph(self, config: RunConfig) -> Graph:
        edges = config.graph.get('edges')
        return build_graph(config.graph['kind'], config.n, rows=config.graph.get('rows'),
                           cols=config.graph.get('cols'), path=edges)

    def build_dataset(self, config: RunConfig) -> Dataset:
        csv_path = config.problem.get('csv') or os.getenv('RCPSGD_DATASET')
        if csv_path:
            label = config.problem.get('label_column') or '-1'
            return load_csv_dataset(csv_path, label, normalize=True, header=config.problem['header'])
        logger.warning("⚠️ No dataset configured, using the synthetic logistic stand-in")
        return make_logistic_dataset(config.problem['samples'], config.d or 9, config.problem['seed'])

    def optimum_dir(self, config: RunConfig) -> str:
        return config.output or self.output_dir or DEFAULT_OUTPUT_DIR

    def build_problem(self, config: RunConfig, with_optimum: bool = True) -> Tuple[Problem, Optional[Dataset]]:
        p = config.problem
        if p['kind'] == 'pl_quadratic':
            problem = make_pl_quadratic(config.n, config.d or 10, rank_deficit=p['rank_deficit'],
                                        condition=p['condition'], seed=p['seed'], noise_std=p['noise_std'],
                                        heterogeneity=p['heterogeneity'])
            return problem, None

        dataset = self.build_dataset(config)
        shards = partition(dataset, config.n, p['partition'], seed=p['seed'])
        problem = LogisticNonconvexProblem(shards, lam=p['lam'], alpha=p['alpha'])
        if p['fstar'] and with_optimum:
            if dataset.source.endswith('.csv') and os.path.exists(dataset.source):
                cache = OptimumCache(dataset.source)
            else:
                cache = OptimumCache.in_directory(self.optimum_dir(config), problem)
            problem.f_star = cache.resolve(problem, p['fstar_steps'])
        return problem, dataset

    def compressor_spec(self, config: RunConfig) -> CompressorSpec:
        c = config.compressor
        return CompressorSpec(kind=c['kind'], bits=c['bits'], privacy_q=c['privacy_q'], scale_r=c['scale_r'])

    def problem_constants(self, config: RunConfig, problem: Problem, bounds: SpectralBounds,
                          compressor: CompressorSpec, alpha_x: float, seed: int) -> Tuple[ProblemConstants, Certificate]:
        base = CompressorSpec(compressor.kind, compressor.bits, 0.0, compressor.scale_r)
        cert = certify(base, domain_radius=LEDGER_CERT_RADIUS, samples=LEDGER_CERT_SAMPLES,
                       trials_per_sample=LEDGER_CERT_TRIALS, rng=RandomStreams(seed).stream('certify'),
                       dim=problem.dim)
        if compressor.privacy_q > 0:
            cert = wrap_certificate(cert, min(compressor.privacy_q, 1 - 1e-12))
        nu = getattr(problem, 'nu', None)
        if config.schedule.get('nu') is not None:
            nu = config.schedule['nu']
        pc = ProblemConstants.from_certificate(problem.smoothness, bounds, cert, alpha_x, nu=nu, n=config.n)
        return pc, cert

    def build_ledger(self, schedule: Schedule, pc: ProblemConstants) -> Optional[ConstantLedger]:
        p = schedule.params
        if schedule.regime in ('theorem1', 'theorem1_speedup'):
            return ledger_theorem1(pc, p['beta1'], p['beta2'], p['omega'], beta5=DEFAULT_BETA5)
        if schedule.regime == 'theorem2':
            return ledger_theorem2(pc, p['beta1'], p['beta2'], p['theta'], int(p['T']), DEFAULT_BETA5)
        if schedule.regime == 'theorem3':
            return ledger_theorem3(pc, p['beta0'], p['beta1'], p['beta2'], p['t1'], p['c_tilde'], p['h0'])
        return None

    def prepare(self, config: RunConfig, with_optimum: bool = True) -> Experiment:
        """Build graph, problem, compressor and schedule; the ledger is attached for theorem regimes"""
        graph = self.build_graph(config)
        bounds = spectral_bounds(graph)
        problem, dataset = self.build_problem(config, with_optimum)
        compressor = self.compressor_spec(config)

        schedule, ledger, cert = None, None, None
        if config.algorithm == 'rcp_sgd':
            regime = config.schedule['regime']
            params = config.schedule_params()
            params.setdefault('T', config.T)
            params.setdefault('n', config.n)
            nu = getattr(problem, 'nu', None)
            if regime == 'theorem3' and 'nu' not in params and nu is not None:
                params['nu'] = nu
            schedule = make_schedule(regime, params)
            if regime.startswith('theorem'):
                pc, cert = self.problem_constants(config, problem, bounds, compressor, schedule.alpha_x,
                                                  config.seeds[0])
                ledger = self.build_ledger(schedule, pc)
                status = 'feasible' if ledger.feasible else f"infeasible ({', '.join(ledger.violated)})"
                logger.info(f"🔍 {ledger.theorem} ledger: {status}")

        setup = RunSetup(
            algorithm=config.algorithm, graph=graph, problem=problem, T=config.T, schedule=schedule,
            compressor=compressor, batch=config.problem['batch'],
            eta=config.dsgd['eta'] if config.algorithm == 'dsgd' else config.choco['eta'],
            gamma_consensus=config.choco['gamma'], metrics_every=config.metrics_every,
            init_scale=config.init_scale, replica_check=config.replica_check, cost_mode=config.cost_mode,
            timing=config.timing,
        )
        return Experiment(setup, dataset, bounds, ledger, cert)

    def header(self, config: RunConfig, experiment: Experiment, traces: List[Trace]) -> Dict[str, object]:
        """Resolved parameters, filled-in defaults, ledger rows and provenance"""
        setup = experiment.setup
        entries: Dict[str, object] = {'software.version': src.__version__}
        if config.preset:
            entries['preset'] = config.preset
        entries.update(config.flat())
        entries['seeds'] = ','.join(str(seed) for seed in config.seeds)
        for key, value in setup.graph.describe().items():
            entries[f'graph.resolved.{key}'] = value
        entries['graph.lambda_min_pos'] = experiment.bounds.lambda_min_pos
        entries['graph.lambda_max'] = experiment.bounds.lambda_max
        for key, value in setup.problem.describe().items():
            entries[f'problem.resolved.{key}'] = value
        entries['problem.f_star'] = setup.problem.f_star
        if experiment.dataset is not None:
            entries['dataset.source'] = experiment.dataset.source
            entries['dataset.sha256'] = experiment.dataset.digest()
            entries['dataset.encoding'] = experiment.dataset.encoding
        if setup.schedule is not None:
            entries.update(setup.schedule.describe())
            entries['schedule.unmapped'] = 'comparison-table column m_k (1/k) has no defined role; not used'
        entries['compressor.label'] = setup.compressor.label
        delta = privacy_delta(setup.compressor)
        if delta is not None:
            entries['privacy.delta'] = delta
        entries['theory.beta5'] = DEFAULT_BETA5
        entries['theory.c_tilde'] = (setup.schedule.params.get('c_tilde', DEFAULT_C_TILDE)
                                     if setup.schedule is not None else DEFAULT_C_TILDE)
        entries['noise.interpretation'] = NOISE_INTERPRETATION
        if experiment.certificate is not None:
            for key, value in experiment.certificate.to_row().items():
                entries[f'certificate.{key}'] = value
        if experiment.ledger is not None:
            entries['ledger.theorem'] = experiment.ledger.theorem
            entries['ledger.feasible'] = experiment.ledger.feasible
            entries['ledger.violated'] = ';'.join(experiment.ledger.violated)
            for symbol, value in experiment.ledger.values.items():
                entries[f'ledger.{symbol}'] = value
        diverged = [trace for trace in traces if trace.diverged]
        entries['seeds.diverged'] = ','.join(f"{t.seed}@{t.divergence_step}" for t in diverged)
        return entries

    def run_seeds(self, setup: RunSetup, seeds: List[int], workers: int) -> Tuple[List[Trace], List[int]]:
        traces, failed = [], []
        if workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
                futures = {seed: pool.submit(_run_seed, (setup, seed)) for seed in seeds}
                for seed, future in futures.items():
                    try:
                        traces.append(future.result())
                    except LabError as e:
                        failed.append(seed)
                        logger.error(f"❌ Seed {seed} failed: {e}")
            return traces, failed

        for seed in seeds:
            try:
                traces.append(run(setup, seed))
            except LabError as e:
                failed.append(seed)
                logger.error(f"❌ Seed {seed} failed: {e}")
        return traces, failed

    def execute(self, config: RunConfig, write: bool = True) -> Dict:
        """Run every seed, aggregate, and write traces + aggregate + header"""
        logger.info(f"🚀 Running {config.algorithm} ({config.preset or 'custom'}): "
                    f"n={config.n}, T={config.T}, seeds={config.seeds}")
        experiment = self.prepare(config)
        traces, failed = self.run_seeds(experiment.setup, config.seeds, config.workers)

        frames = {trace.seed: trace.to_frame() for trace in traces}
        aggregate = aggregate_frames(list(frames.values())) if frames else pd.DataFrame()
        header = self.header(config, experiment, traces)
        diverged = sum(1 for trace in traces if trace.diverged)

        results = {
            'successful': len(traces) - diverged,
            'failed': len(failed),
            'diverged': diverged,
            'total': len(config.seeds),
            'traces': frames,
            'aggregate': aggregate,
            'header': header,
            'ledger': experiment.ledger,
        }

        if write:
            loader = TraceCsvLoader(config.output or self.output_dir)
            loader.load_traces_batch(frames)
            if frames:
                loader.load_aggregate(aggregate)
            loader.load_header(header)
            if experiment.ledger is not None:
                loader.load_ledger(experiment.ledger)
            results['output_dir'] = loader.output_dir

        logger.info(f"📊 Seeds: {results['successful']} ok, {diverged} diverged, {len(failed)} failed "
                    f"of {results['total']}")
        return results

    def execute_attack(self, config: RunConfig, write: bool = True) -> Dict:
        """
        Gradient-inversion attack on the configured logistic problem.

        attack.mode=gradient attacks sampled (x, sample) instances, uncompressed and
        through the compressor; attack.mode=wire attacks one agent during a live run.
        """
        if config.problem['kind'] != 'logistic':
            raise ConfigError('problem.kind', "the attack targets the logistic problem")
        compressor = self.compressor_spec(config)
        a = config.attack

        if a['mode'] == 'wire':
            if config.problem['batch'] != 1:
                raise ConfigError('problem.batch', "the wire attack needs single-sample minibatches (batch=1)")
            experiment = self.prepare(config, with_optimum=False)
            dataset = experiment.dataset
            frames = {'steps': wire_attack(experiment.setup, config.seeds[0], agent=a['agent'],
                                           noise_std=a['noise_std'], iters=a['iters'], step=a['step'],
                                           every=a['every'])}
        else:
            problem, dataset = self.build_problem(config, with_optimum=False)
            logger.info(f"🚀 Attack campaign: {a['instances']} instances on agent {a['agent']}, "
                        f"compressor {compressor.label}")
            frames = attack_campaign(problem, a['instances'], config.seeds[0], agent=a['agent'],
                                     noise_std=a['noise_std'], compressor=compressor, iters=a['iters'],
                                     step=a['step'], x_radius=a['x_radius'])
        results = dict(frames)
        if write:
            loader = TraceCsvLoader(config.output or self.output_dir)
            loader.load_attack(frames)
            header = {'software.version': src.__version__, **config.flat(),
                      'seeds': ','.join(str(seed) for seed in config.seeds),
                      'attack.optimizer': 'gradient descent, backtracking halving, init 0.1*N(0, I)',
                      'noise.interpretation': NOISE_INTERPRETATION,
                      'compressor.label': compressor.label}
            if dataset is not None:
                header['dataset.sha256'] = dataset.digest()
            delta = privacy_delta(compressor)
            if delta is not None:
                header['privacy.delta'] = delta
            loader.load_header(header)
            results['output_dir'] = loader.output_dir
        return results
