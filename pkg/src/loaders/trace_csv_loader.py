import logging
import os
from typing import Dict, List, Mapping, Optional

import pandas as pd
from dotenv import load_dotenv

from src.simulation.compress import Certificate
from src.simulation.theory import ConstantLedger

load_dotenv()

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
DEFAULT_OUTPUT_DIR = 'results'


class TraceCsvLoader:
    """Write run artifacts (traces, aggregate, header, certificates, ledgers, attacks) as UTF-8 CSV"""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or os.getenv('RCPSGD_OUTPUT_DIR') or DEFAULT_OUTPUT_DIR

    def _path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def _write(self, frame: pd.DataFrame, name: str, skip_if_exists: bool = False) -> Optional[str]:
        path = self._path(name)
        if skip_if_exists and os.path.exists(path):
            logger.info(f"⏭️  {path} already exists - skipping")
            return None
        os.makedirs(self.output_dir, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='', encoding='utf-8')
        logger.debug(f"Wrote {len(frame)} rows to {path}")
        return path

    def trace_name(self, seed: int) -> str:
        return f"trace_seed{seed}.csv"

    def load_trace(self, frame: pd.DataFrame, seed: int, skip_if_exists: bool = False) -> Optional[str]:
        return self._write(frame, self.trace_name(seed), skip_if_exists)

    def load_traces_batch(self, frames: Mapping[int, pd.DataFrame], skip_if_exists: bool = False) -> Dict:
        """Write one trace file per seed"""
        logger.info(f"📊 Writing {len(frames)} trace files to {self.output_dir}...")
        successful = failed = skipped = 0
        for seed, frame in frames.items():
            try:
                if self.load_trace(frame, seed, skip_if_exists) is None:
                    skipped += 1
                else:
                    successful += 1
            except OSError as e:
                failed += 1
                logger.error(f"❌ Could not write trace for seed {seed}: {e}")

        results = {'successful': successful, 'failed': failed, 'skipped': skipped, 'total': len(frames)}
        logger.info(f"✅ Traces written: {successful}, skipped: {skipped}, failed: {failed}")
        return results

    def load_aggregate(self, frame: pd.DataFrame) -> str:
        return self._write(frame, 'aggregate.csv')

    def load_header(self, entries: Mapping[str, object]) -> str:
        """Resolved parameters, ledger rows and provenance as (key, value) rows"""
        rows = [(key, '' if value is None else value) for key, value in entries.items()]
        return self._write(pd.DataFrame(rows, columns=['key', 'value']), 'header.csv')

    def load_certificates(self, certificates: List[Certificate], name: str = 'certificate.csv') -> str:
        return self._write(pd.DataFrame([cert.to_row() for cert in certificates]), name)

    def load_ledger(self, ledger: ConstantLedger) -> str:
        return self._write(ledger.report(), f"ledger_{ledger.theorem}.csv")

    def load_attack(self, frames: Mapping[str, pd.DataFrame]) -> Dict[str, str]:
        return {key: self._write(frame, f"attack_{key}.csv") for key, frame in frames.items()}

    def test_connection(self) -> bool:
        """Check the output directory can be created and written"""
        try:
            os.makedirs(self.output_dir, exist_ok=True)
            scratch = self._path('.write_check')
            with open(scratch, 'w', encoding='utf-8') as handle:
                handle.write('ok')
            os.remove(scratch)
            return True
        except OSError as e:
            logger.error(f"❌ Output directory {self.output_dir} not writable: {e}")
            return False
