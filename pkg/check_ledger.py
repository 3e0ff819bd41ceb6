"""
Print the runs and stage executions recorded in a run directory's ledger
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from quadlayout.core.config import settings
from quadlayout.core.database import get_db
from quadlayout.services.ledger_service import LedgerService


def check_ledger(out_dir: str):
    db_gen = get_db(out_dir)
    db = next(db_gen)
    try:
        ledger = LedgerService(db)
        runs = ledger.get_runs(limit=20)
        if not runs:
            print(f"No runs recorded in {out_dir}")
            return
        for run in runs:
            print(f"\n=== run {run.id} ({run.status}) {run.input_path} started {run.created_at} ===")
            if run.error_message:
                print(f"  error: {run.error_message}")
            for stage in sorted(run.stages, key=lambda s: s.id):
                print(f"  {stage.stage:9s} {stage.status:9s} {stage.duration_seconds:9.3f}s  "
                      f"input {stage.input_hash[:12]}")
        print("\nExecutions per stage:")
        for stage, counts in ledger.stage_counts().items():
            print(f"  {stage:9s} {counts}")
    finally:
        db_gen.close()


if __name__ == "__main__":
    check_ledger(sys.argv[1] if len(sys.argv) > 1 else settings.output_dir)
