"""Run the bundled experiment configs through the CLI and print their tables.

    python scripts/reproduce_trends.py                 # every config except smoke
    python scripts/reproduce_trends.py smoke baselines # chosen configs only

Completed cells are skipped on re-runs, so an interrupted sweep picks up where it stopped.
"""

import sys
from pathlib import Path

from pumacgl.cli import main

HERE = Path(__file__).parent / "configs"
ORDER = ("baselines", "ablation_grid", "pseudo_labels", "budget_sweep", "default")


def run(name):
    cfg = HERE / f"{name}.json"
    print(f"== {name}", flush=True)
    code = main(["run", "--config", str(cfg)])
    if code:
        sys.exit(code)


if __name__ == "__main__":
    names = sys.argv[1:] or ORDER
    for n in names:
        run(n)
