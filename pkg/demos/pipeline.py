"""Generate a small duct dataset, fit pressure, filter the frontier, report.

Runs the same four steps as the command line tool, in-process, on a coarse
grid. Takes a minute or two.

    python demos/pipeline.py [output-dir]
"""
import json
import sys
from pathlib import Path

from ductsr import cli

out = Path(sys.argv[1] if len(sys.argv) > 1 else "pipeline_out")
grid = ["--ny", "21", "--nz", "21", "--nx", "6"]

cli.main(["generate", "--out", str(out), *grid])
cli.main(["fit", "--target", "p", "--data", str(out), "--out", str(out),
          "--seed", "1", "--iterations", "30"])

# keep short equations that depend on Re
code = cli.main(["filter", "--facts", str(out / "frontier_p.facts"), "--max-complexity", "9",
                 "--require", "re", "--out", str(out)])
if code == 0:
    chosen = json.loads((out / "selection.json").read_text())["selected"]
    best = min(chosen, key=lambda s: s["loss"])
    cli.main(["report", "--frontier", str(out / "frontier_p.json"), "--id", str(best["id"]),
              "--data", str(out), "--out", str(out)])
