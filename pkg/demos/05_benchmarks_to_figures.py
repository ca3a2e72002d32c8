"""The benchmark harness end to end: runs, summaries, CSVs, figures.

Every repetition derives its own seed, so a run is a pure function of
(problem, method, m, repetitions, seed); the raw CSV is byte-reproducible.
The plots package (vvcv-plots) consumes these CSVs without touching any
library internals.
"""

import pathlib
import subprocess
import sys

import numpy as np

from vvcv.benchmarks import (problem_step, run_method, summarize, write_raw_csv,
                             write_summary_csv, write_trace_csv)

out = pathlib.Path("demo_output")
out.mkdir(exist_ok=True)

problem = problem_step()
records = []
for method in ("MC", "vvCV-fixedB", "vvCV-estB"):
    records += run_method(problem, method, m=(40, 40), reps=10, seed=42,
                          overrides={"optim": {"epochs": 120}}, trace=True)

print(f"{'method':12} {'task':>4} {'mean abs err':>13} {'sd':>9}")
for row in summarize(records):
    sd = f"{row['sd']:.5f}" if row["sd"] is not None else "--"
    print(f"{row['method']:12} {row['task']:>4} {row['mean_abs_err']:>13.5f} {sd:>9}")

write_raw_csv(records, out / "step_raw.csv")
write_summary_csv(summarize(records), out / "step_summary.csv")
write_trace_csv(records, out / "step_trace.csv")
print(f"\nwrote {out}/step_raw.csv, step_summary.csv, step_trace.csv")

# The same run is available from the shell:
#   vvcv bench step --m 40,40 --reps 10 --seed 42 --methods mc,vvcv-estb --trace
# and the figure scripts read only the CSVs:
cmd = [sys.executable, "-m", "vvcv_plots.cli",
       str(out / "step_trace.csv"), str(out / "step_summary.csv"),
       "--kind", "convergence", "--out", str(out / "step_convergence.png")]
done = subprocess.run(cmd, capture_output=True, text=True)
print(done.stdout.strip() if done.returncode == 0
      else f"(install vvcv-plots to draw figures: {done.stderr.strip()})")
