"""
Estimating usage time
=====================

The full regression experiment on a synthetic fleet. Devices are split
into training and test sets as whole units, spectral bins are chosen
from the training devices alone, each learner is tuned by random search
with device-level cross-validation, and the winners are scored on the
unseen test devices. The same runs without spectral features show how
much the spectrum adds.

The search budget is small here so the script finishes in well under a
minute. Raise ``num_candidates`` for a more thorough search.
"""
import sys
from pathlib import Path

from sramage.agesim import STRONG_DRIFT, generate_fleet
from sramage.pipeline import ExperimentConfig, SearchConfig, run_regression_experiment

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

fleet = generate_fleet(40, ("uniform", 2, 18), profile_prior=STRONG_DRIFT, seed=0, num_samples=200,
                       sram_bytes=2048)

config = ExperimentConfig(seed=0, group_size=2, block_bytes=64, learners=("knn", "svm", "dt"),
                          search=SearchConfig(num_candidates=10))
report = run_regression_experiment(fleet.devices, config)
print(report.table())

(out / "regression_report.json").write_text(report.to_json())
print("full report in", out / "regression_report.json")
