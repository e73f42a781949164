"""
Usage classes at several resolutions
====================================

Instead of a number of months, ask which usage bracket a device falls
in. Coarse brackets are easy and fine ones are hard; the majority-class
predictor gives the floor every learner has to beat.
"""
import sys
from pathlib import Path

from sramage.agesim import STRONG_DRIFT, generate_fleet
from sramage.pipeline import ExperimentConfig, SearchConfig, run_classification_experiment

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

fleet = generate_fleet(40, ("uniform", 2, 18), profile_prior=STRONG_DRIFT, seed=0, num_samples=200,
                       sram_bytes=2048)
config = ExperimentConfig(seed=0, group_size=2, block_bytes=64, learners=("knn", "dt"),
                          search=SearchConfig(num_candidates=10))
report = run_classification_experiment(fleet.devices, config, resolutions=(1, 3, 6, 9))
print(report.table())

for res in (1, 3, 6, 9):
    knn = report.result("knn", resolution=res)["test"]["f1_macro"]
    base = report.baseline(res)["test"]["f1_macro"]
    print(f"{res} month brackets: KNN {knn:.3f} against majority {base:.3f}")
(out / "classification_report.json").write_text(report.to_json())
