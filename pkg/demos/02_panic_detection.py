"""Train on calm walking, then watch a crowd break into panic.

Simulates the panic preset, trains a dictionary group on the first 500
frames, scores the next 500 (panic starts at frame 750) and prints the
frame-level ROC summary plus a coarse timeline of clip scores.
"""

import time
import warnings

from crowdflux import Config, run_detect, run_train
from crowdflux.errors import CoverageWarning
from crowdflux.evaluation import evaluate
from crowdflux.synth import ScenarioConfig, iter_flows, simulate_scenario

t0 = time.perf_counter()
scenario = simulate_scenario(ScenarioConfig(preset="panic", frames=1001, t_anomaly=750, seed=1))
config = Config.for_profile("umn")

with warnings.catch_warnings():
    warnings.simplefilter("ignore", CoverageWarning)
    group = run_train(iter_flows(scenario, 0, 500), config)
print(f"trained {group.s} dictionaries on {500 // config.T} clips")

result = run_detect(iter_flows(scenario, 500, 1000), group, config, start=500)
truth = {f: scenario.truth_mask(f) for f in range(500, 1000)}
report = evaluate(result.records, truth, result.grid, config.T)
print(report.summary(), end="")

print("\nclip   max error   abnormal cells")
for v in result.verdicts[::config.T]:
    bar = "#" * min(40, int(v.score * 10))
    marker = "  <- panic" if scenario.is_abnormal(v.frame) else ""
    print(f"{v.frame:4d}   {v.score:8.3f}   {len(v.abnormal_cells):3d} {bar}{marker}")
print(f"\n{time.perf_counter() - t0:.1f} s end to end")
