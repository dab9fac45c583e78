"""
End-to-end search on a synthetic zoo
====================================

Generate a 7 x 7 zoo with planted groups, run the search with default
settings, and compare against training every candidate on all data.
"""

from vlmsearch import SearchConfig, SyntheticSpec, generate_synthetic, run
from vlmsearch.search import compare_to_grid, run_grid
from vlmsearch.trace import planted_best

spec = SyntheticSpec.planted(seed=4)
print("encoder groups:", spec.ve_groups)
print("language-model groups:", spec.llm_groups)

zoo = generate_synthetic(spec, seed=4)
oracle = zoo.oracle()
report = run(zoo, oracle, SearchConfig(seed=4), workers=1)
grid = run_grid(zoo.candidates, oracle)
ev = compare_to_grid(report, grid)

print(f"\nselected {report.top1}, planted best {planted_best(zoo)}")
print(f"predicted error {report.top1_predicted_error:.4f}, true {report.top1_true_error:.4f}")
print("costs:", {k: round(v, 3) for k, v in report.costs.items()})
print(f"grid cost {grid.cost:.2f}, speedup {ev['speedup']:.1f}x")
print(f"tau {ev['tau']:.3f}, tau_w {ev['tau_w']:.3f}, top-10 tau_w {ev['topk_tau_w']:.3f}")
