"""A small Monte Carlo benchmark written to ./demo_results.

Ten replications of the default experiment; the report directory holds the
JSON report plus CSV tables for the regret box plot and top-k curves.
"""
from offline_pms.harness import ExperimentConfig, emit_report, run_benchmark

cfg = ExperimentConfig({"replications": 10})
result, summary = run_benchmark(cfg)
emit_report(result.records, "demo_results", config=cfg, summary=summary, timings=result.timings)

for name, q in summary["regret"].items():
    print(f"{name:>9}: mean regret {q['mean']:.4f}  median {q['median']:.4f}")
print(f"interval coverage by candidate: {[round(c, 2) for c in summary['coverage']]}")
print(f"report written to demo_results/ (config {cfg.config_hash()})")
