"""Measure how forward-pass time grows with sequence length.

The factorized evaluator aggregates keys once (cost linear in L), the
softmax baseline materializes an L x L weight matrix. Fitting the slope
of log(time) against log(L) makes the asymptotics visible directly.
"""

from linattn.bench import bench_scaling, linear_attention_op_count

result = bench_scaling([256, 512, 1024, 2048], repeats=5)
print(result.csv())
for kind, slope in result.exponents.items():
    print(f"fitted exponent {kind:<14} {slope:.3f}")
for warning in result.resolution_warnings:
    print(f"warning: {warning}")

print("\ncounted (not timed) aggregation work of the factorized path:")
base = linear_attention_op_count(256, 16, 16)
for length in (256, 512, 1024, 2048):
    ops = linear_attention_op_count(length, 16, 16)
    print(f"  L={length:<5} ops={ops:<9} ratio to L=256: {ops / base:.1f}")
