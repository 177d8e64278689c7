"""
Cold starts and energy per batch
================================

The analysis helpers work on plain numbers and arrays too, so they can be
pointed at measurements taken elsewhere.
"""

from __future__ import annotations

import numpy as np

from colobench import colocation_delta, detect_cold_start, energy_per_batch

# Energy per batch is mean power over batches per second.
measurements = {
    "pi, local images": (5.0, 1.12),
    "server, tensorflow": (150.0, 9.5),
    "server, onnx": (90.0, 7.2),
    "server, ncnn": (144.0, 16.6),
}
for label, (watts, batches) in measurements.items():
    print(f"{label:>20}: {watts:6.1f} W / {batches:5.2f} batch/s = {energy_per_batch(watts, batches):6.2f} J/batch")

# A model server's memory: about 150 MiB while it starts, 1.5 GiB once the
# model is resident. Samples every 5 s with a little noise.
rng = np.random.default_rng(0)
t = np.arange(0, 600, 5.0)
memory = np.where(t >= 244, 1500.0, 150.0) + rng.normal(0, 10, t.size)
result = detect_cold_start(list(zip(t, memory)), trigger=0.0)
print()
print(f"step found: {result.detected}, {result.step_time:.0f} s after the trigger")
print(f"levels: {result.pre_level:.0f} MiB -> {result.post_level:.0f} MiB (threshold {result.threshold:.0f} MiB)")

# A steady climb is a leak or a cache warming up, not a load step.
ramp = 150 + 2.2 * t
print("ramp flagged as a step:", detect_cold_start(list(zip(t, ramp)), trigger=0.0).detected)

# Co-location ratios divide the shared-node value by the baseline value.
alone = {"cold_start": 244.0, "throughput": 7.29}
shared = {"cold_start": 505.0, "throughput": 2.54}
for name, ratio in colocation_delta(alone, shared).items():
    print(f"{name}: x{ratio:.3f}")
