"""
Startup statistics of a simulated SRAM
======================================

Power up the same memory many times and the bits do not always agree.
This script simulates one device, summarises its dumps as a probability
of one per bit and as bit instability, and writes both as grayscale
bitmaps next to their row-ranked versions.
"""
import sys
from pathlib import Path

import numpy as np

from sramage.agesim import make_profile, sample_population, simulate_device
from sramage.bitcore import compute_instability, compute_p1
from sramage.render import render_bitmap

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

# 8 KiB of cells: most lean hard one way, a minority are close to balanced.
num_bits = 8 * 8192
pop = sample_population(num_bits, seed=1)

# Firmware only touches the lower half of this memory.
profile = make_profile(num_bits, seed=2, drift_rate=0.4, used_fraction=0.5, segment_bits=64)
dev = simulate_device(pop, profile, usage_months=12.0, num_samples=1000, seed=3, device_id="demo")

p1 = compute_p1(dev)
inst = compute_instability(p1)
frac = dev.ones_per_sample() / dev.num_bits
print(f"{dev.num_samples} samples of {dev.num_bits} bits")
print(f"fraction of ones per sample: min {frac.min():.4f}  mean {frac.mean():.4f}  max {frac.max():.4f}")
print(f"stable bits (I = 0): {np.mean(inst.values == 0):.1%}")

# The ageing footprint shows up as a drop in instability over the used half.
half = num_bits // 2
print(f"mean instability, used half {inst.values[:half].mean():.4f}, unused half {inst.values[half:].mean():.4f}")

for name, stat in (("p1", p1), ("instability", inst)):
    for mode in ("unsorted", "row-ranked"):
        path = render_bitmap(stat, out / f"{name}_{mode}.pgm", mode)
        print("wrote", path)
