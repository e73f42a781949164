"""
P1 along the address space
==========================

Usage leaves traces that are hard to see bit by bit. Averaging P1 over
blocks of memory and fitting a line exposes a slow trend, and the spatial
spectrum of P1 concentrates repeated stress patterns into a few bins.
Two devices of the same fleet, one young and one old, are compared.
"""
import sys
from pathlib import Path

import numpy as np

from sramage.agesim import STRONG_DRIFT, generate_fleet
from sramage.bitcore import compute_p1
from sramage.features import blockwise_p1, p1_address_regression, p1_spectrum
from sramage.render import render_xy

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

fleet = generate_fleet(2, [1.0, 17.0], profile_prior=STRONG_DRIFT, seed=4, num_samples=200, sram_bytes=8192)
young, old = fleet.devices

block_bytes = 256
for dev in (young, old):
    p1 = compute_p1(dev)
    blocks = blockwise_p1(p1, block_bytes)
    intercept, slope, rs = p1_address_regression(p1, block_bytes)
    print(f"{dev.device_id} ({dev.usage_months:4.1f} months): intercept {intercept:.4f}  slope {slope:+.4f}  "
          f"Spearman {rs:+.3f}")
    x = (np.arange(blocks.size) + 0.5) / blocks.size
    render_xy(out / f"blocks_{dev.device_id}", x, {"p1_block_mean": blocks}, "address", (intercept, slope),
              title=f"{dev.device_id} blockwise P1")

# Both spectra in one two-column table.
spectra = {d.device_id: p1_spectrum(compute_p1(d)) for d in (young, old)}
bins = np.arange(next(iter(spectra.values())).size)
csv_path, svg_path = render_xy(out / "spectrum", bins, spectra, "bin", title="P1 spatial spectrum")
low = slice(1, 65)
for name, amp in spectra.items():
    print(f"{name}: mean amplitude in bins 1-64 {amp[low].mean():.2f}, elsewhere {amp[65:].mean():.2f}")
print("wrote", csv_path, svg_path)
