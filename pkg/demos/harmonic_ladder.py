"""Averaged Husimi measures approach the classical flow as eps shrinks.

A small version of the main convergence experiment: wave packets with labels drawn
uniformly from a phase-space box evolve in a harmonic well, and their Husimi functions
are compared with the classically transported point masses.  D should fall roughly in
proportion to eps.

Run: python demos/harmonic_ladder.py   (about half a minute)
"""
import math

from sclab.ensemble import ExperimentSettings, RandomFamily, run_convergence_experiment
from sclab.potential import Potential

family = RandomFamily(n=1, center=(0.0, 0.0), scale=(1.0, 1.0), n_w=16, seed=1)
pot = Potential.from_catalog("harmonic", 1)
report = run_convergence_experiment(family, pot, math.pi, (0.4, 0.2, 0.1, 0.05),
                                    ExperimentSettings(samples=9))

print(" eps        D      stderr   D(t=0)")
for r in report.results:
    print(f"{r.eps:5.2f}  {r.D:.5f}  {r.stderr:.5f}  {r.D0:.5f}")
print("strictly decreasing:", report.strictly_decreasing())
print(f"runtime {report.runtime:.1f}s")
