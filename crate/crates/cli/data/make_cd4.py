"""Writes cd4_synthetic.csv: a made-up CD4-count panel in long format.

366 subjects, 1-11 visits each (about 5 on average) at integer months in
[-18, 42] around seroconversion (month 0). Trajectories are built on the
square-root scale, as CD4 counts usually are: a drop after seroconversion,
then a slow decline. Every 61st subject runs persistently high.
"""
import numpy as np

rng = np.random.default_rng(20200321)
months = np.arange(-18, 43)
rows = []
for i in range(366):
    k = int(min(11, 1 + rng.poisson(4.2)))
    t = np.sort(rng.choice(months, size=k, replace=False))
    level = rng.normal(0.0, 3.5)
    slope = rng.normal(0.0, 0.06)
    if i % 61 == 17:
        level += 12.0
    mean = np.where(t < 0, 32.0, 32.0 - 7.0 * (1 - np.exp(-t / 4.0)) - 0.08 * t)
    root = mean + level + slope * t + rng.normal(0.0, 2.5, size=k)
    for tt, r in zip(t, np.maximum(root, 3.0)):
        rows.append((f"S{i + 1:03d}", "cd4", int(tt), int(round(r * r))))

with open("cd4_synthetic.csv", "w") as f:
    f.write("subject_id,variable,time,value\n")
    for r in rows:
        f.write("%s,%s,%d,%d\n" % r)
