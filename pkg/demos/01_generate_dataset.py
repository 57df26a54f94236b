"""Generate a procedural part-based shape dataset and inspect its samples.

Shapes are unions of posed analytic primitives (spheres, boxes, capsules,
cylinders, cones) grouped into named families. Each shape is normalized to
fit in [-0.9, 0.9]^3, and SDF training samples are drawn near the surface
with a small uniform tail, carrying exact signed distances and the index of
the nearest part.

Run: python3 demos/01_generate_dataset.py
"""

import numpy as np

from partsdf import shapegen as sg

shapes = sg.generate_dataset("table", 8, seed=0, missing_fraction=0.25)
print(f"generated {len(shapes)} table shapes")
for shape in shapes[:4]:
    present = [j for j, _ in shape.present_parts()]
    lo, hi = shape.bounds()
    print(f"  {shape.shape_id}: slots {present}, extent {np.round(hi - lo, 3)}")

shape = shapes[0]
samples = sg.sample_sdf(shape, 20000, seed=1)
inside = np.mean(samples.sdf < 0)
print(f"\n{len(samples)} SDF samples for {shape.shape_id}:")
print(f"  inside fraction        {inside:.3f}")
print(f"  |sdf| median           {np.median(np.abs(samples.sdf)):.4f}")
print(f"  part label histogram   {np.bincount(samples.part_label, minlength=shape.n_slots)}")

# samples agree with the analytic oracle by construction
s, p = sg.shape_sdf(shape, samples.points)
assert np.array_equal(s, samples.sdf) and np.array_equal(p, samples.part_label)
print("  sample sdf/labels match the analytic oracle exactly")

sg.save_shape("/tmp/demo_shape.shape", shape)
sg.save_samples("/tmp/demo_shape.psmp", samples)
print("\nwrote /tmp/demo_shape.shape and /tmp/demo_shape.psmp")
