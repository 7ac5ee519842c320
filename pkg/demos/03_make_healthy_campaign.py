"""Attack a trained victim over held-out images and summarize the campaign.

    python demos/02_train_victim.py victim.json
    python demos/03_make_healthy_campaign.py victim.json
"""

import sys

from rangeattack import (
    PRESETS,
    AttackConfig,
    attack,
    boundary_projection,
    load_model,
    record_from_result,
    summarize,
    synth_dataset,
    trend_statistic,
)

net = load_model(sys.argv[1] if len(sys.argv) > 1 else "victim.json")
target = PRESETS["make-healthy"]
images = synth_dataset(100, net.input_shape, seed=2)

cfg = AttackConfig(max_iterations=500, step_size=0.2)
records = [record_from_result(i, attack(net, img, target, cfg), target) for i, img in zip(images.ids, images.images)]

s = summarize(records)
print(f"success rate {s['success_rate']:.1%} over {s['n']} images, mean iterations {s['mean_iterations']:.1f}")
print(f"l2 quantiles    {s['l2']}")
print(f"l_inf quantiles {s['l_inf']}")

# Successful attacks tend to stop right at the nearer bound: the iterate
# crosses into the range and the loop exits on the first rounded check.
bp = boundary_projection(records, target)
print(f"{bp['within_tolerance_fraction']:.1%} of attacked images land within 0.5 of a bound")
print(f"rounding outliers: {bp['rounding_outliers']}")

# Images further from the range need larger perturbations.
print(f"Spearman(distance to range, l2) = {trend_statistic(records):.3f}")

for r in sorted(records, key=lambda r: -r.distance_to_range)[:5]:
    print(f"{r.image_id}: {r.f_before:6.2f} -> {r.f_after:6.2f}  l2 {r.l2:6.2f}  l_inf {r.l_inf}")
