"""
Scanpath metrics on a blob world
================================

Observers of a synthetic image are scored against each other and against
uniform random scanpaths with MultiMatch, NSS and Congruency.
"""

import numpy as np

from scanpath_forge.data import SyntheticSpec, generate_synthetic, uniform_random_scanpath
from scanpath_forge.evaluation import evaluate_scanpath
from scanpath_forge.metrics import multimatch, synthesize_saliency

item = generate_synthetic(SyntheticSpec(), 1, seed=3)[0]
pool = item.record.pool()
print(item.record.image_id, "blobs at", [(round(b["x"], 2), round(b["y"], 2)) for b in item.record.synthetic["blobs"]])

# two observers of the same image
a, b = pool.scanpaths[:2]
print("MultiMatch(obs_00, obs_01) =", np.round(multimatch(a, b), 3))

# the pooled fixation map is what the evaluation compares against
pooled = synthesize_saliency(pool)
print("pooled map", pooled.values.shape, "max", pooled.values.max())

# leave-one-out observer vs a random scanpath
rng = np.random.default_rng(0)
observer = evaluate_scanpath(a, pool, exclude_observer=a.observer_id)
random = evaluate_scanpath(uniform_random_scanpath(rng, 10, 64, 64), pool)
for name in observer.to_dict():
    print(f"{name:>13}  observer {getattr(observer, name):6.3f}   random {getattr(random, name):6.3f}")
