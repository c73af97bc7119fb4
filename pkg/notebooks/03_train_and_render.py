"""
Training the scanpath GAN on blobs
==================================

A short adversarial run on twenty synthetic images, then one predicted
scanpath is scored and drawn as an SVG overlay.  Expect about a minute on
one core.
"""

from pathlib import Path

import numpy as np

from scanpath_forge.data import SyntheticSpec, generate_synthetic, write_ppm
from scanpath_forge.evaluation import evaluate_scanpath
from scanpath_forge.models import Discriminator, Generator, predict_scanpath
from scanpath_forge.render import scanpath_svg
from scanpath_forge.training import Trainer, TrainConfig, TrainItem

items = generate_synthetic(SyntheticSpec(), 20, seed=0)
data = [TrainItem(it.image, it.record.pool()) for it in items]
trainer = Trainer(Generator(seed=0), Discriminator(seed=0), data, TrainConfig(seed=0))

for chunk in range(5):
    reports = trainer.run(200)
    d = np.mean([r.d_loss for r in reports])
    g = np.mean([r.g_loss for r in reports])
    print(f"step {trainer.step:5d}  d_loss {d:.3f}  g_loss {g:.3f}")

# score the averaged generator on a fresh image
test = generate_synthetic(SyntheticSpec(), 1, seed=123)[0]
pred = predict_scanpath(trainer.predictor, test.image, 64, 64, seq_len=10, image_id=test.record.image_id)
report = evaluate_scanpath(pred, test.record.pool(), test.saliency)
print({k: round(v, 3) for k, v in report.to_dict().items()})

out = Path("notebook_output")
out.mkdir(exist_ok=True)
write_ppm(out / "test.ppm", test.image)
(out / "prediction.svg").write_text(scanpath_svg(pred, image_href="test.ppm"))
print("wrote", out / "prediction.svg")
