"""Train the multi-form model and the PointNet baseline on a small drive and compare.

Far below the full recipe (a few hundred frames, a handful of epochs) so it
finishes in a couple of minutes on a laptop; expect modest scores.
"""

import time

from radarseg.models import default_config
from radarseg.pipeline import TrainConfig, evaluate, split_train_test, train
from radarseg.synthgen import SceneConfig, generate_sequence

frames = generate_sequence(SceneConfig(seed=3, frames=400))
train_frames, test_frames = split_train_test(frames, 0.75)
cfg = TrainConfig(epochs=6, seed=3, eval_every=2)

for variant in ("pointnet", "mfg"):
    t0 = time.perf_counter()
    res = train(default_config(variant, width=0.5, seed=3), cfg, train_frames, test_frames,
                progress=lambda e: print(f"  epoch {e.epoch:>2}  loss {e.loss:.4f}"
                                         + ("" if e.val_f1 is None else f"  val F1 {e.val_f1:.3f}")))
    print(f"{variant}: trained in {time.perf_counter() - t0:.0f} s")
    print(evaluate(res.model, test_frames, res.stats).to_text())
