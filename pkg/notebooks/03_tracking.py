# %% [markdown]
# # Training and tracking on synthetic scenes
#
# The full recipe (`desk_scale_experiment`) takes about 20 CPU minutes.
# Set `EPOCHS = None` to run it; the short default only shows the moving parts.

# %%
import numpy as np

from lightjdt.model import JDTModel, ModelConfig
from lightjdt.moteval import clear_mot, group_by_frame, mota
from lightjdt.synthdata import SceneConfig, generate
from lightjdt.train import (RECIPE_FRAMES, RECIPE_SCENE, TrainConfig, desk_scale_experiment, held_out_mota, train,
                            training_sequences)
from lightjdt.tracker import TrackerConfig, to_mot_records, track_sequence

EPOCHS = 5

# %%
if EPOCHS is None:
    report = desk_scale_experiment()
    model, curve = report.model, report.curve
    print(f"trained in {report.train_seconds / 60:.1f} CPU min")
else:
    model = JDTModel(ModelConfig(), 0)
    curve = train(model, training_sequences(RECIPE_SCENE, RECIPE_FRAMES), TrainConfig(epochs=EPOCHS))
print("loss first/last:", round(curve[0], 3), round(curve[-1], 3))

# %% [markdown]
# Held-out scenes, with and without duplicate suppression in the tracker.

# %%
for nms in (0.5, None):
    r = held_out_mota(model, tracker_config=TrackerConfig(nms_iou=nms))
    print(f"nms {nms}: MOTA {r.mota:.3f}  FP {r.fp}  FN {r.fn}  IDS {r.ids}  GT {r.gt}")

# %% [markdown]
# One sequence in detail: ids per frame.

# %%
seq = generate(SceneConfig(length=10, seed=901, max_speed=0.5))
out = track_sequence(model, list(enumerate(seq.frames, start=1)))
for f in (1, 5, 10):
    print(f, sorted(i for i, _, _ in out.get(f, [])))
print("GT against itself:", mota(clear_mot(group_by_frame(seq.records), group_by_frame(seq.records))).mota)
