import numpy as np
import pytest

from lightjdt.model import JDTModel, ModelConfig, load_checkpoint, save_checkpoint
from lightjdt.synthdata import SceneConfig, generate
from lightjdt.tensor import Tensor
from lightjdt.train import TrainConfig, augment, frame_pairs, overfit, train, training_sequences

SMALL = ModelConfig(channels=8, heads=2, encoder_layers=1, decoder_layers=1, num_queries=6)


def _forward(model, image):
    f = model.features(Tensor(image[None]), 1)
    out = model.detect(model.encode(f, f))
    return out.class_logits.data, out.boxes.data


def test_overfit_single_pair():
    pair = frame_pairs([generate(SceneConfig(length=2, seed=3, max_objects=2))])[0]
    model = JDTModel(ModelConfig(channels=16, heads=2, encoder_layers=1, decoder_layers=1, num_queries=6), 0)
    curve = overfit(model, pair, 200, lr=3e-3)
    assert curve[-1] < 0.1 * curve[0]


def test_training_deterministic():
    seqs = training_sequences(SceneConfig(length=2, seed=1), 6)
    curves = []
    for _ in range(2):
        model = JDTModel(SMALL, 0)
        curves.append(train(model, seqs, TrainConfig(epochs=2, batch_size=2, seed=5)))
    assert curves[0] == curves[1]


def test_training_sequences_frame_budget():
    seqs = training_sequences(SceneConfig(length=3, seed=1), 8)
    assert [len(s.frames) for s in seqs] == [3, 3, 2]
    assert sum(len(p.cur_targets[0]) >= 0 for p in frame_pairs(seqs)) == 5


def test_checkpoint_bit_identical(tmp_path):
    model = JDTModel(SMALL, 7)
    path = tmp_path / "m.npz"
    save_checkpoint(path, model, seed=7)
    back, seed = load_checkpoint(path)
    assert seed == 7 and back.config == model.config
    img = generate(SceneConfig(length=1, seed=0)).frames[0]
    for a, b in zip(_forward(model, img), _forward(back, img)):
        assert a.tobytes() == b.tobytes()


def test_checkpoint_version_check(tmp_path):
    path = tmp_path / "m.npz"
    save_checkpoint(path, JDTModel(SMALL, 0))
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    arrays["__format__"] = np.array(999)
    np.savez(path, **arrays)
    with pytest.raises(ValueError):
        load_checkpoint(path)


@pytest.mark.parametrize("seed", range(20))
def test_augment_keeps_boxes_on_objects(seed):
    seq = generate(SceneConfig(length=2, seed=seed, noise=0.0))
    pair = augment(frame_pairs([seq])[0], np.random.default_rng(seed), max_shift=12)
    for img, (_, boxes, _) in ((pair.prev, pair.prev_targets), (pair.cur, pair.cur_targets)):
        for cx, cy, w, h in boxes * 64:
            x1, y1, x2, y2 = (int(round(v)) for v in (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
            # every pixel inside a target box belongs to an object (brighter than background)
            assert img[:, y1:y2, x1:x2].max(axis=0).min() > 0.5
