import numpy as np
import pytest

from noteem.core import ActivationStack, FrameClock, NoteEvent, NoteSequence, PITCH_COUNT, rasterize
from noteem.descriptor import DescriptorWeights, build_descriptors


def stack_with(cells, t=4, instrument_count=1):
    """cells: list of (head, frame, pitch, instrument, value)."""
    shape = (t, PITCH_COUNT * instrument_count)
    planes = [np.zeros(shape, np.float32) for _ in range(3)]
    head_index = {"onset": 0, "frame": 1, "offset": 2}
    for head, frame, pitch, inst, value in cells:
        planes[head_index[head]][frame, inst * PITCH_COUNT + pitch - 21] = value
    return ActivationStack(*planes, instrument_count=instrument_count)


def test_single_onset_folds_to_pitch_class_zero():
    stack = stack_with([("onset", 1, 60, 0, 0.9)])
    desc = build_descriptors(stack, DescriptorWeights())
    assert desc.shape == (4, 12)
    assert desc[1, 0] == pytest.approx(90.0)  # 100 * 0.9, and 60 mod 12 == 0
    desc[1, 0] = 0
    assert not desc.any()


def test_all_zero_stack():
    stack = stack_with([])
    assert not build_descriptors(stack).any()


def test_max_across_octave_and_instrument():
    stack = stack_with([("onset", 0, 60, 0, 0.4), ("onset", 0, 72, 1, 0.7)],
                       instrument_count=2)
    desc = build_descriptors(stack)
    assert desc[0, 0] == pytest.approx(70.0)


def test_roll_descriptor_uses_same_formula():
    seq = NoteSequence.from_notes([NoteEvent(62, 0.0, 0.2)])
    roll = rasterize(seq, FrameClock(), 10)
    desc = build_descriptors(roll)
    pc = 62 % 12
    grid = 1.0 / 1024.0
    # onset cell is also a frame cell; values land on the 1/1024 grid
    assert desc[0, pc] == pytest.approx(100.0 + 0.01, abs=grid)
    assert desc[1, pc] == pytest.approx(0.01, abs=grid)
    assert desc[0, pc] == np.round((100.0 + 0.01) * 1024.0) / 1024.0


def test_fold_ignores_inactive_octave_duplicate():
    base = stack_with([("frame", 0, 60, 0, 0.5)])
    with_dup = stack_with([("frame", 0, 60, 0, 0.5), ("frame", 0, 72, 0, 0.0)])
    assert np.array_equal(build_descriptors(base), build_descriptors(with_dup))


def test_onset_only_mode():
    stack = stack_with([("onset", 0, 60, 0, 0.5), ("frame", 1, 60, 0, 0.9),
                        ("offset", 2, 60, 0, 0.9)])
    desc = build_descriptors(stack, DescriptorWeights(onset=1.0, frame=0.0, offset=0.0))
    assert desc[0, 0] == pytest.approx(0.5)
    assert desc[1, 0] == 0 and desc[2, 0] == 0


def test_weight_validation():
    with pytest.raises(ValueError):
        DescriptorWeights(onset=-1.0)
    with pytest.raises(ValueError):
        DescriptorWeights(onset=0.0, frame=0.0, offset=0.0)
    # the frame-weighted variant used in ablations must be constructible
    DescriptorWeights(onset=0.01, frame=100.0, offset=0.001)
