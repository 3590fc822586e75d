import numpy as np
import pytest

from royolo import angle_codec
from royolo.angle_codec import AngleGranularity


def test_encode_examples():
    assert angle_codec.encode_angle(0.0, 90) == 0
    assert angle_codec.encode_angle(45.3, 90) == 45
    assert angle_codec.encode_angle(45.3, 180) == 90
    assert angle_codec.encode_angle(89.999, 90) == 89
    assert angle_codec.encode_angle(np.nextafter(90.0, 0.0), 180) == 179
    assert angle_codec.encode_angle(30.0, AngleGranularity(18)) == 6

    return


def test_bin_center():
    assert angle_codec.bin_center(45, 90) == 45.5
    assert angle_codec.bin_center(90, 180) == 45.25
    assert angle_codec.bin_center(0, AngleGranularity(1)) == 45.0
    assert AngleGranularity(180).bin_width == 0.5

    return


def test_round_trip_error():
    thetas = np.arange(0.0, 90.0, 0.01)
    for n_d in (90, 180):
        worst = 0.0
        for theta in thetas:
            row = angle_codec.one_hot_angle(theta, n_d)
            assert row.sum() == 1.0
            err = abs(angle_codec.decode_angle(row) - theta)
            worst = max(worst, err)
        assert worst <= 45.0 / n_d + 1e-9

    return


def test_decode():
    scores = np.zeros(90)
    scores[[10, 20]] = 3.0
    # first maximum wins
    assert angle_codec.decode_angle(scores) == 10.5

    batch = np.zeros((2, 3, 180))
    batch[0, 1, 7] = 1.0
    out = angle_codec.decode_angles(batch)
    assert out.shape == (2, 3)
    assert out[0, 1] == 3.75
    assert out[1, 2] == 0.25

    with pytest.raises(ValueError):
        angle_codec.decode_angle([])
    with pytest.raises(ValueError):
        angle_codec.decode_angles(np.zeros((4, 0)))

    return


def test_encode_errors():
    with pytest.raises(ValueError):
        angle_codec.encode_angle(90.0, 90)
    with pytest.raises(ValueError):
        angle_codec.encode_angle(-0.1, 90)
    with pytest.raises(ValueError):
        angle_codec.encode_angle(10.0, 0)

    return


def test_smooth_label():
    plain = angle_codec.smooth_angle_label(20.2, 90)
    np.testing.assert_array_equal(plain, angle_codec.one_hot_angle(20.2, 90))

    smooth = angle_codec.smooth_angle_label(20.2, 90, radius=2.0)
    assert smooth.argmax() == 20
    assert smooth[20] == 1.0
    np.testing.assert_almost_equal(smooth[18], np.exp(-0.5))
    np.testing.assert_almost_equal(smooth[19], smooth[21])

    # no wrap across 90 degrees
    edge = angle_codec.smooth_angle_label(0.5, 90, radius=2.0)
    assert edge[-1] < 1e-100

    return
