"""Smoke tests for the python bindings; the full suite lives in ctest."""
import numpy as np

import _tsl


def test_cost_values():
    assert _tsl.lstm_cost(1024, 1024, 10) == 846_233_600
    assert _tsl.gru_cost(1024, 1024, 10) == 634_675_200
    assert _tsl.bottleneck_cost(1024, 256, 10, 3, "eq4") == 61_056_000
    assert _tsl.crossover(341, 1023) == "equal"
    assert _tsl.crossover(256, 256, "gru") == "equal"


def test_cost_report():
    r = _tsl.cost_report(alpha=1.0, resolution=320, placement="all_feature_maps")
    assert abs(r["total_params"] - 3.24e6) / 3.24e6 < 0.10
    assert abs(r["total_mac_table1"] - 1.13e9) / 1.13e9 < 0.15
    assert any(l["name"].endswith("lstm") for l in r["layers"])


def test_arch_text_round_trip_marker():
    text = _tsl.arch_text(toy=True, resolution=64, placement="single_conv13")
    assert "lstm" in text and "Head" in text


def test_video_determinism():
    f1, gt1 = _tsl.generate_video(7)
    f2, gt2 = _tsl.generate_video(7)
    assert f1.shape == (40, 64, 64, 3)
    assert np.array_equal(f1, f2)
    assert gt1 == gt2
    assert all(len(frame) == 2 for frame in gt1)


def main():
    for name, fn in sorted(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok {name}")


if __name__ == "__main__":
    main()
