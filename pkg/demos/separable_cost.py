"""How much a depthwise-separable convolution saves.

Runs a standard 3x3 convolution and its depthwise + pointwise replacement on
the same feature map, counts the multiplications actually performed and
compares them with the closed-form costs.
"""
import numpy as np

from apnea_screen.nn import cost
from apnea_screen.nn import functional as F
from apnea_screen.nn import mobilenet_v2


def main():
    rng = np.random.default_rng(0)
    print(f"{'M':>4} {'N':>4} {'DF':>4} {'standard':>12} {'separable':>12} {'ratio':>7}")
    for m, n, df in [(32, 64, 48), (64, 128, 24), (160, 320, 3)]:
        x = rng.normal(size=(1, df, df, m)).astype(np.float32)
        with F.count_multiplies() as std:
            F.conv2d_forward(x, rng.normal(size=(3, 3, m, n)).astype(np.float32), 1, "same")
        with F.count_multiplies() as sep:
            y, _ = F.conv2d_forward(x, rng.normal(size=(3, 3, m)).astype(np.float32), 1,
                                    "same", "depthwise")
            F.conv2d_forward(y, rng.normal(size=(1, 1, m, n)).astype(np.float32), 1,
                             "same", "pointwise")
        s, d = std["standard"], sep["depthwise"] + sep["pointwise"]
        assert s == cost.standard_mults(3, m, n, df) and d == cost.separable_mults(3, m, n, df)
        print(f"{m:>4} {n:>4} {df:>4} {s:>12,} {d:>12,} {s / d:>7.2f}")

    print(f"\n3x3 weights, M=32 N=64: standard {cost.standard_params(3, 32, 64)}, "
          f"separable {cost.separable_params(3, 32, 64)}")
    print(f"full classifier parameters: {mobilenet_v2(2).num_parameters():,}")


if __name__ == "__main__":
    main()
