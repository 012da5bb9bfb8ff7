"""Closed-form parameter and multiply counts for standard vs separable conv."""


def standard_params(dk: int, m: int, n: int) -> int:
    return dk * dk * m * n


def separable_params(dk: int, m: int, n: int) -> int:
    return dk * dk * m + m * n


def standard_mults(dk: int, m: int, n: int, df: int) -> int:
    return dk * dk * m * n * df * df


def separable_mults(dk: int, m: int, n: int, df: int) -> int:
    """Depthwise ``dk^2 * m * df^2`` plus pointwise ``m * n * df^2``."""
    return dk * dk * m * df * df + m * n * df * df
