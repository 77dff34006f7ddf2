"""Naive scalar re-implementations used as independent loss oracles.

Everything here is plain Python loops over floats, deliberately sharing no
code with the package.
"""

import math


def gaussian_kernel(window: int, sigma: float) -> list[list[float]]:
    half = (window - 1) / 2.0
    g = [math.exp(-((i - half) ** 2) / (2.0 * sigma * sigma)) for i in range(window)]
    kernel = [[gi * gj for gj in g] for gi in g]
    total = sum(sum(row) for row in kernel)
    return [[v / total for v in row] for row in kernel]


def ssim_mean(x, y, window: int, sigma: float, c1: float, c2: float) -> float:
    kernel = gaussian_kernel(window, sigma)
    h, w = len(x), len(x[0])
    values = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            mu_x = mu_y = xx = yy = xy = 0.0
            for a in range(window):
                for b in range(window):
                    k = kernel[a][b]
                    px = float(x[i + a][j + b])
                    py = float(y[i + a][j + b])
                    mu_x += k * px
                    mu_y += k * py
                    xx += k * px * px
                    yy += k * py * py
                    xy += k * px * py
            var_x = xx - mu_x * mu_x
            var_y = yy - mu_y * mu_y
            cov = xy - mu_x * mu_y
            num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
            den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
            values.append(num / den)
    return sum(values) / len(values)


def mse(x, y) -> float:
    total, count = 0.0, 0
    for row_x, row_y in zip(x, y):
        for px, py in zip(row_x, row_y):
            total += (float(px) - float(py)) ** 2
            count += 1
    return total / count


def _map_mean(fn, arr) -> float:
    flat = [float(v) for row in arr for v in row]
    return sum(fn(v) for v in flat) / len(flat)


def adversarial_lsgan(real_maps, fake_maps) -> tuple[float, float]:
    g = 0.0
    d = 0.0
    for real, fake in zip(real_maps, fake_maps):
        g += _map_mean(lambda v: (v - 1.0) ** 2, fake)
        d += (_map_mean(lambda v: (v - 1.0) ** 2, real) + _map_mean(lambda v: v * v, fake)) / 2.0
    return g, d


def feature_matching(real_scales, fake_scales) -> float:
    total = 0.0
    for real_layers, fake_layers in zip(real_scales, fake_scales):
        for r, f in zip(real_layers, fake_layers):
            flat_r = [float(v) for v in r.flatten()]
            flat_f = [float(v) for v in f.flatten()]
            total += sum(abs(a - b) for a, b in zip(flat_r, flat_f)) / len(flat_r)
    return total


def combined(adv_g: float, fm: float, ssim_term: float, mse_term: float,
             alpha: float, fm_weight: float) -> float:
    return alpha * (adv_g + fm_weight * fm) + (1.0 - alpha) * (ssim_term + mse_term)
