import numpy as np

from rxai.tensor import LayerSpec


def fixed_input(shape=(3, 32, 32), seed=7):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


def random_head(seed):
    """A random small head plus a feature map with values in [-1, 1].

    Cycles through five topologies so every differentiable layer kind is hit.
    """
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 6))
    h, w = (int(v) for v in rng.integers(2, 7, size=2))
    classes = int(rng.integers(2, 6))
    u = lambda *shape: rng.uniform(-1, 1, size=shape).astype(np.float32)
    variant = seed % 5
    if variant == 0:
        head = [LayerSpec.global_avg_pool(), LayerSpec.linear(u(classes, k), u(classes))]
    elif variant == 1:
        k2 = int(rng.integers(1, 5))
        head = [LayerSpec.conv2d(u(k2, k, 3, 3), u(k2), padding=1), LayerSpec.relu(),
                LayerSpec.global_avg_pool(), LayerSpec.linear(u(classes, k2), u(classes))]
    elif variant == 2:
        head = [LayerSpec.maxpool2d(2), LayerSpec.flatten()]
        n = k * (h // 2) * (w // 2)
        head += [LayerSpec.linear(u(classes, n), u(classes))]
    elif variant == 3:
        n = k * (h - 1) * (w - 1)
        head = [LayerSpec.avgpool2d(2, stride=1), LayerSpec.flatten(),
                LayerSpec.linear(u(8, n), u(8)), LayerSpec.relu(),
                LayerSpec.linear(u(classes, 8), u(classes)), LayerSpec.softmax()]
    else:
        k2 = int(rng.integers(1, 5))
        head = [LayerSpec.conv2d(u(k2, k, 3, 3), u(k2), stride=2, padding=1), LayerSpec.relu(),
                LayerSpec.maxpool2d(2, stride=1, padding=1), LayerSpec.global_avg_pool(),
                LayerSpec.linear(u(classes, k2), u(classes)), LayerSpec.softmax()]
    feature = u(k, h, w)
    class_index = int(rng.integers(0, classes))
    return head, feature, class_index


def max_relative_error(actual, expected):
    """max |actual - expected| scaled by the largest |expected| component."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    scale = max(float(np.abs(expected).max()), 1e-12)
    return float(np.abs(actual - expected).max()) / scale
