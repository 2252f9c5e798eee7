import numpy as np
import pytest

from bidense.data import prepare_dataset, save_image


def synth_image(seed: int, h: int, w: int, texture: float = 0.04) -> np.ndarray:
    """Band-limited synthetic RGB test image in [0.05, 0.95].

    A few random low-frequency sinusoids per channel plus light noise:
    structured enough for SSIM/alignment checks, smooth enough to survive
    a downscale/upscale round trip.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(3):
        acc = np.zeros((h, w))
        for _ in range(6):
            fy, fx = rng.uniform(0.3, 3.0, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.uniform(0.3, 1.0)
            acc += amp * np.sin(2.0 * np.pi * (fy * yy / h + fx * xx / w) + phase)
        img[..., c] = acc
    img += rng.normal(0.0, texture, size=img.shape)
    img -= img.min()
    img /= img.max()
    return (0.05 + 0.9 * img).astype(np.float32)


def make_corpus(root, sizes, seed0=100):
    """Write synthetic PNGs of the given (h, w) sizes under root."""
    root.mkdir(parents=True, exist_ok=True)
    for i, (h, w) in enumerate(sizes):
        save_image(root / f"img{i:02d}.png", synth_image(seed0 + i, h, w))
    return root


@pytest.fixture(scope="session")
def corpus_index(tmp_path_factory):
    """Six-image dataset prepared at scales 2/3/4."""
    base = tmp_path_factory.mktemp("corpus")
    hr = make_corpus(base / "hr", [(120, 120), (96, 132), (108, 96),
                                   (96, 96), (132, 108), (120, 96)])
    return prepare_dataset(hr, {2, 3, 4}, base / "prepared")
