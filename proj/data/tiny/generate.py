"""Regenerates the bundled 32x32 smoke dataset (deterministic)."""
import numpy as np

rng = np.random.default_rng(2024)


def save(name, a):
    a = np.clip(a * 255 + 0.5, 0, 255).astype(np.uint8)
    h, w, _ = a.shape
    with open(name, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(a.tobytes())


yy, xx = np.mgrid[0:32, 0:32] / 31.0
for i in range(5):
    base = np.stack([xx * rng.uniform(.3, 1) + rng.uniform(0, .3), yy * rng.uniform(.3, 1),
                     (1 - xx) * (1 - yy) * rng.uniform(.3, 1)], -1)
    for _ in range(3):
        cy, cx = rng.uniform(6, 26, 2)
        r = rng.uniform(3, 9)
        mask = ((yy * 31 - cy) ** 2 + (xx * 31 - cx) ** 2) < r * r
        base[mask] = rng.uniform(0, 1, 3)
    save(f"content/c{i}.ppm", base + rng.normal(0, .02, base.shape))

stripes = 0.5 + 0.5 * np.sin((xx + yy) * 31 * 0.9)
save("style.ppm", np.stack([stripes, 0.3 + 0.4 * np.cos(xx * 31 * 0.6), 1 - stripes], -1))
