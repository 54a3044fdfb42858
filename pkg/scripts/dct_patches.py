"""DCT-domain recovery of noisy 8x8 image patches with a one-bit unrolled net.

Reads grayscale PGM images (convert other formats first, e.g. with
``convert in.jpg out.pgm``). Without ``--images`` a synthetic smooth image is
used so the pipeline runs out of the box.

    python3 scripts/dct_patches.py --images a.pgm b.pgm
"""
import json

import numpy as np
from _common import parser, setup

from pibinn.data import Dataset, dct_sense, extract_patches, gen_sensing
from pibinn.experiment import run_training
from pibinn.linalg import dct_matrix


def synthetic_image(size: int = 64, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size))
    for _ in range(6):
        fx, fy, ph = rng.uniform(0.5, 4, 2).tolist() + [rng.uniform(0, 2 * np.pi)]
        img += np.cos(2 * np.pi * (fx * xx + fy * yy) + ph)
    return (img - img.min()) / (img.max() - img.min())


def split(ds: Dataset, n_train: int) -> tuple[Dataset, Dataset]:
    a = Dataset(ds.A, ds.Y[:n_train], ds.X[:n_train], ds.supports[:n_train], split="train")
    b = Dataset(ds.A, ds.Y[n_train:], ds.X[n_train:], ds.supports[n_train:], split="test")
    return a, b


def main():
    p = parser(__doc__, "dct_patches.json")
    p.add_argument("--images", nargs="*", default=None)
    args = p.parse_args()
    cfg, out = setup(args, "dct_patches")
    pipe = cfg.pop("pipeline")
    images = args.images or [synthetic_image(seed=s) for s in range(pipe["synthetic_images"])]
    patches = np.vstack([extract_patches(img, 8, pipe["patches_per_image"], pipe["seed"], i * 1000)
                         for i, img in enumerate(images)])
    D = dct_matrix(64)
    Phi = gen_sensing(pipe["m"], 64, pipe["seed"])
    ds = dct_sense(patches, Phi, D, pipe["noise_std"], pipe["seed"])
    train_ds, test_ds = split(ds, int(len(ds) * pipe["train_fraction"]))
    net, rep = run_training(cfg, out, train_ds, test_ds)
    summary = {"patches": len(ds), "train_nmse_db": rep.train_nmse_db,
               "test_nmse_db": rep.test_nmse_db, "bits": rep.bits}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
