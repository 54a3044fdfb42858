"""Artifact removal on EEG-style signals: recover clean DCT coefficients from sensed x + kappa*n.

Clean signals are sums of a few low-frequency cosines (sparse in the DCT
basis); artifacts are spiky broadband bursts mixed in at a chosen SNR.

    python3 scripts/eeg_style.py
"""
import json

import numpy as np
from _common import parser, setup

from pibinn.data import Dataset, contaminate, gen_sensing, kappa_for_snr, snr_db
from pibinn.experiment import run_training
from pibinn.linalg import dct_matrix


def make_signals(count: int, n: int, atoms: int, snr: float, seed: int):
    rng = np.random.default_rng(seed)
    D = dct_matrix(n)
    clean, noisy, achieved = [], [], []
    for _ in range(count):
        coef = np.zeros(n)
        idx = rng.choice(n // 4, atoms, replace=False)
        coef[idx] = rng.standard_normal(atoms)
        x = D.T @ coef
        art = np.zeros(n)
        start = rng.integers(0, n - 8)
        art[start:start + 8] = rng.standard_normal(8) * 3
        k = kappa_for_snr(x, art, snr)
        clean.append(x)
        noisy.append(contaminate(x, art, k))
        achieved.append(snr_db(x, art, k))
    return np.array(clean), np.array(noisy), D, float(np.mean(achieved))


def main():
    args = parser(__doc__, "eeg_style.json").parse_args()
    cfg, out = setup(args, "eeg_style")
    pipe = cfg.pop("pipeline")
    n, N = pipe["n"], pipe["n_train"] + pipe["n_test"]
    clean, noisy, D, snr = make_signals(N, n, pipe["atoms"], pipe["snr_db"], pipe["seed"])
    Phi = gen_sensing(pipe["m"], n, pipe["seed"])
    X = clean @ D.T
    Y = (noisy @ D.T) @ Phi.T
    sup = [np.flatnonzero(np.abs(x) > 1e-12) for x in X]
    a = pipe["n_train"]
    train_ds = Dataset(Phi, Y[:a], X[:a], sup[:a], split="train")
    test_ds = Dataset(Phi, Y[a:], X[a:], sup[a:], split="test")
    _, rep = run_training(cfg, out, train_ds, test_ds)
    summary = {"input_snr_db": snr, "train_nmse_db": rep.train_nmse_db,
               "test_nmse_db": rep.test_nmse_db, "bits": rep.bits}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
