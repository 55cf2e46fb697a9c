"""Train the prototype-conditioned generator on two 2-D Gaussians.

Prints each class's true mean next to the mean of 2000 generated samples,
with and without averaging of the generator weights.
"""

import numpy as np

from gil.benchmark import toy_gaussians
from gil.gan import GANConfig, synthesize, train_gan
from gil.memory import ClassRecord, ReplayBuffer, buffer_insert, compute_prototype


def main(seed=0, steps=3000):
    ds, emb = toy_gaussians(seed)
    buffer = ReplayBuffer()
    for c in ds.classes:
        mu, sigma = compute_prototype(ds.features_of(c))
        buffer_insert(buffer, ClassRecord(c, mu, sigma, emb[c]))

    for average in (0.0, 0.999):
        cfg = GANConfig(hidden=64, steps=steps, noise_dim=2, batch_size=64, f_average=average, seed=seed)
        models, history = train_gan(ds, emb, cfg, buffer=buffer)
        print(f"f_average={average}  final critic loss {history[-1]['critic']:.3f}")
        for c in ds.classes:
            mu, sigma = compute_prototype(ds.features_of(c))
            x = synthesize(models, mu, sigma, 2000, seed)
            err = np.linalg.norm(x.mean(axis=0) - mu)
            print(f"  class {c}: true mean {np.round(mu, 2)}  generated {np.round(x.mean(axis=0), 2)}  error {err:.3f}")


if __name__ == "__main__":
    main()
