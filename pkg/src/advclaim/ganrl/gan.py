"""Adversarial pretraining of the generator on real claim records."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numkit import AdamState, Rng, sigmoid
from .nets import DiscriminatorNet, GeneratorNet


class GanDivergence(RuntimeError):
    """The discriminator won outright; carries the loss history for diagnosis."""

    def __init__(self, msg: str, history: "GanHistory"):
        super().__init__(msg)
        self.history = history


@dataclass
class GanHistory:
    disc_loss: list[float] = field(default_factory=list)
    gen_loss: list[float] = field(default_factory=list)
    d_real: list[float] = field(default_factory=list)
    d_fake: list[float] = field(default_factory=list)


def _softplus(x):
    return np.logaddexp(0.0, x)


def generate_batch(gen: GeneratorNet, rng: Rng, n: int) -> np.ndarray:
    """``n`` records from latent draws ``z ~ N(0, I)``; outputs lie in [0, 1]."""
    if n == 0:
        return np.zeros((0, gen.out_dim))
    return gen(rng.normal((n, gen.latent_dim)))


def pretrain_gan(gen: GeneratorNet, disc: DiscriminatorNet, x_real, epochs: int = 40, batch_size: int = 64,
                 seed: int = 0, non_saturating: bool = False, lr: float = 1e-4, beta1: float = 0.5,
                 divergence_patience: int = 100, divergence_floor: float = 1e-6) -> GanHistory:
    """Alternate one discriminator and one generator Adam step per minibatch.

    The discriminator minimizes ``-[log D(x) + log(1 - D(G(z)))]``. The
    generator minimizes ``log(1 - D(G(z)))``, or ``-log D(G(z))`` when
    ``non_saturating`` is set. Losses are evaluated in logit form. Training
    aborts with :class:`GanDivergence` once the discriminator loss stays below
    ``divergence_floor`` for ``divergence_patience`` consecutive steps.

    Both optimizers are reset to Adam with ``lr`` and ``beta1``; with the
    default beta1 of 0.9 the discriminator overpowers the generator on
    desk-scale tabular data.
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    for net in (gen, disc):
        net.opt = AdamState.for_params(net.params, learning_rate=lr, beta1=beta1)
    rng = Rng(seed)
    hist = GanHistory()
    streak = 0
    n = x_real.shape[0]
    for epoch in range(epochs):
        erng = rng.child(epoch)
        order = erng.permutation(n)
        for start in range(0, n, batch_size):
            real = x_real[order[start:start + batch_size]]
            m = real.shape[0]
            # discriminator step
            fake = gen(erng.normal((m, gen.latent_dim)))
            both = np.vstack([real, fake])
            s, cache = disc.logits(both)
            s = s[:, 0]
            s_real, s_fake = s[:m], s[m:]
            d_loss = float(np.mean(_softplus(-s_real)) + np.mean(_softplus(s_fake)))
            d_s = np.concatenate([(sigmoid(s_real) - 1.0) / m, sigmoid(s_fake) / m])
            grads, _ = disc.backward(cache, d_s[:, None])
            disc.step(grads)

            # generator step through the (just updated) discriminator
            z = erng.normal((m, gen.latent_dim))
            g_logit, g_cache = gen.logits(z)
            fake = sigmoid(g_logit)
            s_f, d_cache = disc.logits(fake)
            s_f = s_f[:, 0]
            if non_saturating:
                g_loss = float(np.mean(_softplus(-s_f)))
                d_sf = (sigmoid(s_f) - 1.0) / m
            else:
                g_loss = float(-np.mean(_softplus(s_f)))
                d_sf = -sigmoid(s_f) / m
            _, d_fake = disc.backward(d_cache, d_sf[:, None])
            d_glogit = d_fake * fake * (1.0 - fake)
            g_grads, _ = gen.backward(g_cache, d_glogit)
            gen.step(g_grads)

            hist.disc_loss.append(d_loss)
            hist.gen_loss.append(g_loss)
            hist.d_real.append(float(np.mean(sigmoid(s_real))))
            hist.d_fake.append(float(np.mean(sigmoid(s_fake))))
            streak = streak + 1 if d_loss < divergence_floor else 0
            if streak >= divergence_patience:
                raise GanDivergence(
                    f"discriminator loss below {divergence_floor} for {streak} steps "
                    f"(epoch {epoch}, D(real)={hist.d_real[-1]:.4f}, D(fake)={hist.d_fake[-1]:.4f})",
                    hist,
                )
    return hist
