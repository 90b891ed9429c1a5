"""RealNVP density model over constraint-input features, plus the
trajectory-dissimilarity weights derived from it.

The model stacks affine coupling layers over standardized inputs and trains
by minibatch gradient descent on the negative log-likelihood. A trajectory's
weight is the fraction of its steps whose NLL exceeds mean + std of the
NLL on the fitting data, so trajectories that look like the fitting set get
weights near 0 and clearly dissimilar ones near 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from . import nn

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class Coupling:
    mask: np.ndarray  # 1 = conditioning coordinate passed through unchanged
    scale_net: nn.Mlp  # tanh head, output doubled
    translate_net: nn.Mlp


class RealNvpDensity(BaseEstimator):
    """Normalizing-flow density estimator with affine coupling layers.

    Parameters mirror the training recipe: ``n_couplings`` layers whose
    scale/translate conditioners are relu MLPs with ``hidden`` units, fit for
    ``epochs`` passes of minibatch Adam. ``discrete_dims`` marks integer-valued
    feature columns that receive U(-0.25, 0.25) dequantization noise during
    fitting only. Zero-initialized conditioner output layers make the
    untrained flow the identity map on standardized inputs.
    """

    def __init__(self, n_couplings=4, hidden=(64, 64), epochs=200, batch_size=64,
                 learning_rate=5e-4, discrete_dims=(), random_state=None):
        self.n_couplings = n_couplings
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.discrete_dims = discrete_dims
        self.random_state = random_state

    def _build(self, d: int, rng: np.random.Generator) -> list[Coupling]:
        couplings = []
        sizes = [d, *self.hidden, d]
        for k in range(self.n_couplings):
            mask = ((np.arange(d) + k) % 2 == 0).astype(float)
            scale = nn.init_mlp(sizes, rng, output_activation="tanh", output_gain=0.0)
            translate = nn.init_mlp(sizes, rng, output_activation="identity", output_gain=0.0)
            couplings.append(Coupling(mask, scale, translate))
        return couplings

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        n, d = X.shape
        rng = np.random.default_rng(self.random_state)
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        degenerate = scale == 0.0
        if degenerate.any():
            warnings.warn(
                f"features {np.flatnonzero(degenerate).tolist()} have zero variance; "
                "standardizing with std 1",
                RuntimeWarning,
            )
            scale = np.where(degenerate, 1.0, scale)
        self.scale_ = scale
        self.couplings_ = self._build(d, rng)
        opts = [(nn.make_adam(self.learning_rate), nn.make_adam(self.learning_rate))
                for _ in self.couplings_]
        discrete = np.asarray(self.discrete_dims, dtype=int)
        if discrete.size and (discrete.min() < 0 or discrete.max() >= d):
            raise ValueError("discrete_dims outside feature range")

        history = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_nll = []
            for lo in range(0, n, self.batch_size):
                xb = X[order[lo:lo + self.batch_size]].copy()
                if discrete.size:
                    xb[:, discrete] += rng.uniform(-0.25, 0.25, size=(xb.shape[0], discrete.size))
                zb = (xb - self.mean_) / self.scale_
                nll = self._nll_step(zb, opts)
                epoch_nll.append(nll)
            history.append(float(np.mean(epoch_nll)))
        self.nll_history_ = history
        self.n_features_in_ = d
        return self

    def _forward_couplings(self, z: np.ndarray, record: bool):
        """Run standardized inputs through the couplings; returns the latent,
        per-sample log|det J|, and (optionally) the tapes for backward."""
        logdet = np.zeros(z.shape[0])
        tapes = []
        for cp in self.couplings_:
            um = z * cp.mask
            s_raw, tape_s = nn.forward(cp.scale_net, um)
            t, tape_t = nn.forward(cp.translate_net, um)
            s = 2.0 * s_raw
            inv_mask = 1.0 - cp.mask
            out = cp.mask * z + inv_mask * (z * np.exp(s) + t)
            logdet += (inv_mask * s).sum(axis=1)
            if record:
                tapes.append((z, s, tape_s, tape_t))
            z = out
        return z, logdet, tapes

    def _nll_step(self, z0: np.ndarray, opts) -> float:
        """One minibatch: mean NLL, exact backward through the couplings,
        one Adam step per conditioner network."""
        b, d = z0.shape
        z, logdet, tapes = self._forward_couplings(z0, record=True)
        log_base = -0.5 * (z**2).sum(axis=1) - 0.5 * d * LOG_2PI
        nll = float(np.mean(-(log_base + logdet)))

        g = z / b  # d(mean NLL)/d(latent)
        pending = []
        for k in range(len(self.couplings_) - 1, -1, -1):
            cp = self.couplings_[k]
            u, s, tape_s, tape_t = tapes[k]
            inv_mask = 1.0 - cp.mask
            exp_s = np.exp(s)
            dt = g * inv_mask
            ds = g * inv_mask * u * exp_s - inv_mask / b  # chain through output plus logdet term
            grads_s = nn.backward(cp.scale_net, tape_s, 2.0 * ds)
            grads_t = nn.backward(cp.translate_net, tape_t, dt)
            g = g * cp.mask + g * inv_mask * exp_s + (grads_s.wrt_input + grads_t.wrt_input) * cp.mask
            pending.append((k, grads_s, grads_t))
        for k, grads_s, grads_t in pending:
            cp = self.couplings_[k]
            opt_s, opt_t = opts[k]
            nn.opt_step(cp.scale_net, grads_s, opt_s)
            nn.opt_step(cp.translate_net, grads_t, opt_t)
        return nll

    def score_samples(self, X) -> np.ndarray:
        """Log density of each row in the original feature space."""
        self._check_fitted()
        X = check_array(X, dtype=float)
        z0 = (X - self.mean_) / self.scale_
        z, logdet, _ = self._forward_couplings(z0, record=False)
        d = X.shape[1]
        log_base = -0.5 * (z**2).sum(axis=1) - 0.5 * d * LOG_2PI
        return log_base + logdet - np.log(self.scale_).sum()

    def to_latent(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_array(X, dtype=float)
        z, _, _ = self._forward_couplings((X - self.mean_) / self.scale_, record=False)
        return z

    def from_latent(self, Z) -> np.ndarray:
        """Inverse of :meth:`to_latent`; exact up to float roundoff."""
        self._check_fitted()
        z = check_array(Z, dtype=float)
        for cp in reversed(self.couplings_):
            vm = z * cp.mask
            s_raw, _ = nn.forward(cp.scale_net, vm)
            t, _ = nn.forward(cp.translate_net, vm)
            s = 2.0 * s_raw
            inv_mask = 1.0 - cp.mask
            z = cp.mask * z + inv_mask * (z - t) * np.exp(-s)
        return z * self.scale_ + self.mean_

    def _check_fitted(self):
        if not hasattr(self, "couplings_"):
            raise NotFittedError("this RealNvpDensity instance is not fitted yet")


def save_flow(path, model: RealNvpDensity) -> None:
    """Checkpoint: per-coupling network tensors plus standardization vectors."""
    model._check_fitted()
    arrays = {
        "n_couplings": np.array(len(model.couplings_)),
        "mean": model.mean_,
        "scale": model.scale_,
    }
    for k, cp in enumerate(model.couplings_):
        arrays[f"mask_{k}"] = cp.mask
        for tag, net in (("s", cp.scale_net), ("t", cp.translate_net)):
            arrays[f"c{k}_{tag}_n_layers"] = np.array(len(net.layers))
            for i, layer in enumerate(net.layers):
                arrays[f"c{k}_{tag}_weight_{i}"] = layer.weight
                arrays[f"c{k}_{tag}_bias_{i}"] = layer.bias
                arrays[f"c{k}_{tag}_activation_{i}"] = np.array(layer.activation)
    np.savez(path, **arrays)


def load_flow(path) -> RealNvpDensity:
    with np.load(path) as data:
        n_couplings = int(data["n_couplings"])
        model = RealNvpDensity(n_couplings=n_couplings)
        model.mean_ = np.array(data["mean"], dtype=float)
        model.scale_ = np.array(data["scale"], dtype=float)
        couplings = []
        for k in range(n_couplings):
            nets = {}
            for tag in ("s", "t"):
                n_layers = int(data[f"c{k}_{tag}_n_layers"])
                nets[tag] = nn.Mlp([
                    nn.DenseLayer(
                        np.array(data[f"c{k}_{tag}_weight_{i}"], dtype=float),
                        np.array(data[f"c{k}_{tag}_bias_{i}"], dtype=float),
                        str(data[f"c{k}_{tag}_activation_{i}"]),
                    )
                    for i in range(n_layers)
                ])
            couplings.append(Coupling(np.array(data[f"mask_{k}"], dtype=float),
                                      nets["s"], nets["t"]))
        model.couplings_ = couplings
        model.n_features_in_ = model.mean_.shape[0]
    return model


def dataset_features(env, trajectories) -> np.ndarray:
    """Stack the constraint-input features of every step in the dataset."""
    parts = [env.constraint_inputs(t.states, t.actions) for t in trajectories]
    return np.vstack(parts)


def fit_expert_flow(env, expert_trajectories, epochs=200, batch_size=64,
                    learning_rate=5e-4, seed=0) -> RealNvpDensity:
    """Fit the density model on all expert steps (noise-free evaluation later)."""
    model = RealNvpDensity(
        discrete_dims=env.discrete_feature_dims,
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        random_state=seed,
    )
    return model.fit(dataset_features(env, expert_trajectories))


def nll_stats(model: RealNvpDensity, env, trajectories) -> tuple[float, float]:
    """Mean and (population) std of per-step NLL over the dataset."""
    nll = -model.score_samples(dataset_features(env, trajectories))
    return float(nll.mean()), float(nll.std())


def trajectory_weight(model: RealNvpDensity, env, trajectory, stats) -> float:
    """Fraction of the trajectory's steps with NLL above mean + std of the
    fitting data; 0 for expert-like trajectories, up to 1 for dissimilar ones."""
    mu, sigma = stats
    nll = -model.score_samples(env.constraint_inputs(trajectory.states, trajectory.actions))
    return float(np.mean(nll > mu + sigma))


def trajectory_weights(model: RealNvpDensity, env, trajectories, stats) -> np.ndarray:
    return np.array([trajectory_weight(model, env, t, stats) for t in trajectories])
