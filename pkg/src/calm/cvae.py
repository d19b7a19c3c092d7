"""Cross-modal variational autoencoder over anchor distributions.

The encoder maps a video-anchor distribution to a diagonal Gaussian
posterior (mean and log-variance heads), a latent is drawn with the
location-scale reparameterization z = mu + sigma * eps, and the decoder
maps the latent back to a probability vector that is trained to match the
text-anchor distribution. The variance head is parameterized as log
sigma^2 so positivity needs no clipping; the closed-form KL consumes the
same parameterization.

Shapes are batched throughout: distributions are rows of a [B, K] matrix
(B may be 1). Dropout masks and the Gaussian noise are passed in as plain
arrays so a step can be replayed exactly for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, NumericError
from .tensor import PROB_FLOOR, Tensor


@dataclass
class CvaeParams:
    """Encoder/decoder weights. Layer sizes: K -> H -> d -> H -> K."""

    enc_hidden_w: Tensor
    enc_hidden_b: Tensor
    enc_mu_w: Tensor
    enc_mu_b: Tensor
    enc_logvar_w: Tensor
    enc_logvar_b: Tensor
    dec_hidden_w: Tensor
    dec_hidden_b: Tensor
    dec_out_w: Tensor
    dec_out_b: Tensor
    n_anchors: int
    hidden: int
    latent: int

    @classmethod
    def init(cls, n_anchors: int, hidden: int, latent: int, rng: np.random.Generator) -> "CvaeParams":
        """Fan-in-scaled uniform weights, zero biases."""

        def w(fan_in: int, fan_out: int) -> Tensor:
            bound = float(np.sqrt(1.0 / fan_in))
            return T.tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)

        def b(n: int) -> Tensor:
            return T.zeros((n,), requires_grad=True)

        return cls(
            enc_hidden_w=w(n_anchors, hidden), enc_hidden_b=b(hidden),
            enc_mu_w=w(hidden, latent), enc_mu_b=b(latent),
            enc_logvar_w=w(hidden, latent), enc_logvar_b=b(latent),
            dec_hidden_w=w(latent, hidden), dec_hidden_b=b(hidden),
            dec_out_w=w(hidden, n_anchors), dec_out_b=b(n_anchors),
            n_anchors=n_anchors, hidden=hidden, latent=latent,
        )

    def named(self) -> dict[str, Tensor]:
        return {
            "enc_hidden_w": self.enc_hidden_w, "enc_hidden_b": self.enc_hidden_b,
            "enc_mu_w": self.enc_mu_w, "enc_mu_b": self.enc_mu_b,
            "enc_logvar_w": self.enc_logvar_w, "enc_logvar_b": self.enc_logvar_b,
            "dec_hidden_w": self.dec_hidden_w, "dec_hidden_b": self.dec_hidden_b,
            "dec_out_w": self.dec_out_w, "dec_out_b": self.dec_out_b,
        }


@dataclass
class LatentSample:
    """One reparameterized draw; z is exactly mu + exp(0.5*logvar) * eps."""

    mu: Tensor
    logvar: Tensor
    eps: np.ndarray
    z: Tensor


@dataclass
class Reconstruction:
    """Decoder output: a valid probability matrix [B, K]."""

    probs: Tensor

    def __post_init__(self):
        p = np.atleast_2d(self.probs.data)
        if (p < 0).any() or (np.abs(p.sum(axis=1) - 1.0) > 1e-9).any():
            raise ContractError("reconstruction rows must be probability vectors")


@dataclass
class CvaeNoise:
    """Replayable randomness for one forward pass."""

    eps: np.ndarray                     # [B, d]
    enc_mask: np.ndarray | None = None  # [B, H] inverted-dropout mask
    dec_mask: np.ndarray | None = None  # [B, H]

    @classmethod
    def sample(
        cls,
        batch: int,
        params: CvaeParams,
        rng_eps: np.random.Generator,
        rng_drop: np.random.Generator | None = None,
        dropout: float = 0.0,
    ) -> "CvaeNoise":
        eps = rng_eps.standard_normal((batch, params.latent))
        enc_mask = dec_mask = None
        if dropout > 0.0:
            if rng_drop is None:
                raise ContractError("dropout requested without a dropout stream")
            enc_mask = T.dropout_mask(rng_drop, (batch, params.hidden), dropout)
            dec_mask = T.dropout_mask(rng_drop, (batch, params.hidden), dropout)
        return cls(eps=eps, enc_mask=enc_mask, dec_mask=dec_mask)

    @classmethod
    def zero(cls, batch: int, params: CvaeParams) -> "CvaeNoise":
        return cls(eps=np.zeros((batch, params.latent)))


def _as_matrix(x: Tensor) -> Tensor:
    if x.data.ndim == 1:
        return T.reshape(x, (1, x.shape[0]))
    if x.data.ndim == 2:
        return x
    raise DimensionError(f"expected vector or matrix, got shape {x.shape}")


def encode(vp: Tensor, params: CvaeParams, enc_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Posterior parameters (mu, logvar) for a batch of distributions [B, K]."""
    x = _as_matrix(vp)
    if x.shape[1] != params.n_anchors:
        raise DimensionError(f"encoder expects width {params.n_anchors}, got {x.shape[1]}")
    h = T.tanh(T.add(T.matmul(x, params.enc_hidden_w), params.enc_hidden_b))
    if enc_mask is not None:
        h = T.apply_mask(h, enc_mask)
    mu = T.add(T.matmul(h, params.enc_mu_w), params.enc_mu_b)
    logvar = T.add(T.matmul(h, params.enc_logvar_w), params.enc_logvar_b)
    if not (np.isfinite(mu.data).all() and np.isfinite(logvar.data).all()):
        raise NumericError("encoder produced non-finite activations")
    return mu, logvar


def reparameterize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> LatentSample:
    """z = mu + exp(0.5 * logvar) * eps with eps held constant."""
    if mu.shape != logvar.shape or mu.shape != eps.shape:
        raise DimensionError(
            f"reparameterize shapes disagree: {mu.shape}, {logvar.shape}, {eps.shape}"
        )
    sigma = T.exp(T.scale(logvar, 0.5))
    z = T.add(mu, T.mul(sigma, T.const(eps)))
    return LatentSample(mu=mu, logvar=logvar, eps=eps, z=z)


def decode(z: Tensor, params: CvaeParams, dec_mask: np.ndarray | None = None) -> Reconstruction:
    """Latent [B, d] -> probability rows [B, K] (hidden tanh, output softmax)."""
    zm = _as_matrix(z)
    if zm.shape[1] != params.latent:
        raise DimensionError(f"decoder expects width {params.latent}, got {zm.shape[1]}")
    h = T.tanh(T.add(T.matmul(zm, params.dec_hidden_w), params.dec_hidden_b))
    if dec_mask is not None:
        h = T.apply_mask(h, dec_mask)
    logits = T.add(T.matmul(h, params.dec_out_w), params.dec_out_b)
    if not np.isfinite(logits.data).all():
        raise NumericError("decoder produced non-finite activations")
    return Reconstruction(probs=T.softmax_row(logits))


def rec_loss(target: Tensor, recon: Reconstruction) -> Tensor:
    """Batch-mean cross-entropy of the reconstruction under the target rows.

    The reconstruction is floored at 1e-12 before the log. The target is
    consumed as given; block its gradient upstream when it should act as a
    fixed label.
    """
    t = _as_matrix(target)
    p = _as_matrix(recon.probs)
    if t.shape != p.shape:
        raise DimensionError(f"target shape {t.shape} != reconstruction shape {p.shape}")
    rows = t.shape[0]
    ce = T.scale(T.sum_all(T.mul(t, T.log(T.clamp_min(p, PROB_FLOOR)))), -1.0 / rows)
    return ce


def kl_loss(mu: Tensor, logvar: Tensor) -> Tensor:
    """Batch-mean closed-form KL(N(mu, sigma^2) || N(0, I)).

    Per sample: 0.5 * sum_i (mu_i^2 + sigma_i^2 - log sigma_i^2 - 1).
    """
    m = _as_matrix(mu)
    lv = _as_matrix(logvar)
    if m.shape != lv.shape:
        raise DimensionError(f"kl_loss shapes disagree: {m.shape} vs {lv.shape}")
    rows = m.shape[0]
    inner = T.sub(T.add(T.mul(m, m), T.exp(lv)), lv)
    # subtract the constant 1 per element, then halve and batch-average
    total = T.add(T.sum_all(inner), T.const(np.asarray(-float(m.size))))
    return T.scale(total, 0.5 / rows)


@dataclass
class CvaeOutput:
    rec: Tensor
    kl: Tensor
    recon: Reconstruction
    latent: LatentSample


def cvae_forward(
    vp: Tensor,
    sp: Tensor,
    params: CvaeParams,
    noise: CvaeNoise,
    block_target_grad: bool = True,
) -> CvaeOutput:
    """encode -> reparameterize -> decode -> (rec, kl).

    vp and sp are paired distribution rows [B, K]. By default the
    reconstruction target is detached so the text distribution cannot be
    dragged toward whatever the decoder currently emits; pass
    block_target_grad=False to study the unblocked variant.
    """
    mu, logvar = encode(vp, params, enc_mask=noise.enc_mask)
    latent = reparameterize(mu, logvar, noise.eps)
    recon = decode(latent.z, params, dec_mask=noise.dec_mask)
    target = sp.detach() if block_target_grad else sp
    return CvaeOutput(
        rec=rec_loss(target, recon),
        kl=kl_loss(mu, logvar),
        recon=recon,
        latent=latent,
    )


def distribution_entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats with the same floor the losses use."""
    q = np.maximum(np.asarray(p, dtype=np.float64), PROB_FLOOR)
    return float(-(np.asarray(p) * np.log(q)).sum(axis=-1).mean())
