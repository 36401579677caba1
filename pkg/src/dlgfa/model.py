"""Generative and inference networks of the longitudinal group factor model.

Per timestep ``t`` (indices are 0-based here):

* prior      ``z_t ~ N(mu_0, sigma_0)`` with ``[mu_0, log sigma_0] = affine(h_{t-1})``
* encoder    ``q(z_t) = N(mu_z, sigma_z)`` from ``[phi_x(x_t); h_{t-1}]``
* decoder    group ``g`` reads ``u = W[t, g] @ z_t`` and ``h_{t-1}``:
             ``mean = A_g tanh([u; h_{t-1}]) + b_g``, ``sigma = exp(c_g)``
* recurrence ``h_t = GRU([phi_x(x_t); phi_z(z_t)], h_{t-1})``

All group decoders are stored as row blocks of shared arrays so that the
whole observation vector is decoded with a handful of tensor ops.  The
loading matrices live in the same :class:`ParamStore` under
``loadings.W`` with shape ``(T, G, p, K)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import DimensionError, SequenceLengthError

LOADINGS = "loadings.W"


@dataclass(frozen=True)
class GroupSpec:
    """Partition of the observed features into contiguous views."""

    dims: tuple[int, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 1:
            raise ValueError("GroupSpec needs at least one group")
        if any(d < 1 for d in dims):
            raise ValueError(f"group dimensions must be >= 1, got {dims}")
        names = tuple(self.names) if self.names else tuple(f"g{i + 1}" for i in range(len(dims)))
        if len(names) != len(dims):
            raise ValueError("one name per group is required")
        if len(set(names)) != len(names):
            raise ValueError("group names must be unique")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "names", names)

    @property
    def G(self) -> int:
        return len(self.dims)

    @property
    def d(self) -> int:
        return int(sum(self.dims))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    def slice(self, g: int) -> slice:
        off = self.offsets
        return slice(int(off[g]), int(off[g + 1]))

    @property
    def feature_group(self) -> np.ndarray:
        """Group index of every feature column."""
        return np.repeat(np.arange(self.G), self.dims)

    @classmethod
    def uniform(cls, G: int, size: int, prefix: str = "g") -> GroupSpec:
        return cls(tuple([size] * G), tuple(f"{prefix}{i + 1}" for i in range(G)))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes.

    ``x_feat``, ``z_feat`` and ``z_hidden`` default to ``H``.  A positive
    ``encoder_hidden`` inserts one relu layer in the encoder.
    ``decoders_per_timestep`` gives every timestep its own decoder weights
    instead of sharing them across time (loadings are always per timestep).
    """

    K: int
    H: int
    p: int
    T: int
    group_spec: GroupSpec
    static_mode: bool = False
    x_feat: int | None = None
    z_feat: int | None = None
    z_hidden: int | None = None
    encoder_hidden: int = 0
    decoders_per_timestep: bool = False
    init_scale_W: float = 0.01

    def __post_init__(self):
        for key in ("K", "H", "p", "T"):
            if int(getattr(self, key)) < 1:
                raise ValueError(f"{key} must be >= 1")
        for key in ("x_feat", "z_feat", "z_hidden"):
            if getattr(self, key) is None:
                object.__setattr__(self, key, int(self.H))
            elif int(getattr(self, key)) < 1:
                raise ValueError(f"{key} must be >= 1")
        if self.encoder_hidden < 0:
            raise ValueError("encoder_hidden must be >= 0")

    @property
    def d(self) -> int:
        return self.group_spec.d

    @property
    def G(self) -> int:
        return self.group_spec.G

    def to_dict(self) -> dict:
        out = asdict(self)
        out["group_spec"] = {"dims": list(self.group_spec.dims), "names": list(self.group_spec.names)}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        data = dict(data)
        gs = data.pop("group_spec")
        return cls(group_spec=GroupSpec(tuple(gs["dims"]), tuple(gs["names"])), **data)


@dataclass
class GaussianParams:
    """Diagonal Gaussian; ``scale`` is the standard deviation."""

    mean: Tensor
    scale: Tensor

    def __post_init__(self):
        if self.mean.shape != self.scale.shape:
            raise DimensionError(f"mean {self.mean.shape} and scale {self.scale.shape} differ")

    def __getitem__(self, index) -> GaussianParams:
        return GaussianParams(self.mean[index], self.scale[index])


def column_norms(values: np.ndarray, axis: int = -2, keepdims: bool = False) -> np.ndarray:
    """Euclidean norms along ``axis``, rescaled so tiny or huge entries
    neither underflow nor overflow when squared."""
    scale = np.max(np.abs(values), axis=axis, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    out = safe * np.sqrt(np.sum((values / safe) ** 2, axis=axis, keepdims=True))
    out = np.where(scale > 0, out, 0.0)
    return out if keepdims else np.squeeze(out, axis=axis)


@dataclass
class LoadingMatrices:
    """View of the ``(T, G, p, K)`` loading array; ``W[t][g]`` is ``p x K``."""

    values: np.ndarray

    def __getitem__(self, t: int) -> np.ndarray:
        return self.values[t]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def column_norms(self) -> np.ndarray:
        """Euclidean norm of every column, shape ``(T, G, K)``."""
        return column_norms(self.values, axis=2)

    def zero_columns(self) -> np.ndarray:
        return np.all(self.values == 0.0, axis=2)


@dataclass
class StepRecord:
    prior: GaussianParams
    posterior: GaussianParams
    z: Tensor
    likelihood: GaussianParams
    h: Tensor
    group_spec: GroupSpec = field(repr=False)

    @property
    def group_likelihoods(self) -> list[GaussianParams]:
        return [self.likelihood[..., self.group_spec.slice(g)] for g in range(self.group_spec.G)]


def _init_weight(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))


class DlgfaModel:
    """All learnable parameters plus the per-timestep network functions.

    Inputs may be single vectors or ``(B, features)`` batches.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        c = config
        P = self.params

        def linear(name, n_out, n_in):
            P.add(f"{name}.weight", _init_weight(rng, n_out, n_in))
            P.add(f"{name}.bias", np.zeros(n_out))

        linear("phi_x", c.x_feat, c.d)
        linear("phi_z.hidden", c.z_hidden, c.K)
        linear("phi_z.out", c.z_feat, c.z_hidden)
        linear("prior.mean", c.K, c.H)
        linear("prior.log_scale", c.K, c.H)
        enc_in = c.x_feat + c.H
        if c.encoder_hidden:
            linear("encoder.hidden", c.encoder_hidden, enc_in)
            enc_in = c.encoder_hidden
        linear("encoder.mean", c.K, enc_in)
        linear("encoder.log_scale", c.K, enc_in)
        gru_in = c.x_feat + c.z_feat
        linear("gru.input", 3 * c.H, gru_in)
        linear("gru.hidden", 3 * c.H, c.H)

        lead = (c.T,) if c.decoders_per_timestep else ()
        P.add("decoder.weight_u", rng.normal(0.0, 1.0 / np.sqrt(c.p + c.H), size=lead + (c.d, c.p)))
        P.add("decoder.weight_h", rng.normal(0.0, 1.0 / np.sqrt(c.p + c.H), size=lead + (c.d, c.H)))
        P.add("decoder.bias", np.zeros(lead + (c.d,)))
        P.add("decoder.log_scale", np.zeros(lead + (c.d,)))

        P.add(LOADINGS, rng.normal(0.0, c.init_scale_W, size=(c.T, c.G, c.p, c.K)))
        self._feature_group = c.group_spec.feature_group

    # ------------------------------------------------------------------

    @property
    def loadings(self) -> LoadingMatrices:
        return LoadingMatrices(self.params[LOADINGS].data)

    def network_param_names(self) -> list[str]:
        return [n for n in self.params.names() if n != LOADINGS]

    def zero_(self) -> DlgfaModel:
        """Set every parameter (loadings included) to zero, in place."""
        for _, p in self.params.items():
            p.data[...] = 0.0
        return self

    def _lin(self, name: str, x) -> Tensor:
        return ad.affine(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def _check_width(self, x: Tensor, n: int, what: str) -> None:
        if x.shape[-1] != n:
            raise DimensionError(f"{what}: expected trailing dimension {n}, got shape {x.shape}")

    def _hidden(self, h_prev) -> Tensor:
        h_prev = ad.as_tensor(h_prev)
        self._check_width(h_prev, self.config.H, "h_prev")
        if self.config.static_mode:
            return Tensor(np.zeros_like(h_prev.data))
        return h_prev

    def _decoder_param(self, name: str, t: int) -> Tensor:
        p = self.params[f"decoder.{name}"]
        return ad.take(p, t, axis=0) if self.config.decoders_per_timestep else p

    def _check_t(self, t: int) -> None:
        if not 0 <= t < self.config.T:
            raise DimensionError(f"timestep {t} outside [0, {self.config.T})")

    # ------------------------------------------------------------------

    def feature_extract_x(self, x_t) -> Tensor:
        x_t = ad.as_tensor(x_t)
        self._check_width(x_t, self.config.d, "x_t")
        return self._lin("phi_x", x_t)

    def feature_extract_z(self, z_t) -> Tensor:
        z_t = ad.as_tensor(z_t)
        self._check_width(z_t, self.config.K, "z_t")
        return self._lin("phi_z.out", ad.relu(self._lin("phi_z.hidden", z_t)))

    def prior_params(self, h_prev) -> GaussianParams:
        h = self._hidden(h_prev)
        return GaussianParams(self._lin("prior.mean", h), ad.exp(self._lin("prior.log_scale", h)))

    def encode(self, x_t, h_prev, features: Tensor | None = None) -> GaussianParams:
        h = self._hidden(h_prev)
        fx = self.feature_extract_x(x_t) if features is None else features
        inp = ad.concat([fx, h], axis=-1)
        if self.config.encoder_hidden:
            inp = ad.relu(self._lin("encoder.hidden", inp))
        return GaussianParams(self._lin("encoder.mean", inp), ad.exp(self._lin("encoder.log_scale", inp)))

    @staticmethod
    def reparameterize(q: GaussianParams, noise) -> Tensor:
        noise = ad.as_tensor(noise)
        if noise.shape != q.mean.shape:
            raise DimensionError(f"noise shape {noise.shape} != mean shape {q.mean.shape}")
        return q.mean + q.scale * noise

    def decode_group(self, g: int, t: int, z_t, h_prev) -> GaussianParams:
        """Likelihood head of a single group (reference path, not vectorised)."""
        c = self.config
        if not 0 <= g < c.G:
            raise DimensionError(f"group {g} outside [0, {c.G})")
        self._check_t(t)
        z_t = ad.as_tensor(z_t)
        self._check_width(z_t, c.K, "z_t")
        h = self._hidden(h_prev)
        W_tg = ad.take(ad.take(self.params[LOADINGS], t, axis=0), g, axis=0)
        rows = np.arange(c.group_spec.slice(g).start, c.group_spec.slice(g).stop)
        u = _matvec(W_tg, z_t)
        weight = ad.concat(
            [ad.take(self._decoder_param("weight_u", t), rows, 0), ad.take(self._decoder_param("weight_h", t), rows, 0)],
            axis=1,
        )
        bias = ad.take(self._decoder_param("bias", t), rows, 0)
        mean = ad.affine(ad.tanh(ad.concat([u, h], axis=-1)), weight, bias)
        log_scale = ad.take(self._decoder_param("log_scale", t), rows, 0)
        scale = ad.broadcast_to(ad.exp(log_scale), mean.shape)
        return GaussianParams(mean, scale)

    def decode(self, t: int, z_t, h_prev) -> GaussianParams:
        """Likelihood heads of all groups at timestep ``t``, concatenated over features."""
        c = self.config
        self._check_t(t)
        z_t = ad.as_tensor(z_t)
        self._check_width(z_t, c.K, "z_t")
        h = self._hidden(h_prev)
        W_t = ad.take(self.params[LOADINGS], t, axis=0)  # (G, p, K)
        if z_t.ndim == 1:
            u = ad.einsum("gpk,k->gp", W_t, z_t)
            per_feature = ad.take(ad.tanh(u), self._feature_group, axis=0)  # (d, p)
            mean_u = ad.sum(per_feature * self._decoder_param("weight_u", t), axis=-1)
        else:
            u = ad.einsum("gpk,bk->bgp", W_t, z_t)
            per_feature = ad.take(ad.tanh(u), self._feature_group, axis=1)  # (B, d, p)
            mean_u = ad.einsum("bdp,dp->bd", per_feature, self._decoder_param("weight_u", t))
        mean = mean_u + ad.affine(ad.tanh(h), self._decoder_param("weight_h", t), self._decoder_param("bias", t))
        scale = ad.broadcast_to(ad.exp(self._decoder_param("log_scale", t)), mean.shape)
        return GaussianParams(mean, scale)

    def recurrence_step(self, x_t, z_t, h_prev, features: Tensor | None = None) -> Tensor:
        c = self.config
        h = self._hidden(h_prev)
        fx = self.feature_extract_x(x_t) if features is None else features
        fz = self.feature_extract_z(z_t)
        if c.static_mode:
            return Tensor(np.zeros(fx.shape[:-1] + (c.H,)))
        gi = self._lin("gru.input", ad.concat([fx, fz], axis=-1))
        gh = self._lin("gru.hidden", h)
        H = c.H
        r = ad.sigmoid(gi[..., :H] + gh[..., :H])
        update = ad.sigmoid(gi[..., H : 2 * H] + gh[..., H : 2 * H])
        cand = ad.tanh(gi[..., 2 * H :] + r * gh[..., 2 * H :])
        return (1.0 - update) * cand + update * h

    # ------------------------------------------------------------------

    def forward_sequence(self, batch, noise) -> list[StepRecord]:
        """Run prior, encoder, decoder and recurrence over a ``(T, B, d)`` batch.

        ``noise`` has shape ``(T, B, K)``; an all-zero noise array makes ``z``
        the posterior mean.
        """
        c = self.config
        batch = np.asarray(batch, dtype=np.float64)
        noise = np.asarray(noise, dtype=np.float64)
        if batch.ndim != 3 or batch.shape[2] != c.d:
            raise DimensionError(f"batch must be (T, B, {c.d}), got {batch.shape}")
        T, B, _ = batch.shape
        if T > c.T:
            raise SequenceLengthError(f"sequence length {T} exceeds model T={c.T}")
        if noise.shape != (T, B, c.K):
            raise DimensionError(f"noise must be {(T, B, c.K)}, got {noise.shape}")
        h = Tensor(np.zeros((B, c.H)))
        records = []
        for t in range(T):
            x_t = Tensor(batch[t])
            fx = self.feature_extract_x(x_t)
            prior = self.prior_params(h)
            posterior = self.encode(x_t, h, features=fx)
            z = self.reparameterize(posterior, noise[t])
            lik = self.decode(t, z, h)
            h_next = self.recurrence_step(x_t, z, h, features=fx)
            records.append(StepRecord(prior, posterior, z, lik, h_next, c.group_spec))
            h = h_next
        return records


def _matvec(W: Tensor, z: Tensor) -> Tensor:
    if z.ndim == 1:
        return ad.einsum("pk,k->p", W, z)
    return ad.einsum("pk,bk->bp", W, z)
