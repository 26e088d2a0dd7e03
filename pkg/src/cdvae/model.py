"""Cross-domain VAE: encoders, decoders, speaker codes and the training objective.

Two frame-wise VAEs share one speaker-code table. Each encoder maps a frame
of its domain to a diagonal Gaussian posterior over the latent space; each
decoder maps ``[z; y]`` (latent sample and speaker code) back to a frame of
its domain. The CDVAE objective adds cross-domain reconstructions (latent of
one domain decoded by the other domain's decoder) and an L1 penalty between
the two posterior means. The single-domain baseline VAE is the same model
trained with only one encoder/decoder pair active.

The graph-based functions in this module are the reference implementation
(reverse-mode autodiff from :mod:`cdvae.nn`); training uses the fused kernels
from :mod:`cdvae.kernels`, which are tested against it.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import nn
from .nn import ParamStore, Rng, ShapeError, Tensor


class Domain(str, enum.Enum):
    SP = "sp"
    MCC = "mcc"


class Objective(str, enum.Enum):
    VAE_SP = "vae-sp"
    VAE_MCC = "vae-mcc"
    CDVAE = "cdvae"

    @property
    def code(self) -> int:
        return {Objective.CDVAE: 0, Objective.VAE_SP: 1, Objective.VAE_MCC: 2}[self]

    @property
    def domains(self) -> tuple[Domain, ...]:
        return {Objective.CDVAE: (Domain.SP, Domain.MCC),
                Objective.VAE_SP: (Domain.SP,),
                Objective.VAE_MCC: (Domain.MCC,)}[self]


@dataclass
class ModelConfig:
    sp_dim: int = 513
    mcc_dim: int = 35
    latent_dim: int = 128
    speaker_dim: int = 128
    enc_sp_hidden: tuple = (256, 128)
    enc_mcc_hidden: tuple = (128, 128)
    dec_sp_hidden: tuple = (128, 256)
    dec_mcc_hidden: tuple = (128, 128)
    slope: float = 0.2
    ln_eps: float = 1e-5
    code_init_std: float = 0.1

    def __post_init__(self):
        for name in ("enc_sp_hidden", "enc_mcc_hidden", "dec_sp_hidden", "dec_mcc_hidden"):
            setattr(self, name, tuple(int(w) for w in getattr(self, name)))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def dim(self, domain: Domain) -> int:
        return self.sp_dim if domain is Domain.SP else self.mcc_dim

    def widths(self, net: str) -> list[int]:
        """Layer widths of ``net`` from input to output."""
        L, S = self.latent_dim, self.speaker_dim
        return {
            "enc_sp": [self.sp_dim, *self.enc_sp_hidden, 2 * L],
            "enc_mcc": [self.mcc_dim, *self.enc_mcc_hidden, 2 * L],
            "dec_sp": [L + S, *self.dec_sp_hidden, self.sp_dim],
            "dec_mcc": [L + S, *self.dec_mcc_hidden, self.mcc_dim],
        }[net]


NETS = ("enc_sp", "enc_mcc", "dec_sp", "dec_mcc")


def encoder_name(domain: Domain) -> str:
    return f"enc_{Domain(domain).value}"


def decoder_name(domain: Domain) -> str:
    return f"dec_{Domain(domain).value}"


def param_shapes(config: ModelConfig, n_speakers: int) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    for net in NETS:
        w = config.widths(net)
        for i in range(len(w) - 2):
            shapes[f"{net}.h{i}.W"] = (w[i + 1], w[i])
            shapes[f"{net}.h{i}.b"] = (w[i + 1],)
            shapes[f"{net}.h{i}.gamma"] = (w[i + 1],)
            shapes[f"{net}.h{i}.beta"] = (w[i + 1],)
        shapes[f"{net}.out.W"] = (w[-1], w[-2])
        shapes[f"{net}.out.b"] = (w[-1],)
    shapes["speaker_codes"] = (n_speakers, config.speaker_dim)
    return shapes


class CdvaeParams:
    """All trainable tensors plus the speaker roster and model config."""

    def __init__(self, config: ModelConfig, speakers: Sequence[str],
                 store: ParamStore | None = None):
        self.config = config
        self.speakers = list(speakers)
        if len(set(self.speakers)) != len(self.speakers):
            raise ValueError("duplicate speaker ids")
        self._index = {s: i for i, s in enumerate(self.speakers)}
        shapes = param_shapes(config, len(self.speakers))
        if store is None:
            store = ParamStore(shapes)
        elif store.shapes != shapes:
            raise ShapeError("parameter store does not match the model config")
        self.store = store

    @classmethod
    def initialize(cls, config: ModelConfig, speakers: Sequence[str], rng: Rng) -> "CdvaeParams":
        params = cls(config, speakers)
        st = params.store
        for name in st.names():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "W":
                fan_in = st.shapes[name][1]
                st[name][...] = rng.normal(1.0 / np.sqrt(fan_in), st.shapes[name])
            elif leaf == "gamma":
                st[name][...] = 1.0
        st["speaker_codes"][...] = rng.normal(config.code_init_std, st.shapes["speaker_codes"])
        return params

    def speaker_index(self, speaker_id) -> int:
        try:
            return self._index[speaker_id]
        except KeyError:
            raise KeyError(f"unknown speaker id {speaker_id!r}") from None

    def code(self, speaker_id) -> np.ndarray:
        return self.store["speaker_codes"][self.speaker_index(speaker_id)]

    def n_hidden(self, net: str) -> int:
        return len(self.config.widths(net)) - 2

    def copy(self) -> "CdvaeParams":
        return CdvaeParams(self.config, self.speakers, self.store.copy())


@dataclass
class LatentDistribution:
    mean: np.ndarray
    log_var: np.ndarray


@dataclass
class LossWeights:
    wi: float = 1.0
    kld: float = 1.0
    cross: float = 1.0
    sim: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.wi, self.kld, self.cross, self.sim], dtype=np.float64)


@dataclass
class LossBreakdown:
    l_wi: float
    l_kld: float
    l_cross: float
    l_sim: float
    weights: LossWeights = field(default_factory=LossWeights)

    @property
    def total(self) -> float:
        w = self.weights
        return w.wi * self.l_wi + w.kld * self.l_kld + w.cross * self.l_cross + w.sim * self.l_sim

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.l_wi, self.l_kld, self.l_cross, self.l_sim, self.total)


# ---------------------------------------------------------------------------
# Inference (plain numpy)


def _run_net(params: CdvaeParams, net: str, x: np.ndarray) -> np.ndarray:
    st, cfg = params.store, params.config
    h = x
    for i in range(params.n_hidden(net)):
        h = nn.dense_forward(h, st[f"{net}.h{i}.W"], st[f"{net}.h{i}.b"])
        h = nn.leaky_relu(h, cfg.slope)
        h = nn.layer_norm(h, st[f"{net}.h{i}.gamma"], st[f"{net}.h{i}.beta"], cfg.ln_eps)
    return nn.dense_forward(h, st[f"{net}.out.W"], st[f"{net}.out.b"])


def _check_dim(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != n:
        raise ShapeError(f"{what}: expected last dimension {n}, got shape {x.shape}")
    return x


def encode(params: CdvaeParams, domain: Domain, x: np.ndarray) -> LatentDistribution:
    """Posterior mean and log-variance for one frame or a (T, D) batch."""
    domain = Domain(domain)
    x = _check_dim(x, params.config.dim(domain), f"encode[{domain.value}]")
    out = _run_net(params, encoder_name(domain), x)
    L = params.config.latent_dim
    return LatentDistribution(out[..., :L], out[..., L:])


def decode(params: CdvaeParams, domain: Domain, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    domain = Domain(domain)
    cfg = params.config
    z = _check_dim(z, cfg.latent_dim, "decode latent")
    y = _check_dim(y, cfg.speaker_dim, "decode speaker code")
    if z.ndim == 2 and y.ndim == 1:
        y = np.broadcast_to(y, (z.shape[0], y.shape[0]))
    if z.shape[:-1] != y.shape[:-1]:
        raise ShapeError(f"decode: latent {z.shape} vs speaker code {y.shape}")
    return _run_net(params, decoder_name(domain), np.concatenate([z, y], axis=-1))


def reparameterize(dist: LatentDistribution, eps: np.ndarray) -> np.ndarray:
    return dist.mean + np.exp(0.5 * dist.log_var) * eps


def recon_loss(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Half squared error: Gaussian negative log-likelihood with identity covariance, constant dropped."""
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"recon_loss: {x.shape} vs {x_hat.shape}")
    return 0.5 * float(np.sum((x - x_hat) ** 2))


def kld_loss(dist: LatentDistribution) -> float:
    """KL(N(mean, diag exp(log_var)) || N(0, I)) in closed form."""
    mu, lv = np.asarray(dist.mean), np.asarray(dist.log_var)
    return 0.5 * float(np.sum(mu ** 2 + np.exp(lv) - lv - 1.0))


def latent_sim_loss(mu_sp: np.ndarray, mu_mcc: np.ndarray) -> float:
    mu_sp, mu_mcc = np.asarray(mu_sp, dtype=np.float64), np.asarray(mu_mcc, dtype=np.float64)
    if mu_sp.shape != mu_mcc.shape:
        raise ShapeError(f"latent_sim_loss: {mu_sp.shape} vs {mu_mcc.shape}")
    return float(np.sum(np.abs(mu_sp - mu_mcc)))


# ---------------------------------------------------------------------------
# Objective: noise, graph, gradients


def draw_noise(rng: Rng, n_frames: int, latent_dim: int, objective: Objective,
               shared: bool = True) -> tuple:
    """Standard-normal draws for (sp within, sp cross, mcc within, mcc cross).

    With ``shared`` one draw per encoder feeds both of its decoding paths.
    Unused slots are ``None``. Draw order is fixed: SP before MCC, within
    before cross.
    """
    shape = (n_frames, latent_dim)
    out = []
    for domain in (Domain.SP, Domain.MCC):
        if domain not in objective.domains:
            out += [None, None]
            continue
        within = rng.standard_normal(shape)
        if objective is Objective.CDVAE and not shared:
            out += [within, rng.standard_normal(shape)]
        else:
            out += [within, within]
    return tuple(out)


def _as_batch(x, n: int, what: str) -> np.ndarray:
    x = _check_dim(x, n, what)
    return x[None, :] if x.ndim == 1 else x


def _speaker_indices(params: CdvaeParams, speaker_id, n_frames: int) -> np.ndarray:
    if isinstance(speaker_id, (str, int, np.integer)) and not isinstance(speaker_id, bool):
        ids = [speaker_id] * n_frames
    else:
        ids = list(speaker_id)
    if len(ids) != n_frames:
        raise ShapeError(f"{len(ids)} speaker ids for {n_frames} frames")
    return np.array([params.speaker_index(s) for s in ids], dtype=np.intp)


def _net_graph(leaves: dict[str, Tensor], params: CdvaeParams, net: str, x: Tensor) -> Tensor:
    cfg = params.config
    h = x
    for i in range(params.n_hidden(net)):
        p = f"{net}.h{i}"
        h = nn.dense(h, leaves[f"{p}.W"], leaves[f"{p}.b"])
        h = nn.lrelu(h, cfg.slope)
        h = nn.layer_norm_node(h, leaves[f"{p}.gamma"], leaves[f"{p}.beta"], cfg.ln_eps)
    return nn.dense(h, leaves[f"{net}.out.W"], leaves[f"{net}.out.b"])


def objective_graph(params: CdvaeParams, x_sp, x_mcc, speaker_idx: np.ndarray, noise: tuple,
                    objective: Objective = Objective.CDVAE, sim_on_sample: bool = False):
    """Build the batch-mean loss terms as autodiff nodes.

    Returns ``(terms, leaves)`` where ``terms`` maps ``wi``/``kld``/``cross``/
    ``sim`` to scalar nodes (absent terms are constants 0) and ``leaves`` maps
    parameter names to their leaf nodes.
    """
    objective = Objective(objective)
    cfg, st = params.config, params.store
    L = cfg.latent_dim
    leaves = {name: Tensor.leaf(st[name], name=name) for name in st.names()}
    inputs = {Domain.SP: x_sp, Domain.MCC: x_mcc}
    n = len(speaker_idx)
    inv_n = 1.0 / n
    codes = nn.gather_rows(leaves["speaker_codes"], speaker_idx)
    eps = {Domain.SP: noise[0:2], Domain.MCC: noise[2:4]}

    post, z_within, z_cross = {}, {}, {}
    for d in objective.domains:
        x = nn.constant(inputs[d], name=f"x_{d.value}")
        h = _net_graph(leaves, params, encoder_name(d), x)
        mu, lv = nn.columns(h, 0, L), nn.columns(h, L, 2 * L)
        sigma = nn.exp(lv * 0.5)
        post[d] = (mu, lv)
        z_within[d] = mu + sigma * eps[d][0]
        z_cross[d] = mu + sigma * eps[d][1]

    def recon(d_out: Domain, z: Tensor) -> Tensor:
        xhat = _net_graph(leaves, params, decoder_name(d_out), nn.concat(z, codes))
        return nn.square(xhat - inputs[d_out]).sum() * (0.5 * inv_n)

    zero = nn.constant(0.0)
    terms = {"wi": zero, "kld": zero, "cross": zero, "sim": zero}
    for d in objective.domains:
        mu, lv = post[d]
        terms["wi"] = terms["wi"] + recon(d, z_within[d])
        kl = (nn.square(mu) + nn.exp(lv) - lv - 1.0).sum() * (0.5 * inv_n)
        terms["kld"] = terms["kld"] + kl
    if objective is Objective.CDVAE:
        terms["cross"] = recon(Domain.MCC, z_cross[Domain.SP]) + recon(Domain.SP, z_cross[Domain.MCC])
        if sim_on_sample:
            a, b = z_within[Domain.SP], z_within[Domain.MCC]
        else:
            a, b = post[Domain.SP][0], post[Domain.MCC][0]
        terms["sim"] = (a - b).abs().sum() * inv_n
    return terms, leaves


def total_graph(terms: dict[str, Tensor], weights: LossWeights) -> Tensor:
    return (terms["wi"] * weights.wi + terms["kld"] * weights.kld
            + terms["cross"] * weights.cross + terms["sim"] * weights.sim)


def _prepare(params, x_sp, x_mcc, speaker_id, objective):
    cfg = params.config
    xs = {}
    n = None
    for d, x in ((Domain.SP, x_sp), (Domain.MCC, x_mcc)):
        if d in objective.domains:
            xs[d] = _as_batch(x, cfg.dim(d), f"objective input [{d.value}]")
            if n is not None and xs[d].shape[0] != n:
                raise ShapeError("SP and MCC batches must hold the same frames")
            n = xs[d].shape[0]
    return xs.get(Domain.SP), xs.get(Domain.MCC), _speaker_indices(params, speaker_id, n)


def cdvae_objective(params: CdvaeParams, x_sp, x_mcc, speaker_id, rng: Rng | None,
                    weights: LossWeights | None = None, *, objective: Objective = Objective.CDVAE,
                    sim_on_sample: bool = False, shared_noise: bool = True,
                    noise: tuple | None = None, with_grad: bool = False):
    """Evaluate the objective on a frame or batch of paired SP/MCC frames.

    Noise comes from ``rng`` (see :func:`draw_noise`) unless passed explicitly.
    Returns a :class:`LossBreakdown`, or ``(breakdown, grads)`` with
    ``with_grad`` where ``grads`` maps parameter names to arrays.
    """
    objective = Objective(objective)
    weights = weights or LossWeights()
    x_sp, x_mcc, idx = _prepare(params, x_sp, x_mcc, speaker_id, objective)
    if noise is None:
        noise = draw_noise(rng, len(idx), params.config.latent_dim, objective, shared_noise)
    terms, leaves = objective_graph(params, x_sp, x_mcc, idx, noise, objective, sim_on_sample)
    bd = LossBreakdown(*(float(terms[k].data) for k in ("wi", "kld", "cross", "sim")), weights=weights)
    if not with_grad:
        return bd
    return bd, nn.backprop(total_graph(terms, weights), leaves)


def vae_objective(params: CdvaeParams, domain: Domain, x, speaker_id, rng: Rng | None,
                  *, noise: tuple | None = None, with_grad: bool = False):
    """Single-domain baseline VAE objective (reconstruction + KL)."""
    objective = Objective.VAE_SP if Domain(domain) is Domain.SP else Objective.VAE_MCC
    x_sp, x_mcc = (x, None) if objective is Objective.VAE_SP else (None, x)
    return cdvae_objective(params, x_sp, x_mcc, speaker_id, rng, LossWeights(1, 1, 0, 0),
                           objective=objective, noise=noise, with_grad=with_grad)
