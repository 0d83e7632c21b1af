"""The coupled-bottleneck model and its training loop.

Two symmetric halves are trained as one network. Each half encodes its own
dataset into a noisy bottleneck, decodes the bottleneck into a prediction of
the *other* dataset through an additive decoder (one subnet per bottleneck
neuron, summed, plus a global bias), and predicts the other half's bottleneck
through a diagonal affine cross-map. The combined objective is the sum of the
six resulting terms:

    recon_x + recon_y + beta * (kl_x + kl_y) + gamma * (cross_x + cross_y)

Reconstruction and cross distances are dimension-pooled MSE on per-column
standardized data (train_cae standardizes internally and the model carries
the statistics), so the reconstruction term reads as "unexplained variance
fraction". The divergence term entering the combined objective is the
closed-form divergence from the standard normal averaged per neuron, so
beta trades off variance fractions against mean per-neuron information
regardless of layer widths; summing over neurons against an unnormalized
MSE instead lets beta = 1 crush the bottleneck outright. During training
the decoder and cross-map consume noisy samples; every evaluation uses the
noiseless encoder means.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics
from .datagen import TRAIN, VAL, DatasetPair
from .errors import DataError, DimensionError, NumericalError

TERM_NAMES = ("recon_x", "kl_x", "cross_x", "recon_y", "kl_y", "cross_y")


@dataclass
class CaeConfig:
    bottleneck_dim: int = 4
    encoder_hidden: tuple[int, ...] = (64,)
    decoder_hidden_per_variable: tuple[int, ...] = (32,)
    beta: float = 0.01
    gamma: float = 1.0
    epochs: int = 1500
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    kl_threshold: float = metrics.DEFAULT_KL_THRESHOLD
    training_mode: str = "combined"  # "combined" | "alternating" (baseline)
    cross_map: str = "diagonal"  # "diagonal" | "mlp" (unconstrained variant)
    cross_hidden: tuple[int, ...] = (16,)
    early_stop_patience: int = 0  # epochs without val improvement; 0 disables
    early_stop_min_delta: float = 1e-5

    def __post_init__(self):
        if self.bottleneck_dim < 1:
            raise ValueError("bottleneck_dim must be >= 1")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be >= 0")
        if self.training_mode not in ("combined", "alternating"):
            raise ValueError(f"unknown training_mode: {self.training_mode}")
        if self.cross_map not in ("diagonal", "mlp"):
            raise ValueError(f"unknown cross_map: {self.cross_map}")
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.decoder_hidden_per_variable = tuple(self.decoder_hidden_per_variable)
        self.cross_hidden = tuple(self.cross_hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("encoder_hidden", "decoder_hidden_per_variable", "cross_hidden"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CaeConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


def _block_mask(d: int, in_per: int, out_per: int) -> np.ndarray:
    m = np.zeros((d * in_per, d * out_per))
    for i in range(d):
        m[i * in_per:(i + 1) * in_per, i * out_per:(i + 1) * out_per] = 1.0
    return m


class CaeHalf:
    """One half: encoder to (mu, logvar), additive decoder, cross-map.

    The decoder's hidden layers carry block-diagonal masks so that hidden
    unit block i sees only bottleneck neuron i; the unmasked output layer
    then sums the per-neuron blocks, which *is* the additive decomposition.
    """

    def __init__(self, name: str, input_dim: int, target_dim: int,
                 config: CaeConfig, rng: np.random.Generator):
        self.name = name
        self.input_dim = input_dim
        self.target_dim = target_dim
        self.config = config
        d = config.bottleneck_dim
        self.store = ad.ParamStore()

        self.enc_spec = ad.MlpSpec((input_dim, *config.encoder_hidden, 2 * d))
        ad.init_mlp(self.enc_spec, self.store, rng, "enc.")

        widths_per = (1, *config.decoder_hidden_per_variable)
        self.dec_masks: list[np.ndarray] = []
        for i in range(len(widths_per) - 1):
            in_per, out_per = widths_per[i], widths_per[i + 1]
            mask = _block_mask(d, in_per, out_per)
            bound = 1.0 / np.sqrt(in_per)
            w = rng.uniform(-bound, bound, size=mask.shape) * mask
            b = rng.uniform(-bound, bound, size=mask.shape[1])
            self.store.add(f"dec.w{i}", w)
            self.store.add(f"dec.b{i}", b)
            self.dec_masks.append(mask)
        h_last = widths_per[-1]
        bound = 1.0 / np.sqrt(d * h_last)
        self.store.add("dec.w_out", rng.uniform(-bound, bound, size=(d * h_last, target_dim)))
        self.store.add("dec.bias", np.zeros(target_dim))

        if config.cross_map == "diagonal":
            self.store.add("cross.a", 0.1 * rng.uniform(-1.0, 1.0, size=(d,)))
            self.store.add("cross.b", np.zeros(d))
            self.cross_spec = None
        else:
            self.cross_spec = ad.MlpSpec((d, *config.cross_hidden, d))
            ad.init_mlp(self.cross_spec, self.store, rng, "cross.")

    # --- encoder -----------------------------------------------------------

    def encode(self, inputs) -> tuple[ad.Tensor, ad.Tensor]:
        out = ad.mlp_forward(self.enc_spec, self.store, inputs, "enc.")
        d = self.config.bottleneck_dim
        mu = ad.cols(out, 0, d)
        logvar = ad.clip(ad.cols(out, d, 2 * d), ad.LOGVAR_MIN, ad.LOGVAR_MAX)
        return mu, logvar

    def encode_np(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu, logvar = self.encode(ad.Tensor(inputs))
        return mu.data, logvar.data

    def encode_mean(self, inputs: np.ndarray) -> np.ndarray:
        return self.encode_np(inputs)[0]

    # --- additive decoder --------------------------------------------------

    def decode(self, z) -> ad.Tensor:
        z = ad.constant(z)
        if z.data.shape[1] != self.config.bottleneck_dim:
            raise DimensionError(
                f"decoder expects {self.config.bottleneck_dim} bottleneck "
                f"columns, got {z.data.shape[1]}")
        h = z
        for i, mask in enumerate(self.dec_masks):
            w = ad.mul(self.store[f"dec.w{i}"], mask)
            h = ad.tanh(ad.add(ad.matmul(h, w), self.store[f"dec.b{i}"]))
        return ad.add(ad.matmul(h, self.store["dec.w_out"]), self.store["dec.bias"])

    def decode_np(self, z: np.ndarray) -> np.ndarray:
        return self.decode(ad.Tensor(z)).data

    def decode_contributions(self, z: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Per-neuron decoder contributions and the global bias; their sum
        reproduces decode exactly."""
        d = self.config.bottleneck_dim
        widths_per = (1, *self.config.decoder_hidden_per_variable)
        contribs = []
        for i in range(d):
            h = z[:, i:i + 1]
            for li in range(len(widths_per) - 1):
                in_per, out_per = widths_per[li], widths_per[li + 1]
                w = self.store[f"dec.w{li}"].data[
                    i * in_per:(i + 1) * in_per, i * out_per:(i + 1) * out_per]
                b = self.store[f"dec.b{li}"].data[i * out_per:(i + 1) * out_per]
                h = np.tanh(h @ w + b)
            h_last = widths_per[-1]
            w_out = self.store["dec.w_out"].data[i * h_last:(i + 1) * h_last, :]
            contribs.append(h @ w_out)
        return contribs, self.store["dec.bias"].data.copy()

    # --- cross-map ---------------------------------------------------------

    def cross_predict(self, z) -> ad.Tensor:
        z = ad.constant(z)
        if self.cross_spec is not None:
            return ad.mlp_forward(self.cross_spec, self.store, z, "cross.")
        return ad.add(ad.mul(z, self.store["cross.a"]), self.store["cross.b"])

    def cross_predict_np(self, z: np.ndarray) -> np.ndarray:
        return self.cross_predict(ad.Tensor(z)).data

    def cross_params(self) -> tuple[np.ndarray, np.ndarray]:
        if self.cross_spec is not None:
            raise DataError("cross-map parameters are only defined for the diagonal map")
        return self.store["cross.a"].data.copy(), self.store["cross.b"].data.copy()


@dataclass
class CaeModel:
    net_x: CaeHalf
    net_y: CaeHalf
    config: CaeConfig
    norm: dict | None = None  # per-column means/stds captured at training

    def standardized_view(self, pair: DatasetPair) -> DatasetPair:
        """The pair in the model's training units (identity if untrained)."""
        if self.norm is None:
            return pair
        x = (pair.x - self.norm["x_mean"]) / self.norm["x_std"]
        y = (pair.y - self.norm["y_mean"]) / self.norm["y_std"]
        return DatasetPair(x, y, pair.split, pair.ground_truth)

    def informative_masks(self, inputs_x: np.ndarray, inputs_y: np.ndarray,
                          threshold: float | None = None,
                          ) -> tuple[metrics.InformativeMask, metrics.InformativeMask]:
        thr = self.config.kl_threshold if threshold is None else threshold
        mu_x, lv_x = self.net_x.encode_np(inputs_x)
        mu_y, lv_y = self.net_y.encode_np(inputs_y)
        return (metrics.informative_mask(metrics.per_neuron_kl(mu_x, lv_x), thr),
                metrics.informative_mask(metrics.per_neuron_kl(mu_y, lv_y), thr))

    def save(self, dirpath) -> None:
        arrays = {f"x.{n}": a for n, a in self.net_x.store.arrays().items()}
        arrays.update({f"y.{n}": a for n, a in self.net_y.store.arrays().items()})
        if self.norm is not None:
            arrays.update({f"norm.{k}": v for k, v in self.norm.items()})
        extra = {
            "kind": "cae",
            "config": self.config.to_dict(),
            "input_dim_x": self.net_x.input_dim,
            "input_dim_y": self.net_y.input_dim,
        }
        ad.save_checkpoint(dirpath, arrays, extra)

    @classmethod
    def load(cls, dirpath) -> "CaeModel":
        arrays, extra = ad.load_checkpoint(dirpath)
        if extra.get("kind") != "cae":
            raise DataError(f"checkpoint at {dirpath} is not a CAE checkpoint")
        config = CaeConfig.from_dict(extra["config"])
        model = build_cae(extra["input_dim_x"], extra["input_dim_y"], config)
        model.net_x.store.load_arrays(
            {n[2:]: a for n, a in arrays.items() if n.startswith("x.")})
        model.net_y.store.load_arrays(
            {n[2:]: a for n, a in arrays.items() if n.startswith("y.")})
        norm = {n[5:]: a for n, a in arrays.items() if n.startswith("norm.")}
        model.norm = norm or None
        return model


def build_cae(input_dim_x: int, input_dim_y: int, config: CaeConfig) -> CaeModel:
    rng = np.random.default_rng(config.seed)
    net_x = CaeHalf("x", input_dim_x, input_dim_y, config, rng)
    net_y = CaeHalf("y", input_dim_y, input_dim_x, config, rng)
    return CaeModel(net_x, net_y, config)


# ---------------------------------------------------------------------------
# losses


def loss_terms(model: CaeModel, batch_x, batch_y,
               rng: np.random.Generator) -> dict[str, ad.Tensor]:
    """The six unweighted terms, with cross-prediction targets being the
    other half's noiseless means (gradients flow into both halves). The kl
    terms here are per-neuron means (see the module docstring)."""
    d = float(model.config.bottleneck_dim)
    mu_x, lv_x = model.net_x.encode(ad.constant(batch_x))
    mu_y, lv_y = model.net_y.encode(ad.constant(batch_y))
    z_x = ad.gaussian_reparam(mu_x, lv_x, rng)
    z_y = ad.gaussian_reparam(mu_y, lv_y, rng)
    return {
        "recon_x": ad.mse(model.net_x.decode(z_x), ad.constant(batch_y)),
        "kl_x": ad.mul(ad.kl_standard_normal(mu_x, lv_x), 1.0 / d),
        "cross_x": ad.mse(model.net_x.cross_predict(z_x), mu_y),
        "recon_y": ad.mse(model.net_y.decode(z_y), ad.constant(batch_x)),
        "kl_y": ad.mul(ad.kl_standard_normal(mu_y, lv_y), 1.0 / d),
        "cross_y": ad.mse(model.net_y.cross_predict(z_y), mu_x),
    }


def combine(terms: dict[str, ad.Tensor], beta: float, gamma: float) -> ad.Tensor:
    recon = ad.add(terms["recon_x"], terms["recon_y"])
    kl = ad.add(terms["kl_x"], terms["kl_y"])
    cross = ad.add(terms["cross_x"], terms["cross_y"])
    return ad.add(ad.add(recon, ad.mul(kl, beta)), ad.mul(cross, gamma))


def combined_loss(model: CaeModel, batch_x, batch_y,
                  rng: np.random.Generator) -> ad.Tensor:
    return combine(loss_terms(model, batch_x, batch_y, rng),
                   model.config.beta, model.config.gamma)


def half_loss(half: CaeHalf, other_half: CaeHalf, batch_in, batch_target,
              rng: np.random.Generator) -> tuple[float, float, float]:
    """One half's (recon, kl, cross) values on a noisy sample."""
    if batch_in.shape[0] != batch_target.shape[0]:
        raise DataError("half_loss batches are not row-aligned")
    mu, lv = half.encode(ad.Tensor(batch_in))
    z = ad.gaussian_reparam(mu, lv, rng)
    mu_other = other_half.encode_mean(batch_target)
    recon = ad.mse(half.decode(z), ad.Tensor(batch_target))
    kl = ad.kl_standard_normal(mu, lv)
    cross = ad.mse(half.cross_predict(z), ad.Tensor(mu_other))
    return recon.item(), kl.item(), cross.item()


def _alternating_loss(model: CaeModel, which: str, batch_x, batch_y,
                      rng: np.random.Generator) -> ad.Tensor:
    """Baseline objective: one half's three terms with the other half's
    bottleneck means detached, as produced by per-net alternation."""
    cfg = model.config
    if which == "x":
        half, other, b_in, b_target = model.net_x, model.net_y, batch_x, batch_y
    else:
        half, other, b_in, b_target = model.net_y, model.net_x, batch_y, batch_x
    mu, lv = half.encode(ad.constant(b_in))
    z = ad.gaussian_reparam(mu, lv, rng)
    target_const = ad.Tensor(other.encode_mean(b_target))
    loss = ad.mse(half.decode(z), ad.constant(b_target))
    loss = ad.add(loss, ad.mul(ad.kl_standard_normal(mu, lv),
                               cfg.beta / cfg.bottleneck_dim))
    return ad.add(loss, ad.mul(ad.mse(half.cross_predict(z), target_const), cfg.gamma))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainHistory:
    terms: dict[str, list[float]] = field(default_factory=lambda: {n: [] for n in TERM_NAMES})
    val: list[dict] = field(default_factory=list)
    epochs_run: int = 0
    early_stopped: bool = False
    seconds: float = 0.0


def evaluate_model(model: CaeModel, x: np.ndarray, y: np.ndarray,
                   threshold: float | None = None) -> dict:
    """Noiseless validation metrics; deterministic for fixed inputs."""
    cfg = model.config
    thr = cfg.kl_threshold if threshold is None else threshold
    mu_x, lv_x = model.net_x.encode_np(x)
    mu_y, lv_y = model.net_y.encode_np(y)
    pred_y = model.net_x.decode_np(mu_x)
    pred_x = model.net_y.decode_np(mu_y)
    kl_x = metrics.per_neuron_kl(mu_x, lv_x)
    kl_y = metrics.per_neuron_kl(mu_y, lv_y)
    mask_x = metrics.informative_mask(kl_x, thr)
    mask_y = metrics.informative_mask(kl_y, thr)
    cy = model.net_x.cross_predict_np(mu_x)
    cx = model.net_y.cross_predict_np(mu_y)

    def masked_ev(target, pred, mask):
        if mask.count == 0:
            return None
        idx = mask.indices
        return metrics.explained_variance(target[:, idx], pred[:, idx])

    ev_y = metrics.explained_variance(y, pred_y)
    ev_x = metrics.explained_variance(x, pred_x)
    val_loss = (float(((y - pred_y) ** 2).mean() + ((x - pred_x) ** 2).mean())
                + cfg.beta * float(kl_x.mean() + kl_y.mean())
                + cfg.gamma * float(((mu_y - cy) ** 2).mean() + ((mu_x - cx) ** 2).mean()))
    return {
        "ev_y_from_x": ev_y,
        "ev_x_from_y": ev_x,
        "cross_ev_y_from_x": masked_ev(mu_y, cy, mask_y),
        "cross_ev_x_from_y": masked_ev(mu_x, cx, mask_x),
        "informative_x": mask_x.count,
        "informative_y": mask_y.count,
        "kl_x": kl_x.tolist(),
        "kl_y": kl_y.tolist(),
        "val_loss": val_loss,
    }


def train_cae(pair: DatasetPair, config: CaeConfig,
              standardize_inputs: bool = True) -> tuple[CaeModel, TrainHistory]:
    """Minibatch Adam on the combined loss (or the alternating baseline).

    Inputs are standardized per column with train-split statistics (stored
    in the model; all downstream consumers see the standardized units).
    Per-epoch validation metrics are recorded with noiseless bottlenecks.
    Raises NumericalError with the offending term values if the loss goes
    non-finite.
    """
    t0 = time.monotonic()
    train_idx = pair.rows(TRAIN)
    val_idx = pair.rows(VAL)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise DataError("training requires non-empty train and val splits")

    model = build_cae(pair.x.shape[1], pair.y.shape[1], config)
    if standardize_inputs:
        from .dataio import standardize
        pair, stats = standardize(pair)
        dx = stats.split_point
        model.norm = {"x_mean": stats.means[:dx], "x_std": stats.stds[:dx],
                      "y_mean": stats.means[dx:], "y_std": stats.stds[dx:]}
    x_train, y_train = pair.x[train_idx], pair.y[train_idx]
    x_val, y_val = pair.x[val_idx], pair.y[val_idx]
    rng = np.random.default_rng([config.seed, 0x7E41])
    history = TrainHistory()
    best_val = np.inf
    stale = 0
    alt_counter = 0

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_idx))
        sums = {name: 0.0 for name in TERM_NAMES}
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            sel = order[start:start + config.batch_size]
            bx, by = x_train[sel], y_train[sel]
            if config.training_mode == "combined":
                terms = loss_terms(model, bx, by, rng)
                total = combine(terms, config.beta, config.gamma)
                term_values = {k: t.item() for k, t in terms.items()}
                model.net_x.store.zero_grad()
                model.net_y.store.zero_grad()
                ad.backward(total)
                model.net_x.store.adam_step(config.learning_rate)
                model.net_y.store.adam_step(config.learning_rate)
            else:
                which = "x" if alt_counter % 2 == 0 else "y"
                alt_counter += 1
                total = _alternating_loss(model, which, bx, by, rng)
                term_values = {k: np.nan for k in TERM_NAMES}
                term_values[f"recon_{which}"] = total.item()
                half = model.net_x if which == "x" else model.net_y
                half.store.zero_grad()
                ad.backward(total)
                half.store.adam_step(config.learning_rate)
            if not np.isfinite(total.item()):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}: "
                    + ", ".join(f"{k}={v:.4g}" for k, v in term_values.items()))
            for k, v in term_values.items():
                sums[k] += v
            n_batches += 1

        for k in TERM_NAMES:
            history.terms[k].append(sums[k] / n_batches)
        val_metrics = evaluate_model(model, x_val, y_val)
        history.val.append(val_metrics)
        history.epochs_run = epoch + 1

        if config.early_stop_patience > 0:
            if val_metrics["val_loss"] < best_val - config.early_stop_min_delta:
                best_val = val_metrics["val_loss"]
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    history.early_stopped = True
                    break

    history.seconds = time.monotonic() - t0
    return model, history


def extract_macrovariables(model: CaeModel, inputs_x: np.ndarray,
                           inputs_y: np.ndarray,
                           mask_x: metrics.InformativeMask | None = None,
                           mask_y: metrics.InformativeMask | None = None,
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless bottleneck means restricted to indices informative on both
    sides, so column i of the first matrix cross-predicts column i of the
    second. Masks default to ones computed on the given inputs; pass masks
    derived from a validation set to keep extraction and detection separate.
    """
    if mask_x is None or mask_y is None:
        auto_x, auto_y = model.informative_masks(inputs_x, inputs_y)
        mask_x = mask_x or auto_x
        mask_y = mask_y or auto_y
    paired = np.flatnonzero(mask_x.flags & mask_y.flags)
    if len(paired) == 0:
        warnings.warn("no informative bottleneck pair; returning empty macrovariables")
    mu_x = model.net_x.encode_mean(inputs_x)
    mu_y = model.net_y.encode_mean(inputs_y)
    return mu_x[:, paired], mu_y[:, paired]
