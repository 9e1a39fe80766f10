"""Training loops and experiment orchestration.

Everything here is deterministic given the seed: each purpose (data
shuffling, mixing weights, weight init, noise, classifier head) draws from
its own labeled sub-stream of the master seed.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from mixcl import models
from mixcl.augment import dropout_noise_aug, gaussian_noise_aug, make_mixup_batch
from mixcl.autodiff import Tape, Tensor
from mixcl.data import DataError, TimeSeriesDataset, handcrafted_features, load_dataset, raw_features, znormalize
from mixcl.evaluation import EvalReport, accuracy, one_nn_classify
from mixcl.losses import mnt_xent, mse_reconstruction, nt_xent, softmax_cross_entropy
from mixcl.optim import Adam
from mixcl.rng import Rng, permutation

__all__ = [
    "SSL_METHODS",
    "FEATURE_METHODS",
    "TrainConfig",
    "TrainResult",
    "TransferConfig",
    "TransferResult",
    "NumericalError",
    "train_ssl",
    "train_ae",
    "train_representation",
    "extract_features",
    "encode",
    "train_classifier",
    "transfer_finetune",
    "evaluate_method",
    "benchmark_run",
]

log = logging.getLogger(__name__)

SSL_METHODS = ("mcl", "cl-gauss", "cl-drop")
LEARNED_METHODS = SSL_METHODS + ("ae",)
FEATURE_METHODS = ("hc", "ed") + LEARNED_METHODS


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    """Hyperparameters of one representation-learning run.

    ``epochs=None`` means 1000 for the contrastive methods and 250 for the
    autoencoder.  ``noise`` is the gaussian variance for ``cl-gauss`` and
    the drop rate for ``cl-drop``.
    """

    method: str = "mcl"
    alpha: float = 0.2
    tau: float = 0.5
    noise: float = 0.25
    epochs: int | None = None
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    num_runs: int = 5
    per_sample_lambda: bool = False

    def __post_init__(self):
        if self.method not in LEARNED_METHODS:
            raise ValueError(f"unknown training method {self.method!r}; choose from {', '.join(LEARNED_METHODS)}")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")

    @property
    def n_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 250 if self.method == "ae" else 1000


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    loss_history: list[float]
    config: TrainConfig

    @property
    def encoder(self) -> dict[str, Tensor]:
        return models.select(self.params, "encoder.")


def _check_finite_loss(loss: Tensor, epoch: int, step: int) -> None:
    if not np.isfinite(loss.item()):
        raise NumericalError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}")


def _training_array(dataset) -> np.ndarray:
    x = np.asarray(getattr(dataset, "samples", dataset), dtype=np.float64)
    if x.ndim != 3:
        raise DataError(f"training data must be (N, C, T), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("training data contains NaN or infinite values")
    return x


def _batches(order: np.ndarray, size: int):
    for start in range(0, order.size, size):
        yield order[start : start + size]


def _ssl_loss(config: TrainConfig, params, x: np.ndarray, idx1, idx2, lam_rng: Rng, noise_rng: Rng) -> Tensor:
    b = idx1.size
    if config.method == "mcl":
        batch = make_mixup_batch(x, idx1, idx2, lam_rng, config.alpha, per_sample=config.per_sample_lambda)
        views = np.concatenate([batch.view1, batch.view2, batch.mixed], axis=0)
        z = models.project(params, models.fcn_encode(params, views, train=True))
        return mnt_xent(z[:b], z[b : 2 * b], z[2 * b :], batch.lam, config.tau)
    aug = gaussian_noise_aug if config.method == "cl-gauss" else dropout_noise_aug
    source = x[idx1]
    views = np.concatenate([aug(source, noise_rng, config.noise), aug(source, noise_rng, config.noise)], axis=0)
    z = models.project(params, models.fcn_encode(params, views, train=True))
    return nt_xent(z[:b], z[b:], config.tau)


def train_ssl(config: TrainConfig, dataset, callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Contrastive pretraining (MCL or one of the CL baselines).

    Each epoch walks two independent permutations of the training set in
    lockstep (MCL mixes the paired batches; CL only uses the first).
    Batches smaller than two samples are skipped.  Returns encoder plus
    projection head parameters and the mean loss of every epoch.
    """
    if config.method not in SSL_METHODS:
        raise ValueError(f"train_ssl handles {SSL_METHODS}, got {config.method!r}")
    x = _training_array(dataset)
    n = x.shape[0]
    if n < 2:
        raise ValueError("contrastive training needs at least two samples")
    root = Rng(config.seed)
    shuffle_rng = root.substream("shuffle")
    lam_rng = root.substream("lambda")
    noise_rng = root.substream("noise")
    init_rng = root.substream("init")
    params = models.init_encoder(init_rng, x.shape[1])
    params.update(models.init_projection_head(init_rng))
    opt = Adam(models.trainable(params), lr=config.lr)
    size = min(config.batch_size, n)

    history = []
    for epoch in range(config.n_epochs):
        order1 = permutation(shuffle_rng, n)
        order2 = permutation(shuffle_rng, n)
        losses = []
        for step, (idx1, idx2) in enumerate(zip(_batches(order1, size), _batches(order2, size))):
            if idx1.size < 2:
                log.warning("epoch %d: skipping batch of size %d (no contrastive negatives)", epoch, idx1.size)
                continue
            opt.zero_grad()
            with Tape() as tape:
                loss = _ssl_loss(config, params, x, idx1, idx2, lam_rng, noise_rng)
                _check_finite_loss(loss, epoch, step)
                tape.backward(loss)
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        if callback is not None:
            callback(epoch, history[-1])
    return TrainResult(params, history, config)


def train_ae(config: TrainConfig, dataset, callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Autoencoder baseline trained with mean squared reconstruction error."""
    x = _training_array(dataset)
    n, c, t = x.shape
    root = Rng(config.seed)
    shuffle_rng = root.substream("shuffle")
    init_rng = root.substream("init")
    params = models.init_encoder(init_rng, c)
    params.update(models.init_decoder(init_rng, c, t))
    opt = Adam(models.trainable(params), lr=config.lr)
    size = min(config.batch_size, n)

    history = []
    for epoch in range(config.n_epochs):
        losses = []
        for step, idx in enumerate(_batches(permutation(shuffle_rng, n), size)):
            opt.zero_grad()
            with Tape() as tape:
                h = models.fcn_encode(params, x[idx], train=True)
                loss = mse_reconstruction(models.decode(params, h, (c, t)), x[idx])
                _check_finite_loss(loss, epoch, step)
                tape.backward(loss)
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        if callback is not None:
            callback(epoch, history[-1])
    return TrainResult(params, history, config)


def train_representation(config: TrainConfig, dataset, callback=None) -> TrainResult:
    trainer = train_ae if config.method == "ae" else train_ssl
    return trainer(config, dataset, callback)


def encode(params, x, batch_size: int = 256) -> np.ndarray:
    """Eval-mode encoder representations, computed in chunks without a tape."""
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    out = [models.fcn_encode(params, x[s : s + batch_size], train=False).data for s in range(0, x.shape[0], batch_size)]
    return np.concatenate(out, axis=0)


def extract_features(method: str, dataset: TimeSeriesDataset, params=None) -> np.ndarray:
    """Feature matrix for 1NN: ``hc``, ``ed`` or a trained ``encoder``.

    No preprocessing happens here; callers z-normalize where appropriate.
    """
    if method == "hc":
        return handcrafted_features(dataset)
    if method == "ed":
        return raw_features(dataset)
    if method == "encoder":
        if params is None:
            raise ValueError("encoder features need trained weights")
        return encode(params, dataset)
    raise ValueError(f"unknown feature method {method!r}; choose hc, ed or encoder")


# ---------------------------------------------------------------------------
# supervised fine-tuning and transfer


def _predict(params, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    preds = []
    calibrated = models.is_calibrated(params)
    for s in range(0, x.shape[0], batch_size):
        chunk = x[s : s + batch_size]
        # an encoder that has never seen a training batch falls back to batch statistics
        h = models.fcn_encode(params, chunk, train=not calibrated, update_stats=False)
        preds.append(np.argmax(models.classify(params, h).data, axis=1))
    return np.concatenate(preds)


def train_classifier(
    params,
    train: TimeSeriesDataset,
    epochs: int,
    rng: Rng,
    lr: float = 1e-3,
    batch_size: int = 64,
    test: TimeSeriesDataset | None = None,
) -> tuple[list[float], list[float]]:
    """Fine-tune encoder and classifier head jointly with cross-entropy.

    Returns per-epoch training losses and, if ``test`` is given, test
    accuracies with index 0 holding the accuracy before any update.
    """
    k = params["classifier.weight"].shape[1]
    if k != train.n_classes:
        raise ValueError(f"classifier head has {k} outputs but the dataset has {train.n_classes} classes")
    x, y = train.samples, train.labels
    n = x.shape[0]
    opt = Adam(models.trainable(params), lr=lr)
    size = min(batch_size, n)
    losses: list[float] = []
    curve: list[float] = []
    if test is not None:
        curve.append(accuracy(_predict(params, test.samples), test.labels))
    for epoch in range(epochs):
        batch_losses = []
        for step, idx in enumerate(_batches(permutation(rng, n), size)):
            opt.zero_grad()
            with Tape() as tape:
                logits = models.classify(params, models.fcn_encode(params, x[idx], train=True))
                loss = softmax_cross_entropy(logits, y[idx])
                _check_finite_loss(loss, epoch, step)
                tape.backward(loss)
            opt.step()
            batch_losses.append(loss.item())
        losses.append(float(np.mean(batch_losses)))
        if test is not None:
            curve.append(accuracy(_predict(params, test.samples), test.labels))
    return losses, curve


@dataclass
class TransferConfig:
    """Supervised fine-tuning of an FCN classifier on a target dataset.

    With ``init="pretrained"`` the encoder comes from ``weights`` (a weight
    file or parameter dict) or, failing that, from MCL pretraining on
    ``pretext`` with ``pretext_config``.
    """

    target: str | Path | None = None
    pretext: str | Path | None = None
    init: str = "random"
    weights: str | Path | dict | None = None
    epochs: int = 100
    num_runs: int = 5
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 64
    pretext_config: TrainConfig = field(default_factory=lambda: TrainConfig(method="mcl"))

    def __post_init__(self):
        if self.init not in ("random", "pretrained"):
            raise ValueError(f"init must be 'random' or 'pretrained', got {self.init!r}")


@dataclass
class TransferResult:
    curves: np.ndarray  # (runs, epochs + 1) test accuracy, column 0 before training
    config: TransferConfig

    @property
    def final(self) -> np.ndarray:
        return self.curves[:, -1]

    @property
    def mean(self) -> float:
        return float(self.final.mean())

    @property
    def std(self) -> float:
        return float(self.final.std())

    def to_dict(self) -> dict:
        cfg = asdict(replace(self.config, weights=None if isinstance(self.config.weights, dict) else self.config.weights))
        for key in ("target", "pretext", "weights"):
            if cfg[key] is not None:
                cfg[key] = str(cfg[key])
        return {
            "init": self.config.init,
            "final_mean": self.mean,
            "final_std": self.std,
            "final": self.final.tolist(),
            "curves": self.curves.tolist(),
            "config": cfg,
        }


def _pretrained_encoder(config: TransferConfig):
    if isinstance(config.weights, dict):
        return config.weights
    if config.weights is not None:
        return models.load_weights(config.weights)
    if config.pretext is None:
        raise ValueError("pretrained init needs either weights or a pretext dataset")
    pretext_train, _ = load_dataset(config.pretext)
    cfg = replace(config.pretext_config, seed=config.seed)
    log.info("pretraining %s on %s for %d epochs", cfg.method, pretext_train.name, cfg.n_epochs)
    return train_representation(cfg, znormalize(pretext_train)).encoder


def transfer_finetune(config: TransferConfig, train: TimeSeriesDataset | None = None, test: TimeSeriesDataset | None = None) -> TransferResult:
    """Fine-tune ``num_runs`` classifiers and record their test-accuracy curves.

    Datasets are loaded from ``config.target`` unless passed directly (they
    are then assumed already normalized).
    """
    if train is None or test is None:
        if config.target is None:
            raise ValueError("transfer needs a target dataset")
        train, test = (znormalize(d) for d in load_dataset(config.target))
    pretrained = _pretrained_encoder(config) if config.init == "pretrained" else None

    curves = []
    for run in range(config.num_runs):
        run_rng = Rng(config.seed).substream(f"run{run}")
        params = models.init_encoder(run_rng.substream("init"), train.n_channels)
        if pretrained is not None:
            models.assign_weights(params, pretrained, prefix="encoder.")
        params.update(models.init_classifier(run_rng.substream("head"), train.n_classes))
        _, curve = train_classifier(
            params,
            train,
            config.epochs,
            run_rng.substream("shuffle"),
            lr=config.lr,
            batch_size=config.batch_size,
            test=test,
        )
        log.info("run %d (%s init): final test accuracy %.4f", run, config.init, curve[-1])
        curves.append(curve)
    return TransferResult(np.array(curves), config)


# ---------------------------------------------------------------------------
# benchmarking


def evaluate_method(method: str, train: TimeSeriesDataset, test: TimeSeriesDataset, config: TrainConfig, seed: int = 0) -> float:
    """1NN test accuracy of one feature method on one dataset.

    HC sees the raw series; every other method sees z-normalized series.
    """
    if method == "hc":
        ftr, fte = handcrafted_features(train), handcrafted_features(test)
    else:
        train, test = znormalize(train), znormalize(test)
        if method == "ed":
            ftr, fte = raw_features(train), raw_features(test)
        else:
            result = train_representation(replace(config, method=method, seed=seed), train)
            ftr, fte = encode(result.params, train), encode(result.params, test)
    return accuracy(one_nn_classify(ftr, train.labels, fte), test.labels)


def benchmark_run(archive, datasets, methods, config: TrainConfig, progress: Callable[[str], None] | None = None) -> EvalReport:
    """Evaluate every method on every dataset of an archive.

    Learned methods run ``config.num_runs`` times with seeds
    ``config.seed + r``; HC and ED are deterministic and run once (seed 0).
    A dataset that fails to load or evaluate is recorded in
    ``report.failures`` and skipped.
    """
    for m in methods:
        if m not in FEATURE_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(FEATURE_METHODS)}")
    report = EvalReport(config={**asdict(config), "hc_variance": "population", "normalization": "per-sample z"})
    report.config.pop("method")
    root = Path(archive)
    for name in datasets:
        try:
            train, test = load_dataset(root / name)
            rows = []
            for method in methods:
                seeds = [0] if method in ("hc", "ed") else [config.seed + r for r in range(config.num_runs)]
                for seed in seeds:
                    acc = evaluate_method(method, train, test, config, seed)
                    rows.append((name, method, seed, acc))
                    if progress is not None:
                        progress(f"{name} {method} seed={seed} accuracy={acc:.4f}")
        except (DataError, NumericalError, ValueError) as exc:
            log.warning("dataset %s failed: %s", name, exc)
            report.failures[name] = str(exc)
            continue
        for row in rows:
            report.add(*row)
    return report
