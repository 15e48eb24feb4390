"""Adam/L1 training of CM parameters and k-fold cross-validation."""
import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import model as cm
from .data import Dataset, augment_patch, make_thumbnail
from .evaluation import angular_error, error_stats
from .exceptions import NumericError

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    variant: cm.Variant = cm.Variant.CM
    select_on_test: bool = True
    # "mean" or "median" angular error on the test thumbnails
    selection_metric: str = "mean"
    scale_range: tuple = (0.125, 1.0)

    def __post_init__(self):
        self.variant = cm.Variant.parse(self.variant)
        if not self.lr >= 0:
            raise ValueError(f"lr must be nonnegative, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be at least 1")
        if self.selection_metric not in ("mean", "median"):
            raise ValueError(f"selection_metric must be 'mean' or 'median', got {self.selection_metric!r}")


def l1_loss(estimate, gt):
    """Sum of absolute channel differences and its subgradient (sign, with sign(0) = 0)."""
    diff = np.asarray(estimate, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.abs(diff).sum()), np.sign(diff)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(k) for k in params.banks],
                   [np.zeros_like(k) for k in params.banks])


def adam_step(params, grads, state, config, where=""):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    gs = grads.banks
    if len(gs) != len(params.banks) or any(g.shape != k.shape for g, k in zip(gs, params.banks)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in gs):
        raise NumericError(f"non-finite gradient{' at ' + where if where else ''}")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_m, new_v, new_banks = [], [], []
    for k, g, m, v in zip(params.banks, gs, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps_adam)
        new_m.append(m.astype(k.dtype))
        new_v.append(v.astype(k.dtype))
        new_banks.append((k - step).astype(k.dtype))
    return params.with_banks(new_banks), AdamState(new_m, new_v, t)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_mean_deg: float
    test_median_deg: float


@dataclass
class TrainReport:
    history: list
    selected_epoch: int
    params: cm.CmParams
    final_params: cm.CmParams
    config: TrainConfig = field(repr=False, default=None)

    @property
    def selected(self):
        return self.history[self.selected_epoch - 1]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "test_mean_deg"])
        for rec in self.history:
            writer.writerow([rec.epoch, f"{rec.train_loss:.9g}", f"{rec.test_mean_deg:.9g}"])
        return buf.getvalue()


def network_inputs(images, variant):
    """Stack prepared network inputs for a list of same-sized LabeledImages."""
    return np.stack([cm.prepare_input(im.pixels, variant) for im in images]).astype(np.float32)


def estimate_dataset(params, dataset, batch=256):
    """Unit estimates for each image's thumbnail, in dataset order."""
    thumbs = [make_thumbnail(im) for im in dataset]
    out = []
    for start in range(0, len(thumbs), batch):
        x = network_inputs(thumbs[start:start + batch], params.variant)
        est, _, _ = cm.forward(params, x)
        out.append(est.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, 3))


def evaluate(params, dataset):
    """Per-image angular errors (degrees) on uncropped thumbnails."""
    return angular_error(estimate_dataset(params, dataset), dataset.illuminants())


def _batch_step(params, x, gt):
    est, cache, _ = cm.forward(params, x)
    diff = est.astype(np.float64) - gt
    losses = np.abs(diff).sum(axis=1)
    d_est = np.sign(diff) / len(x)
    return losses, cm.backward(params, cache, d_est)


def train_fold(train, test, config):
    """Train on augmented patches of ``train``, selecting on ``test`` thumbnails.

    Each epoch draws one random rescale-and-crop patch per training image,
    runs shuffled minibatches (the last one may be short) and then scores
    the current weights on the uncropped test thumbnails. With
    ``select_on_test`` the weights of the lowest-error epoch are returned,
    otherwise those of the final epoch.
    """
    if len(train) == 0:
        raise ValueError("training set is empty")
    init_seq, aug_seq = np.random.SeedSequence(config.seed).spawn(2)
    params = cm.init_kaiming(int(init_seq.generate_state(1)[0]), config.variant)
    rng = np.random.default_rng(aug_seq)
    state = AdamState.zeros_like(params)
    gts = train.illuminants()

    has_test = test is not None and len(test) > 0
    if has_test:
        test_thumbs = [make_thumbnail(im) for im in test]
        x_test = network_inputs(test_thumbs, config.variant)
        gt_test = test.illuminants()

    history = []
    best_err, best_epoch, best_params = np.inf, None, None
    n = len(train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        patches = [augment_patch(train[i], rng, config.scale_range) for i in order]
        x_all = network_inputs(patches, config.variant)
        gt_all = gts[order]
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch)):
            sl = slice(start, start + config.batch)
            losses, grads = _batch_step(params, x_all[sl], gt_all[sl])
            total += losses.sum()
            params, state = adam_step(params, grads, state, config,
                                      where=f"epoch {epoch}, batch {b}")
        train_loss = total / n

        if has_test:
            est, _, _ = cm.forward(params, x_test)
            errs = angular_error(est, gt_test)
            rec = EpochRecord(epoch, train_loss, float(errs.mean()), float(np.median(errs)))
        else:
            rec = EpochRecord(epoch, train_loss, float("nan"), float("nan"))
        history.append(rec)
        score = rec.test_mean_deg if config.selection_metric == "mean" else rec.test_median_deg
        if has_test and score < best_err:
            best_err, best_epoch, best_params = score, epoch, params
        if epoch == 1 or epoch % 50 == 0 or epoch == config.epochs:
            logger.info("epoch %d: train loss %.4f, test mean %.3f deg",
                        epoch, train_loss, rec.test_mean_deg)

    if not config.select_on_test or best_params is None:
        best_epoch, best_params = config.epochs, params
    return TrainReport(history, best_epoch, best_params, params, config)


def fold_indices(n, k):
    """Contiguous split of ``range(n)`` into ``k`` folds."""
    if k < 2:
        raise ValueError("cross-validation needs k >= 2")
    if n < k:
        raise ValueError(f"cannot split {n} images into {k} folds")
    return [np.asarray(f) for f in np.array_split(np.arange(n), k)]


@dataclass
class CrossValResult:
    ids: list
    cameras: list
    errors: np.ndarray
    stats: object
    reports: list


def cross_validate(data, k=3, config=None):
    """k-fold CV over ids in sorted order; statistics use the concatenated held-out errors."""
    config = config or TrainConfig()
    folds = fold_indices(len(data), k)
    ids, cameras, errors, reports = [], [], [], []
    for i, held in enumerate(folds):
        if held.size == 0:
            raise ValueError(f"fold {i} is empty")
        rest = np.concatenate([f for j, f in enumerate(folds) if j != i])
        train = data.subset(rest)
        held_out = data.subset(held)
        logger.info("fold %d/%d: %d train, %d held out", i + 1, k, len(train), len(held_out))
        report = train_fold(train, train, config)
        errs = evaluate(report.params, held_out)
        ids += held_out.ids
        cameras += held_out.cameras
        errors.append(errs)
        reports.append(report)
    errors = np.concatenate(errors)
    return CrossValResult(ids, cameras, errors, error_stats(errors), reports)
