"""scikit-learn compatible illuminant estimators.

``X`` is a collection of ``(H, W, 3)`` images (a 4-D array, a list of
arrays, or a :class:`~convmean.data.Dataset`); ``y`` is an ``(n, 3)`` array
of illuminants. ``predict`` returns unit illuminant estimates and ``score``
is the negated mean angular error in degrees, so larger is better.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import baselines
from . import model as cm
from .data import THUMB_SHAPE, Dataset, LabeledImage, bilinear_resize
from .evaluation import angular_error
from .training import TrainConfig, train_fold
from .validation import check_illuminants, check_images, to_uint8


class IlluminantEstimatorMixin:
    _estimator_type = "regressor"

    def score(self, X, y):
        y = check_illuminants(y)
        return -float(angular_error(self.predict(X), y).mean())


class ConvMeanEstimator(IlluminantEstimatorMixin, BaseEstimator):
    """The CM network wrapped as an estimator.

    ``fit`` trains on random rescale-and-crop patches of the given images
    and, when ``select_on_test`` is on, keeps the epoch whose weights do best
    on the uncropped thumbnails of ``X_test`` (by default the training
    images themselves). Images are quantized to 8 bits for training.
    """

    def __init__(self, variant="cm", epochs=2000, batch_size=16, learning_rate=1e-3,
                 beta1=0.9, beta2=0.999, epsilon=1e-8, select_on_test=True,
                 selection_metric="mean", random_state=0):
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.select_on_test = select_on_test
        self.selection_metric = selection_metric
        self.random_state = random_state

    def _config(self):
        return TrainConfig(lr=self.learning_rate, batch=self.batch_size, epochs=self.epochs,
                           beta1=self.beta1, beta2=self.beta2, eps_adam=self.epsilon,
                           seed=0 if self.random_state is None else int(self.random_state),
                           variant=self.variant, select_on_test=self.select_on_test,
                           selection_metric=self.selection_metric)

    @staticmethod
    def _dataset(X, y, prefix):
        images = check_images(X, min_shape=THUMB_SHAPE)
        y = check_illuminants(y, len(images))
        return Dataset([LabeledImage(to_uint8(img), gt, f"{prefix}{i:06d}")
                        for i, (img, gt) in enumerate(zip(images, y))])

    def fit(self, X, y, X_test=None, y_test=None):
        config = self._config()
        train = self._dataset(X, y, "train")
        test = train if X_test is None else self._dataset(X_test, y_test, "test")
        self.report_ = train_fold(train, test, config)
        self.params_ = self.report_.params
        self.n_params_ = self.params_.n_params()
        return self

    @classmethod
    def from_params(cls, params):
        """Wrap trained weights (e.g. loaded from a CMW1 file) without training."""
        est = cls(variant=params.variant.cli_name)
        est.params_ = params
        est.n_params_ = params.n_params()
        return est

    @classmethod
    def load(cls, path):
        return cls.from_params(cm.load(path))

    def save(self, path):
        check_is_fitted(self, "params_")
        cm.save(self.params_, path)

    def transform_inputs(self, X):
        """Network inputs: images resized to the thumbnail size, max-normalized."""
        out = []
        for img in check_images(X, min_shape=THUMB_SHAPE):
            if img.shape[:2] != THUMB_SHAPE:
                img = bilinear_resize(img, *THUMB_SHAPE)
            out.append(cm.prepare_input(img, self.params_.variant))
        return np.stack(out).astype(np.float32)

    def predict(self, X):
        check_is_fitted(self, "params_")
        est, _, _ = cm.forward(self.params_, self.transform_inputs(X))
        return est.astype(np.float64)


class _StatisticalEstimator(IlluminantEstimatorMixin, BaseEstimator):
    """Training-free estimators; ``fit`` only validates its arguments."""

    def fit(self, X=None, y=None):
        if X is not None:
            images = check_images(X)
            if y is not None:
                check_illuminants(y, len(images))
        return self

    def __sklearn_is_fitted__(self):
        return True

    def predict(self, X):
        return np.stack([self._estimate(img) for img in check_images(X)])


class GrayWorld(_StatisticalEstimator):
    def __init__(self, exclude_masked=True):
        self.exclude_masked = exclude_masked

    def _estimate(self, img):
        return baselines.gray_world(img, self.exclude_masked)


class WhitePatch(_StatisticalEstimator):
    def __init__(self, exclude_masked=True):
        self.exclude_masked = exclude_masked

    def _estimate(self, img):
        return baselines.white_patch(img, self.exclude_masked)


class ShadesOfGray(_StatisticalEstimator):
    def __init__(self, p=6.0, exclude_masked=True):
        self.p = p
        self.exclude_masked = exclude_masked

    def _estimate(self, img):
        return baselines.shades_of_gray(img, self.p, self.exclude_masked)


class GrayEdge(_StatisticalEstimator):
    """Gray-edge of ``order`` 1 or 2. Images without edges get the gray estimate."""

    def __init__(self, order=1, p=1.0, exclude_masked=True):
        self.order = order
        self.p = p
        self.exclude_masked = exclude_masked

    def _estimate(self, img):
        est, _ = baselines.gray_edge(img, self.order, self.p, self.exclude_masked)
        return est


def make_estimator(algo, p=None, model_path=None):
    """Build an estimator from its command-line name."""
    if algo == "cm":
        if model_path is None:
            raise ValueError("algorithm 'cm' needs a model file")
        return ConvMeanEstimator.load(model_path)
    if algo == "grayworld":
        return GrayWorld()
    if algo == "whitepatch":
        return WhitePatch()
    if algo == "sog":
        return ShadesOfGray(6.0 if p is None else p)
    if algo in ("ge1", "ge2"):
        return GrayEdge(int(algo[-1]), 1.0 if p is None else p)
    raise ValueError(f"unknown algorithm {algo!r}")
