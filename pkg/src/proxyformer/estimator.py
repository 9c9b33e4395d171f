"""scikit-learn style wrapper around the network and training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .backbone import default_vocabulary, tokenize
from .config import RunConfig, TrainConfig
from .losses import LossWeights
from .metrics import evaluate
from .model import ModelConfig
from .synthdata import GroundTruth, Sample, mask_box
from .training import predict, train
from .validation import check_pairs, check_targets


class ProxyFormer(BaseEstimator):
    """Referring segmentation estimator.

    ``X`` is a sequence of ``(frames, expression)`` pairs with frames
    ``[T, H, W, 3]`` in [0, 1]; ``y`` holds the matching binary masks
    ``[T, H, W]``. ``predict`` returns one uint8 mask video per pair and
    ``score`` the mean of region and boundary accuracy.
    """

    def __init__(self, model_dim=64, num_layers=4, num_queries=5, num_heads=8, seg_dim=8,
                 use_p2v=True, steps=3000, lr=1e-3, batch_size=4, window=8, seed=0,
                 lambda_jsc=5.0, jsc_normalize=False, eval_batch_size=8):
        self.model_dim = model_dim
        self.num_layers = num_layers
        self.num_queries = num_queries
        self.num_heads = num_heads
        self.seg_dim = seg_dim
        self.use_p2v = use_p2v
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.window = window
        self.seed = seed
        self.lambda_jsc = lambda_jsc
        self.jsc_normalize = jsc_normalize
        self.eval_batch_size = eval_batch_size

    def run_config(self) -> RunConfig:
        model = ModelConfig(model_dim=self.model_dim, num_layers=self.num_layers,
                            num_queries=self.num_queries, num_heads=self.num_heads,
                            seg_dim=self.seg_dim, use_p2v=self.use_p2v)
        tc = TrainConfig(lr=self.lr, steps=self.steps, batch_size=self.batch_size, seed=self.seed,
                         window=self.window, jsc_normalize=self.jsc_normalize, checkpoint_every=10**9)
        return RunConfig(model=model, train=tc, loss=LossWeights(jsc=self.lambda_jsc))

    def _tokens(self, pairs):
        vocab = default_vocabulary()
        return [tokenize(expr, vocab) for _, expr in pairs]

    def fit(self, X, y, X_val=None, y_val=None):
        pairs = check_pairs(X)
        masks = check_targets(pairs, y)
        samples = [self._sample(f, t, m) for (f, _), t, m in zip(pairs, self._tokens(pairs), masks)]
        val = None
        if X_val is not None:
            vp = check_pairs(X_val)
            val = [self._sample(f, t, m) for (f, _), t, m in zip(vp, self._tokens(vp), check_targets(vp, y_val))]
        self.config_ = self.run_config()
        res = train(self.config_, samples, val)
        self.net_ = res.net
        self.history_ = res.history
        self.config_hash_ = self.config_.hash()
        return self

    @staticmethod
    def _sample(frames, tokens, masks) -> Sample:
        boxes, valid = zip(*(mask_box(m) for m in masks))
        gt = GroundTruth(masks, np.stack(boxes), np.array(valid, dtype=bool))
        return Sample(frames, tokens, gt, None)

    def predict_details(self, X):
        check_is_fitted(self, "net_")
        pairs = check_pairs(X)
        return predict(self.net_, [f for f, _ in pairs], self._tokens(pairs), self.eval_batch_size)

    def predict(self, X) -> list[np.ndarray]:
        return [p.masks for p in self.predict_details(X)]

    def score(self, X, y) -> float:
        pairs = check_pairs(X)
        masks = check_targets(pairs, y)
        return evaluate(self.predict(X), masks).JandF
