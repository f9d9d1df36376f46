"""scikit-learn style estimator wrapping the training loop and decoder.

SampledTransducer lets the whole pipeline be used like any other
sequence-to-sequence estimator: construct with hyperparameters, fit on
(features, label sequences), predict label sequences, score by token
accuracy.  All heavy lifting lives in the library modules; this class
only adapts conventions (parameter introspection, fitted-attribute
naming, input validation).
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from tkit.config import TrainConfig
from tkit.dataio import Dataset, Utterance
from tkit.decode import decode_utterance
from tkit.metrics import token_error_rate
from tkit.rnnt import TargetSeq
from tkit.train import train
from tkit.validation import check_sequences


class SampledTransducer(BaseEstimator):
    """Transducer trained with a sampled softmax over the joint output.

    vocab_size=None infers the vocabulary from the largest label seen in
    fit.  sampling_total_size=0 trains with the full softmax.
    """

    def __init__(self, vocab_size=None, hidden=16, self_condition=False,
                 lr=1.0e-3, epochs=1, batch_size=8, seed=0,
                 weight_transducer=1.0, weight_ctc=0.5, weight_inter=0.3,
                 sampling_strategy="batched", sampling_distribution="uniform",
                 sampling_total_size=0, decode_mode="greedy", decode_beam=10,
                 decode_ctc_top_k=0, workers=1):
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.self_condition = self_condition
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.weight_transducer = weight_transducer
        self.weight_ctc = weight_ctc
        self.weight_inter = weight_inter
        self.sampling_strategy = sampling_strategy
        self.sampling_distribution = sampling_distribution
        self.sampling_total_size = sampling_total_size
        self.decode_mode = decode_mode
        self.decode_beam = decode_beam
        self.decode_ctc_top_k = decode_ctc_top_k
        self.workers = workers

    def _config(self, vocab_size, feat_dim) -> TrainConfig:
        return TrainConfig(
            vocab_size=vocab_size,
            feat_dim=feat_dim,
            hidden=self.hidden,
            self_condition=self.self_condition,
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            weight_transducer=self.weight_transducer,
            weight_ctc=self.weight_ctc,
            weight_inter=self.weight_inter,
            sampling_strategy=self.sampling_strategy,
            sampling_distribution=self.sampling_distribution,
            sampling_total_size=self.sampling_total_size,
            decode_mode=self.decode_mode,
            decode_beam=self.decode_beam,
            decode_ctc_top_k=self.decode_ctc_top_k,
        )

    def fit(self, X, y):
        feats, targets = check_sequences(X, y, vocab_size=self.vocab_size)
        vocab_size = self.vocab_size
        if vocab_size is None:
            vocab_size = max(max(t) for t in targets if t) + 1
        utterances = [Utterance(x, TargetSeq(t), f"utt-{i:05d}")
                      for i, (x, t) in enumerate(zip(feats, targets))]
        dataset = Dataset(utterances, vocab_size, feats[0].shape[1])
        config = self._config(vocab_size, feats[0].shape[1])
        result = train(config, dataset, workers=self.workers)
        self.model_ = result.model
        self.history_ = result.history
        self.vocab_size_ = vocab_size
        self.feat_dim_ = feats[0].shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise ValueError("this SampledTransducer is not fitted yet")
        feats = check_sequences(X)
        return [decode_utterance(self.model_, x, mode=self.decode_mode,
                                 beam=self.decode_beam,
                                 ctc_top_k=self.decode_ctc_top_k)
                for x in feats]

    def score(self, X, y):
        """Token accuracy: 1 minus the corpus token error rate."""
        hyps = self.predict(X)
        refs = [list(seq) for seq in y]
        return 1.0 - token_error_rate(refs, hyps)
