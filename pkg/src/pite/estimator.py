"""scikit-learn style front end for prototype-aligned ITE estimation."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import model as M
from . import prototypes as P
from . import trainer as T
from .baselines import EstimatorOutput
from .dataset import CausalDataset, SplitSpec, split_indices
from .exceptions import ConfigError
from .validation import check_fitted, check_treatment_data, check_X


class PITE(TransformerMixin, BaseEstimator):
    """Two-head outcome network over a shared encoder, regularised by prototypes.

    Each treatment group keeps ``n_prototypes`` learnable centroids in
    representation space. Training minimises the weighted factual loss plus
    ``alpha`` times (clustering + ``beta`` * cross-group alignment +
    ``gamma_div`` * diversity) plus ``reg_lambda`` times the squared weights.

    Parameters
    ----------
    encoder_layers, head_layers : tuple of int
        Layer widths. The representation dimension is ``encoder_layers[-1]``;
        ``head_layers`` must end in 1.
    n_prototypes : int
        Prototypes per treatment group.
    alpha, beta, gamma_div, reg_lambda : float
        Loss weights.
    optimizer : {'adam', 'momentum', 'sgd'}
    rematch : {'index', 'greedy', 'optimal'}
        How control prototypes are re-paired with treated ones each epoch.
    outcome : {'continuous', 'binary'}
        Squared error or logistic loss on the factual outcome.
    validation_fraction : float
        Share of the training data held out for early stopping when no
        explicit validation set is passed to :meth:`fit`.
    random_state : int

    Attributes
    ----------
    params_ : ModelParams
    prototypes_ : PrototypeSet
    history_ : list of dict
        Per-epoch loss breakdown and validation loss.
    """

    def __init__(
        self,
        encoder_layers=(200, 200, 200),
        head_layers=(100, 100, 100, 1),
        activation="elu",
        weight_init_scale=1.0,
        n_prototypes=5,
        alpha=1.0,
        beta=1.0,
        gamma_div=0.1,
        reg_lambda=1e-4,
        learning_rate=1e-3,
        batch_size=64,
        max_epochs=400,
        patience=30,
        optimizer="adam",
        momentum=0.9,
        rematch="index",
        assign_every="batch",
        stratify=False,
        outcome="continuous",
        validation_fraction=0.3,
        random_state=0,
    ):
        self.encoder_layers = encoder_layers
        self.head_layers = head_layers
        self.activation = activation
        self.weight_init_scale = weight_init_scale
        self.n_prototypes = n_prototypes
        self.alpha = alpha
        self.beta = beta
        self.gamma_div = gamma_div
        self.reg_lambda = reg_lambda
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.optimizer = optimizer
        self.momentum = momentum
        self.rematch = rematch
        self.assign_every = assign_every
        self.stratify = stratify
        self.outcome = outcome
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def model_config(self, input_dim):
        return M.ModelConfig(
            input_dim=input_dim,
            encoder_layers=self.encoder_layers,
            head_layers=self.head_layers,
            activation=self.activation,
            weight_init_scale=self.weight_init_scale,
        )

    def train_config(self):
        return T.TrainConfig(
            alpha=self.alpha,
            beta=self.beta,
            gamma_div=self.gamma_div,
            lam=self.reg_lambda,
            K=self.n_prototypes,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            rematch_strategy=self.rematch,
            seed=self.random_state,
            optimizer=self.optimizer,
            momentum=self.momentum,
            assign_every=self.assign_every,
            stratify=self.stratify,
        )

    def fit(self, X, t, y, X_valid=None, t_valid=None, y_valid=None):
        X, t, y = check_treatment_data(X, t, y)
        train = CausalDataset(X, t, y, outcome=self.outcome)
        if X_valid is not None:
            Xv, tv, yv = check_treatment_data(X_valid, t_valid, y_valid)
            valid = CausalDataset(Xv, tv, yv, outcome=self.outcome)
        else:
            if not 0 < self.validation_fraction < 1:
                raise ConfigError("validation_fraction must lie in (0, 1)")
            f = self.validation_fraction
            # a tiny third part keeps split_indices happy; it is folded back into train
            spec = SplitSpec(1 - f - 1e-3, f, 1e-3, seed=self.random_state)
            tr, va, te = split_indices(train.n, spec)
            valid = train.subset(va)
            train = train.subset(np.sort(np.concatenate([tr, te])))
        res = T.fit(train, valid, self.model_config(X.shape[1]), self.train_config())
        self.params_ = res.params
        self.prototypes_ = res.protos
        self.history_ = res.history
        self.best_epoch_ = res.best_epoch
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Representation of ``X`` in the learned space."""
        check_fitted(self, "params_")
        return M.encode(self.params_, check_X(X, self.n_features_in_))

    def estimate(self, X):
        check_fitted(self, "params_")
        y0, y1 = T.potential_outcomes(self.params_, check_X(X, self.n_features_in_), self.outcome)
        return EstimatorOutput(y1 - y0, y0, y1, "PITE")

    def predict(self, X):
        """Estimated individual treatment effect for each row."""
        return self.estimate(X).tau_hat

    def assign(self, X, t):
        """Nearest same-group prototype index for each row."""
        return P.assign(self.transform(X), t, self.prototypes_).k

    def save(self, path, extra=None):
        check_fitted(self, "params_")
        meta = {"estimator": self.get_params(), "best_epoch": self.best_epoch_}
        if extra:
            meta.update(extra)
        M.save_checkpoint(path, self.params_, self.prototypes_, {"meta": meta})

    @classmethod
    def load(cls, path):
        params, protos, doc = M.load_checkpoint(path)
        meta = doc.get("meta", {})
        est = cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in meta.get("estimator", {}).items()})
        est.params_ = params
        est.prototypes_ = protos
        est.history_ = []
        est.best_epoch_ = meta.get("best_epoch", 0)
        est.n_features_in_ = params.config.input_dim
        return est
