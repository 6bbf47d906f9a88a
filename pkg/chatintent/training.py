import math
import logging
import itertools
from dataclasses import dataclass

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from chatintent.errors import ChatIntentError, TrainingDivergedError
from chatintent.longformer_plus import ModelConfig, init_params, loss_and_grad, prepare_input, predict_encoded
from chatintent.session_model import CLASS_ORDER
from chatintent.classification import eval_report

# Grid axes in iteration order, mapped onto ModelConfig / TrainOptions fields
GRID_AXES = (("lr", "lr"), ("layers", "layers"), ("d", "d_model"), ("w", "window"), ("dropout", "dropout"))


class TrainOptions(BaseModel):
    model_config = ConfigDict(frozen = True, extra = "forbid")

    lr: float = Field(3e-4, ge = 0.0)
    batch_size: int = Field(16, ge = 1)
    epochs: int = Field(20, ge = 1)
    patience: int = Field(5, ge = 1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


class Adam:
    '''
    Adam with bias correction; updates ModelParams in place.
    '''

    def __init__(self, params, beta1 = 0.9, beta2 = 0.999, eps = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        corr1 = 1.0 - self.beta1 ** self.t
        corr2 = 1.0 - self.beta2 ** self.t
        for name in params.names():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr == 0.0:
                continue
            params[name] -= (lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)).astype(params[name].dtype)


@dataclass
class GridResult:
    best_config: ModelConfig
    best_options: TrainOptions
    best_params: object
    table: pd.DataFrame


class Trainer:

    def __init__(self, logger = None):
        self.log = logger or logging.getLogger(__name__ + ".Trainer")

    def encode_items(self, items, config, vocab):
        return [(prepare_input(item.session, vocab, config), item.intent_class.index) for item in items]

    def evaluate(self, params, config, encoded):
        '''
        ClassReport of the model's predictions on a list of (EncodedInput, class index).
        '''
        preds = [predict_encoded(params, config, inp)[0] for inp, _ in encoded]
        golds = [CLASS_ORDER[y] for _, y in encoded]
        return eval_report(preds, golds)

    def train(self, params, config, opts, corpus, vocab):
        '''
        Train with Adam on the train split; early-stop on validation weighted F1.
        Params:
         - params: initial ModelParams (not modified)
         - config: ModelConfig
         - opts: TrainOptions
         - corpus: Corpus carrying train and val splits
         - vocab: Vocab used for encoding
        Returns (best ModelParams, history as list of per-epoch dicts).
        '''
        train_items, val_items = corpus.subset("train"), corpus.subset("val")
        if not train_items or not val_items:
            raise ChatIntentError("Error while training: corpus needs non-empty train and val splits (got %d/%d)" % (len(train_items), len(val_items)))
        train_set = self.encode_items(train_items, config, vocab)
        val_set = self.encode_items(val_items, config, vocab)
        shuffle_rng, dropout_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(opts.seed).spawn(2)]
        if config.dropout <= 0.0:
            dropout_rng = None

        params = params.copy()
        optimizer = Adam(params, opts.beta1, opts.beta2, opts.eps)
        history = []
        best_params, best_f1, best_epoch, stale = params.copy(), -1.0, 0, 0
        for epoch in range(1, opts.epochs + 1):
            order = shuffle_rng.permutation(len(train_set))
            loss_sum = 0.0
            for start in range(0, len(order), opts.batch_size):
                batch = [train_set[i] for i in order[start:start + opts.batch_size]]
                loss, grads = loss_and_grad(params, config, batch, dropout_rng)
                if not math.isfinite(loss):
                    raise TrainingDivergedError("Error while training: loss became `%s` in epoch %d at example offset %d (lr=%g)" % (loss, epoch, start, opts.lr))
                optimizer.step(params, grads, opts.lr)
                loss_sum += loss * len(batch)
            report = self.evaluate(params, config, val_set)
            row = {"epoch": epoch,
                   "train_loss": loss_sum / len(train_set),
                   "val_weighted_precision": report.weighted_precision,
                   "val_weighted_recall": report.weighted_recall,
                   "val_weighted_f1": report.weighted_f1,
                   "val_accuracy": report.accuracy}
            history.append(row)
            self.log.info("Epoch %d/%d: train loss %.4f, val weighted F1 %.4f (precision %.4f, recall %.4f)" %
              (epoch, opts.epochs, row["train_loss"], row["val_weighted_f1"], row["val_weighted_precision"], row["val_weighted_recall"]))
            if report.weighted_f1 > best_f1:
                best_params, best_f1, best_epoch, stale = params.copy(), report.weighted_f1, epoch, 0
            else:
                stale += 1
                if stale >= opts.patience:
                    self.log.info("Early stop after epoch %d; best epoch %d." % (epoch, best_epoch))
                    break
        return best_params, history

    def grid_search(self, base_config, base_opts, grid, corpus, vocab):
        '''
        Train every cell of the grid and select the one with the highest validation
        weighted F1 (first cell wins ties).
        Params:
         - grid: dict with any of the keys lr, layers, d, w, dropout mapping to value lists;
                 missing axes keep the base value
        '''
        unknown = set(grid) - set(k for k, _ in GRID_AXES)
        if unknown:
            raise ValueError("Unknown grid axes: %s" % (sorted(unknown)))
        axes = []
        for key, field_name in GRID_AXES:
            base = base_opts.lr if key == "lr" else getattr(base_config, field_name)
            values = list(grid.get(key, [base]))
            if not values:
                raise ValueError("Grid axis `%s` is empty" % (key))
            axes.append(values)

        rows, cells = [], []
        for values in itertools.product(*axes):
            cell = dict(zip((k for k, _ in GRID_AXES), values))
            config = ModelConfig.model_validate(dict(base_config.model_dump(), layers = cell["layers"], d_model = cell["d"],
                                                     window = cell["w"], dropout = cell["dropout"]))
            opts = base_opts.model_copy(update = {"lr": float(cell["lr"])})
            self.log.info("Grid cell %d: %s" % (len(cells) + 1, cell))
            params, history = self.train(init_params(config), config, opts, corpus, vocab)
            best = max(history, key = lambda r: r["val_weighted_f1"])
            rows.append(dict(cell, best_epoch = best["epoch"], val_weighted_f1 = best["val_weighted_f1"],
                             val_weighted_precision = best["val_weighted_precision"], val_weighted_recall = best["val_weighted_recall"]))
            cells.append((config, opts, params))
        table = pd.DataFrame(rows)
        winner = int(table["val_weighted_f1"].to_numpy().argmax())
        config, opts, params = cells[winner]
        self.log.info("Grid search selected cell %d of %d (val weighted F1 %.4f)." % (winner + 1, len(cells), table["val_weighted_f1"].iloc[winner]))
        return GridResult(config, opts, params, table)


def train(params, config, opts, corpus, vocab, logger = None):
    return Trainer(logger).train(params, config, opts, corpus, vocab)


def grid_search(config, opts, grid, corpus, vocab, logger = None):
    return Trainer(logger).grid_search(config, opts, grid, corpus, vocab)
