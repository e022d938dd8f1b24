"""Classification scores shared by training, threshold search and evaluation."""
import numpy as np

from .errors import LengthMismatch


def _f1(tp, fp, fn):
    # works elementwise on integer arrays; a class with prec + recall = 0 scores 0
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)


def macro_f1_from_counts(tp, fp, fn, tn):
    """Macro F1 over classes {0, 1} from the FOG-class confusion counts.

    For class 0 the roles swap: its true positives are ``tn``, its false
    positives ``fn`` and its false negatives ``fp``.
    """
    return (_f1(tp, fp, fn) + _f1(tn, fn, fp)) / 2.0


def confusion_counts(y_pred, y_true):
    y_pred = np.asarray(y_pred).astype(np.int64)
    y_true = np.asarray(y_true).astype(np.int64)
    if y_pred.shape != y_true.shape:
        raise LengthMismatch(f"y_pred {y_pred.shape} vs y_true {y_true.shape}")
    tp = int(np.sum((y_pred == 1) & (y_true == 1)))
    fp = int(np.sum((y_pred == 1) & (y_true == 0)))
    fn = int(np.sum((y_pred == 0) & (y_true == 1)))
    tn = int(np.sum((y_pred == 0) & (y_true == 0)))
    return tp, fp, fn, tn


def macro_f1(y_pred, y_true) -> float:
    """Unweighted mean of the per-class F1 scores of a binary labelling."""
    return float(macro_f1_from_counts(*confusion_counts(y_pred, y_true)))
