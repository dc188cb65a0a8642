"""Cross-correlation of twin latent batches and the invariance/decorrelation loss."""

from __future__ import annotations

from dataclasses import dataclass

from .numcore import ContractError, Node, ParameterError, ShapeError, Tape
from .numcore import tape as T

INVARIANCE_FORMS = ("paper", "barlow")
NORMALIZATIONS = ("standardize", "raw")


@dataclass(frozen=True)
class TwinsLossConfig:
    lam: float = 0.01
    gamma: float = 0.05
    invariance_form: str = "paper"
    normalization: str = "standardize"

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ParameterError(f"lam and gamma must be >= 0, got {self.lam}, {self.gamma}")
        if self.invariance_form not in INVARIANCE_FORMS:
            raise ParameterError(f"invariance_form must be one of {INVARIANCE_FORMS}")
        if self.normalization not in NORMALIZATIONS:
            raise ParameterError(f"normalization must be one of {NORMALIZATIONS}")


def standardize_batch(w: Node, tape: Tape | None = None, floor: float = 1e-8) -> Node:
    """Per-column mean 0 and population std 1 over the batch.

    Columns whose std is below ``floor`` are only mean-centred (unit divisor),
    so a collapsed dimension comes out as a zero column.
    """
    if not isinstance(w, Node):
        w = tape.constant(w)
    bs = w.shape[0]
    if bs < 2:
        raise ContractError(f"standardize_batch needs at least 2 rows, got {bs}")
    mean = T.scale(T.sum_rows(w), 1.0 / bs)
    centred = T.add_row(w, T.scale(mean, -1.0))
    var = T.scale(T.sum_rows(T.square(centred)), 1.0 / bs)
    return T.mul_row(centred, T.inv_std(var, floor))


def cross_correlation(wa: Node, wb: Node, tape: Tape | None = None) -> Node:
    """``C[j, k] = mean_i wa[i, j] * wb[i, k]`` for standardized batches."""
    if not isinstance(wa, Node):
        wa = tape.constant(wa)
    if not isinstance(wb, Node):
        wb = tape.constant(wb)
    if wa.shape != wb.shape:
        raise ShapeError(f"twin batches differ in shape: {wa.shape} vs {wb.shape}")
    return T.scale(T.matmul(T.transpose(wa), wb), 1.0 / wa.shape[0])


def raw_cross_correlation(wa: Node, wb: Node) -> Node:
    """Unnormalised batches: ``sum_i wa_ij wb_ik / (sum_i wa_ij^2 * sum_i wb_ik^2)``.

    The denominator has no square roots, so entries are not confined to [-1, 1].
    """
    if wa.shape != wb.shape:
        raise ShapeError(f"twin batches differ in shape: {wa.shape} vs {wb.shape}")
    num = T.matmul(T.transpose(wa), wb)
    sa = T.sum_rows(T.square(wa))
    sb = T.sum_rows(T.square(wb))
    return T.div(num, T.matmul(T.transpose(sa), sb))


def noisy_twins_loss(c: Node, cfg: TwinsLossConfig, tape: Tape | None = None) -> Node:
    """``sum_j inv(C_jj) + gamma * sum_{j != k} C_jk^2``.

    ``inv`` is ``1 - C_jj^2`` for the ``paper`` form and ``(1 - C_jj)^2`` for
    the ``barlow`` form.
    """
    if not isinstance(c, Node):
        c = tape.constant(c)
    d, d2 = c.shape
    if d != d2:
        raise ShapeError(f"cross-correlation must be square, got {c.shape}")
    diag = T.diag(c)
    if cfg.invariance_form == "paper":
        inv = T.sum_all(T.add_scalar(T.scale(T.square(diag), -1.0), 1.0))
    else:
        inv = T.sum_all(T.square(T.add_scalar(diag, -1.0)))
    off = T.sub(T.sum_all(T.square(c)), T.sum_all(T.square(diag)))
    return T.add(inv, T.scale(off, cfg.gamma))


def twins_loss_from_latents(wa: Node, wb: Node, cfg: TwinsLossConfig) -> Node:
    if cfg.normalization == "standardize":
        c = cross_correlation(standardize_batch(wa), standardize_batch(wb))
    else:
        c = raw_cross_correlation(wa, wb)
    return noisy_twins_loss(c, cfg)


def regularized_generator_loss(g_loss: Node, nt_loss: Node, lam: float) -> Node:
    if g_loss.tape is not nt_loss.tape:
        raise ContractError("both losses must live on the same tape")
    return T.add(g_loss, T.scale(nt_loss, lam))

