"""Initial model selection for the heterogeneous-effects model.

The sample is split by treatment arm, each arm is demeaned, a lasso is run
of ``y`` on ``x`` within each arm, and the union of the two selected sets
enters the model both in levels and interacted with treatment.
"""
from dataclasses import dataclass

import numpy as np

from .data import HetModelSpec, base_slot, interaction_slot, treatment_slot
from .lasso import cv_lasso, heteroskedastic_lasso

MIN_ARM_SIZE = 10


@dataclass
class ArmFit:
    mean_y: float
    mean_x: np.ndarray
    fit: object


@dataclass
class InitialSelection:
    model: HetModelSpec
    arms: tuple  # (control, treated)

    def lasso_theta(self, k):
        """Coefficients implied by the two arm-wise lasso fits.

        Control arm gives the levels; the treated-minus-control difference
        gives the main effect and interactions.
        """
        a0, a1 = self.arms
        theta = np.zeros(2 * k + 2)
        b0, b1 = a0.fit.coef, a1.fit.coef
        c0 = a0.mean_y - a0.mean_x @ b0
        c1 = a1.mean_y - a1.mean_x @ b1
        theta[0] = c0
        theta[base_slot(0):base_slot(k)] = b0
        theta[treatment_slot(k)] = c1 - c0
        theta[interaction_slot(0, k):interaction_slot(k, k)] = b1 - b0
        return theta


def _arm_fits(data, fitter):
    if not data.has_treatment:
        raise ValueError("initial model selection needs a treatment indicator")
    arms = []
    for arm in (0.0, 1.0):
        rows = data.d == arm
        n_arm = int(rows.sum())
        if n_arm < MIN_ARM_SIZE:
            raise ValueError(f"treatment arm d={int(arm)} has {n_arm} < {MIN_ARM_SIZE} observations")
        X, y = data.X[rows], data.y[rows]
        mx, my = X.mean(axis=0), y.mean()
        arms.append(ArmFit(float(my), mx, fitter(X - mx, y - my)))
    selected = sorted(set(arms[0].fit.support) | set(arms[1].fit.support))
    return InitialSelection(HetModelSpec.paired(selected), tuple(arms))


def initial_selection(data, c=1.1, gamma=None, k_init=5, tol=1e-6, refresh="post_lasso"):
    """Arm-wise heteroskedastic lasso selection, keeping the arm fits."""
    return _arm_fits(
        data, lambda X, y: heteroskedastic_lasso(X, y, c, gamma, k_init, tol, refresh=refresh)
    )


def select_initial_model(data, **kwargs):
    """The selected model: constant, main treatment effect, and both slots of
    every covariate picked in either arm."""
    return initial_selection(data, **kwargs).model


def cv_selection(data, folds=10, seed=0, tol=1e-4, max_r2=0.999):
    """Variant with the penalty of an unweighted lasso chosen per arm by CV.

    ``max_r2`` truncates each arm's penalty grid once the training fit
    reaches that R^2 (see :func:`undersmooth.lasso.cv_lasso`)."""
    ss = np.random.SeedSequence(seed)
    s0, s1 = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    seeds = iter((s0, s1))
    return _arm_fits(data, lambda X, y: cv_lasso(X, y, folds, next(seeds), tol=tol, max_r2=max_r2))
