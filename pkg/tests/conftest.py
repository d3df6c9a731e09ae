from __future__ import annotations

import numpy as np
import pytest

from impactsim.dynamics import RobotModel
from impactsim.reffield import (
    AnteFieldParams,
    ImpactLineGeometry,
    PostFieldParams,
    ReferenceFields,
)


def make_model(**overrides) -> RobotModel:
    params = dict(
        link_lengths=(0.4, 0.4, 0.1),
        link_masses=(2.0, 2.0, 0.5),
        link_inertias=(2.0 * 0.4**2 / 12.0, 2.0 * 0.4**2 / 12.0, 0.5 * 0.1**2 / 12.0),
        cog_offsets=(0.2, 0.2, 0.05),
        plank_hinge=(0.1, 0.35),
        plank_length=0.6,
        plank_inertia=0.05,
        plank_stiffness=2.0,
        plank_damping=0.05,
        contact_offsets=((-0.05, 0.0), (0.05, 0.0)),
        gravity=(0.0, -9.81),
        tau_min=(-60.0, -40.0, -20.0),
        tau_max=(60.0, 40.0, 20.0),
    )
    params.update(overrides)
    return RobotModel(**params)


@pytest.fixture(scope="session")
def model() -> RobotModel:
    return make_model()


@pytest.fixture(scope="session")
def free_model() -> RobotModel:
    """Model with gravity and plank spring/damping switched off."""
    return make_model(gravity=(0.0, 0.0), plank_stiffness=0.0, plank_damping=0.0)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)


def make_geometry(**overrides) -> ImpactLineGeometry:
    params = dict(point=(0.1, 0.35), tangent=(1.0, 0.0), normal=(0.0, 1.0), sign=1.0)
    params.update(overrides)
    return ImpactLineGeometry(**params)


def make_ante_params(**overrides) -> AnteFieldParams:
    params = dict(p_imp=(0.4, 0.35), v_imp=(0.0, -0.5), alpha=2.0, k_theta=5.0,
                  q4_est=0.0, q4dot_est=0.0)
    params.update(overrides)
    return AnteFieldParams(**params)


def make_post_params(**overrides) -> PostFieldParams:
    params = dict(p_f=(0.45, 0.28), k_f=2.0, delta=0.05, n_samples=11,
                  rbf_eps=12.5, s_lo=0.1, s_hi=0.5)
    params.update(overrides)
    return PostFieldParams(**params)


@pytest.fixture(scope="session")
def fields(model) -> ReferenceFields:
    return ReferenceFields.build(model, make_geometry(), make_ante_params(),
                                 make_post_params())
