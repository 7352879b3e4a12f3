import warnings

import numpy as np
import pytest

from ligamesh.errors import NonConvergence
from ligamesh.fitting import FitConfig, reference_gp
from ligamesh.synthgen import SynthFamilyConfig, generate_bone_family


@pytest.fixture(scope="session")
def family():
    return generate_bone_family(SynthFamilyConfig())


@pytest.fixture(scope="session")
def bone(family):
    return family[0]


@pytest.fixture(scope="session")
def bone_gp(bone):
    return reference_gp(bone.mesh, bone.landmarks, FitConfig())


@pytest.fixture(autouse=True)
def _quiet_nonconvergence():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergence)
        yield


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    from ligamesh.registration import axis_angle_matrix

    axis = rng.normal(size=3)
    return axis_angle_matrix(axis / np.linalg.norm(axis), rng.uniform(0.0, max_angle))
