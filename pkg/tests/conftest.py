import hypothesis
import numpy as np
import pytest

from relabel_distill.dataio import synth_shapes
from relabel_distill.numkit import Rng
from relabel_distill.teacher import TeacherConfig, train_teacher
from relabel_distill.vae import VaeConfig, train_vae

np.seterr(all="warn", under="ignore")

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def small_shapes():
    return synth_shapes(400, 16, 16, 2, Rng(7, 0))


@pytest.fixture(scope="session")
def small_teacher(small_shapes):
    return train_teacher(small_shapes, TeacherConfig(), Rng(7, 1))


@pytest.fixture(scope="session")
def small_vae(small_shapes):
    return train_vae(small_shapes, VaeConfig(epochs=5), Rng(7, 2))
