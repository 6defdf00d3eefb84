import math

import numpy as np
import pytest

from model_surfaces import catenoid_model, ic_kind, make_model, sphere_atlas
from models import FamilySpec, ModelKind, ModelTag, PipelineConfig, TreeSpec
from synthesizer import star_tree, synthesize_family

FOUR_PI = 4 * math.pi
EIGHT_PI = 8 * math.pi

GENUS_TWO_TREE = TreeSpec(parent={"r": None, "a": "r", "c1": "a", "c2": "a", "c3": "r"})

# default lattice, four members
FAST_FAMILY = {
    "k_range": (0, 3),
    "resolution": 64,
}


@pytest.fixture
def unit_sphere():
    return make_model(ModelKind(tag=ModelTag.S))


@pytest.fixture
def catenoid():
    return catenoid_model()


@pytest.fixture
def ic1():
    return make_model(ic_kind(ModelTag.IC1))


@pytest.fixture
def ic2():
    return make_model(ic_kind(ModelTag.IC2))


@pytest.fixture
def outward_sphere():
    return sphere_atlas(orientation=-1)


@pytest.fixture(scope="session")
def genus_one_spec():
    return FamilySpec(tree=star_tree(1), genus=1, **FAST_FAMILY)


@pytest.fixture(scope="session")
def genus_two_spec():
    return FamilySpec(tree=GENUS_TWO_TREE, genus=2, **FAST_FAMILY)


@pytest.fixture(scope="session")
def genus_one_family(genus_one_spec):
    return synthesize_family(genus_one_spec)


@pytest.fixture(scope="session")
def genus_two_family(genus_two_spec):
    return synthesize_family(genus_two_spec)


@pytest.fixture(scope="session")
def tangent_family():
    spec = FamilySpec(tree=star_tree(1), genus=1, configuration="tangent", **FAST_FAMILY)
    return synthesize_family(spec)


@pytest.fixture
def pipeline_config(tmp_path):
    return PipelineConfig(resolution=64, output_dir=str(tmp_path / "out"))


def rng():
    return np.random.default_rng(20240611)
