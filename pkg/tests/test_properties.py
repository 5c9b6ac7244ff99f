"""Randomised properties checked with hypothesis."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swimfsi.config import SimConfig, dump_config, parse_config
from swimfsi.extension import _det, cofactor
from swimfsi.kinematics import RigidState, integrate_rotation, project_velocity, rotation_exp

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
mat3 = arrays(np.float64, (3, 3), elements=finite)


@given(mat3)
def test_adjugate_identity(A):
    scale = max(1.0, np.abs(A).max() ** 3)
    assert np.abs(A @ cofactor(A).T - _det(A) * np.eye(3)).max() <= 1e-12 * scale


@given(mat3, mat3)
def test_cofactor_is_multiplicative(A, B):
    scale = max(1.0, np.abs(A).max() ** 2 * np.abs(B).max() ** 2)
    assert np.abs(cofactor(A @ B) - cofactor(A) @ cofactor(B)).max() <= 1e-10 * scale


@given(vec3)
def test_rotation_exp_is_orthonormal(w):
    R = rotation_exp(w)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-13
    assert abs(np.linalg.det(R) - 1) < 1e-13
    assert np.allclose(R @ w, w, atol=1e-12)


@given(vec3, vec3)
def test_rotation_group_law_on_a_common_axis(w, s):
    a, b = w[0] * np.array([0.0, 0.0, 1.0]), s[0] * np.array([0.0, 0.0, 1.0])
    assert np.allclose(rotation_exp(a) @ rotation_exp(b), rotation_exp(a + b), atol=1e-12)


@settings(max_examples=20)
@given(vec3, st.floats(1e-4, 1e-1))
def test_rotation_integration_stays_orthonormal(w, dt):
    R = np.eye(3)
    for _ in range(200):
        R = integrate_rotation(R, w, dt)
    assert RigidState(np.zeros(3), np.zeros(3), R, np.zeros(3)).orthonormality_defect() < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), vec3, vec3)
def test_projection_properties(solid, seed, a, b):
    rng = np.random.default_rng(seed)
    X = solid.nodes + 0.01 * rng.standard_normal(solid.nodes.shape)
    V = rng.standard_normal(X.shape)
    P = project_velocity(solid, 1.0, X, V)
    assert np.abs(project_velocity(solid, 1.0, X, P) - P).max() <= 1e-11 * max(1.0, np.abs(P).max())
    rigid = a + np.cross(b, X)
    assert np.abs(project_velocity(solid, 1.0, X, V + rigid) - P).max() <= 1e-10 * max(1.0, np.abs(rigid).max())


@given(
    st.floats(1e-4, 0.1),
    st.floats(0.2, 5.0),
    st.sampled_from(["none", "dilation", "travelling_wave"]),
    st.floats(0.0, 0.05),
    vec3,
)
def test_config_round_trip(dt, t_end, family, amp, h1):
    cfg = SimConfig().with_values(
        time={"dt": dt, "t_end": t_end},
        deformation={"family": family, "amplitude": amp},
        initial={"h1": tuple(float(v) for v in h1)},
    )
    assert parse_config(dump_config(cfg)) == cfg
