import numpy as np
import pytest

from risfbl.forms import QuadraticForm, VariableLayout


@pytest.fixture
def layout():
    return VariableLayout([("z", "c", 3), ("w", "c", 2), ("t", "r", 1)])


def test_pack_unpack_roundtrip(layout, rng):
    vals = {
        "z": rng.standard_normal(3) + 1j * rng.standard_normal(3),
        "w": rng.standard_normal(2) + 1j * rng.standard_normal(2),
        "t": np.array([1.7]),
    }
    v = layout.pack(vals)
    assert v.size == layout.size == 3 * 2 + 2 * 2 + 1
    out = layout.unpack(v)
    assert np.allclose(out["z"], vals["z"])
    assert np.allclose(out["w"], vals["w"])
    assert np.allclose(out["t"], vals["t"])


def test_linear_complex_matches_formula(layout, rng):
    q = QuadraticForm(layout)
    c = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    q.add_linear_complex("z", c)
    z = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v = layout.pack({"z": z, "w": np.zeros(2, complex), "t": [0.0]})
    assert abs(q.value(v) - 2 * np.real(np.vdot(c, z))) < 1e-12


def test_sq_affine_matches_formula(layout, rng):
    q = QuadraticForm(layout)
    a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    off = 0.3 - 0.8j
    w = 1.7
    q.add_sq_affine(w, {"z": a, "w": b}, off)
    z = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    ww = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    v = layout.pack({"z": z, "w": ww, "t": [0.0]})
    expect = -w * abs(off + np.dot(a, z) + np.dot(b, ww)) ** 2
    assert abs(q.value(v) - expect) < 1e-12


def test_re_inner_matches_formula(layout, rng):
    q = QuadraticForm(layout)
    a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    alpha = 1.2 - 0.4j
    off = 0.5 + 0.25j
    q.add_re_inner(0.9, alpha, {"z": a}, off)
    z = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v = layout.pack({"z": z, "w": np.zeros(2, complex), "t": [0.0]})
    expect = 0.9 * np.real(np.conj(alpha) * (off + np.dot(a, z)))
    assert abs(q.value(v) - expect) < 1e-12


def test_grad_matches_finite_differences(layout, rng):
    q = QuadraticForm(layout, const=0.4)
    q.add_linear_complex("z", rng.standard_normal(3) + 1j * rng.standard_normal(3))
    q.add_linear_real("t", [0.7])
    q.add_sq_affine(
        0.8,
        {"z": rng.standard_normal(3) + 1j * rng.standard_normal(3)},
        0.1 + 0.2j,
    )
    q.add_sq_norm(0.5, "w")
    v = rng.standard_normal(layout.size)
    g = q.grad(v)
    h = 1e-6
    for idx in range(layout.size):
        e = np.zeros(layout.size)
        e[idx] = h
        fd = (q.value(v + e) - q.value(v - e)) / (2 * h)
        assert abs(fd - g[idx]) < 1e-6


def test_hessian_negative_semidefinite(layout, rng):
    q = QuadraticForm(layout)
    for _ in range(4):
        q.add_sq_affine(
            float(rng.uniform(0.1, 2.0)),
            {"z": rng.standard_normal(3) + 1j * rng.standard_normal(3),
             "w": rng.standard_normal(2) + 1j * rng.standard_normal(2)},
            complex(rng.standard_normal(), rng.standard_normal()),
        )
    q.add_sq_norm(0.3, "z")
    H = -q.hess_neg()
    eig = np.linalg.eigvalsh(H)
    assert np.all(eig <= 1e-12)
    with pytest.raises(ValueError):
        q.add_sq_affine(-1.0, {"z": np.ones(3)})
    with pytest.raises(ValueError):
        q.scale(-2.0)


def test_add_and_copy_independent(layout, rng):
    a = QuadraticForm(layout, const=1.0)
    a.add_sq_norm(1.0, "z")
    b = a.copy()
    b.add_const(5.0)
    b.add_sq_norm(2.0, "w")
    v = rng.standard_normal(layout.size)
    assert abs(a.value(v) - (1.0 - np.sum(v[layout.re_slice("z")] ** 2)
                             - np.sum(v[layout.im_slice("z")] ** 2))) < 1e-12
    combined = a.copy()
    combined.add(b, 2.0)
    assert abs(combined.value(v) - (a.value(v) + 2.0 * b.value(v))) < 1e-12


def test_dump_contains_structure(layout):
    q = QuadraticForm(layout, const=2.5)
    q.add_linear_real("t", [1.0])
    q.add_sq_norm(1.0, "z", indices=[0])
    text = q.dump("objective")
    assert "objective" in text and "const=2.5" in text and "diag" in text
