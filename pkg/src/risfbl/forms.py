"""Concave quadratic forms over named complex/real variable blocks.

Complex blocks are embedded into reals as [Re; Im]. A form is

    q(v) = const + lin . v - sum_j w_j * (row_j . v + off_j)^2 - sum_i diag_i * v_i^2

with all w_j >= 0 and diag >= 0, so q is concave by construction. This is
the canonical carrier for rate surrogates, objectives and constraints
(every constraint is written q(v) >= 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["VariableLayout", "QuadraticForm"]


class VariableLayout:
    """Ordered named blocks; complex blocks of dim d occupy 2d reals."""

    def __init__(self, blocks):
        # blocks: iterable of (name, kind, dim), kind 'c' (complex) or 'r' (real)
        self.blocks = []
        self._index = {}
        offset = 0
        for name, kind, dim in blocks:
            if kind not in ("c", "r"):
                raise ValueError(f"block kind must be 'c' or 'r', got {kind!r}")
            if name in self._index:
                raise ValueError(f"duplicate block name {name!r}")
            width = 2 * dim if kind == "c" else dim
            self._index[name] = (kind, dim, offset)
            self.blocks.append((name, kind, dim))
            offset += width
        self.size = offset

    def __contains__(self, name):
        return name in self._index

    def block(self, name):
        return self._index[name]

    def re_slice(self, name):
        kind, dim, off = self._index[name]
        return slice(off, off + dim)

    def im_slice(self, name):
        kind, dim, off = self._index[name]
        if kind != "c":
            raise ValueError(f"block {name!r} is real")
        return slice(off + dim, off + 2 * dim)

    def pack(self, values):
        v = np.zeros(self.size)
        for name, kind, dim in self.blocks:
            arr = np.asarray(values[name])
            if kind == "c":
                v[self.re_slice(name)] = arr.real
                v[self.im_slice(name)] = arr.imag
            else:
                v[self.re_slice(name)] = arr.real
        return v

    def unpack(self, v):
        out = {}
        for name, kind, dim in self.blocks:
            if kind == "c":
                out[name] = v[self.re_slice(name)] + 1j * v[self.im_slice(name)]
            else:
                out[name] = v[self.re_slice(name)].copy()
        return out

    def with_extra(self, extra_blocks):
        """New layout with additional blocks appended."""
        return VariableLayout(self.blocks + list(extra_blocks))


class QuadraticForm:
    def __init__(self, layout: VariableLayout, const=0.0):
        self.layout = layout
        self.const = float(const)
        self.lin = np.zeros(layout.size)
        self.diag = np.zeros(layout.size)
        self._rows = []
        self._weights = []
        self._offsets = []
        self._frozen = None

    # ---- construction ----------------------------------------------------------

    def _dirty(self):
        self._frozen = None

    def add_const(self, c):
        self.const += float(c)
        self._dirty()

    def add_linear_complex(self, block, coeff):
        """Add 2*Re{coeff^H z_block}."""
        coeff = np.asarray(coeff, dtype=complex)
        self.lin[self.layout.re_slice(block)] += 2.0 * coeff.real
        self.lin[self.layout.im_slice(block)] += 2.0 * coeff.imag
        self._dirty()

    def add_linear_real(self, block, coeff):
        self.lin[self.layout.re_slice(block)] += np.asarray(coeff, dtype=float)
        self._dirty()

    def add_re_inner(self, weight, alpha, parts, offset=0.0 + 0.0j):
        """Add weight * Re{conj(alpha) * A(v)} for the affine A = offset + sum parts.

        parts maps complex block names to coefficient vectors a with
        A(v) += a . z_block.
        """
        self.const += weight * float(np.real(np.conj(alpha) * offset))
        for block, a in parts.items():
            # weight*Re{conj(alpha) a.z} = 2 Re{c^H z}, c = 0.5*weight*alpha*conj(a)
            self.add_linear_complex(block, 0.5 * weight * alpha * np.conj(np.asarray(a)))
        self._dirty()

    def add_sq_affine(self, weight, parts, offset=0.0 + 0.0j):
        """Subtract weight * |offset + sum_b a_b . z_b|^2 (weight >= 0)."""
        if weight < 0:
            raise ValueError("squared-term weight must be nonnegative")
        if weight == 0.0:
            return
        n = self.layout.size
        row_re = np.zeros(n)
        row_im = np.zeros(n)
        for block, a in parts.items():
            a = np.asarray(a, dtype=complex)
            rs, ims = self.layout.re_slice(block), self.layout.im_slice(block)
            row_re[rs] += a.real
            row_re[ims] += -a.imag
            row_im[rs] += a.imag
            row_im[ims] += a.real
        offset = complex(offset)
        self._rows.append(row_re)
        self._weights.append(weight)
        self._offsets.append(offset.real)
        if np.any(row_im) or offset.imag != 0.0:
            self._rows.append(row_im)
            self._weights.append(weight)
            self._offsets.append(offset.imag)
        self._dirty()

    def add_sq_affine_real(self, weight, parts, offset=0.0):
        """Subtract weight * (offset + sum_b a_b . v_block)^2 over real slices."""
        if weight < 0:
            raise ValueError("squared-term weight must be nonnegative")
        if weight == 0.0:
            return
        row = np.zeros(self.layout.size)
        for block, a in parts.items():
            row[self.layout.re_slice(block)] += np.asarray(a, dtype=float)
        self._rows.append(row)
        self._weights.append(weight)
        self._offsets.append(float(offset))
        self._dirty()

    def add_sq_norm(self, weight, block, indices=None):
        """Subtract weight * ||z_block||^2 (or of the selected entries)."""
        if weight < 0:
            raise ValueError("squared-term weight must be nonnegative")
        kind, dim, off = self.layout.block(block)
        idx = np.arange(dim) if indices is None else np.asarray(indices)
        self.diag[off + idx] += weight
        if kind == "c":
            self.diag[off + dim + idx] += weight
        self._dirty()

    def scale(self, c):
        if c < 0:
            raise ValueError("scale factor must be nonnegative to preserve concavity")
        self.const *= c
        self.lin *= c
        self.diag *= c
        self._weights = [w * c for w in self._weights]
        self._dirty()
        return self

    def add(self, other, factor=1.0):
        if factor < 0:
            raise ValueError("combination factor must be nonnegative")
        self.const += factor * other.const
        self.lin += factor * other.lin
        self.diag += factor * other.diag
        self._rows.extend(r.copy() for r in other._rows)
        self._weights.extend(factor * w for w in other._weights)
        self._offsets.extend(other._offsets)
        self._dirty()
        return self

    def copy(self):
        q = QuadraticForm(self.layout, self.const)
        q.lin = self.lin.copy()
        q.diag = self.diag.copy()
        q._rows = [r.copy() for r in self._rows]
        q._weights = list(self._weights)
        q._offsets = list(self._offsets)
        return q

    # ---- evaluation ------------------------------------------------------------

    def _freeze(self):
        if self._frozen is None:
            if self._rows:
                R = np.vstack(self._rows)
                w = np.asarray(self._weights)
                d = np.asarray(self._offsets)
            else:
                R = np.zeros((0, self.layout.size))
                w = np.zeros(0)
                d = np.zeros(0)
            self._frozen = (R, w, d)
        return self._frozen

    def value(self, v):
        R, w, d = self._freeze()
        out = self.const + self.lin @ v - float(self.diag @ (v * v))
        if R.shape[0]:
            aff = R @ v + d
            out -= float(w @ (aff * aff))
        return out

    def value_many(self, V):
        """Vectorized value over rows of V (N, n) -> (N,)."""
        R, w, d = self._freeze()
        V = np.asarray(V)
        out = self.const + V @ self.lin - (V * V) @ self.diag
        if R.shape[0]:
            aff = V @ R.T + d
            out = out - (aff * aff) @ w
        return out

    def grad(self, v):
        R, w, d = self._freeze()
        g = self.lin - 2.0 * self.diag * v
        if R.shape[0]:
            g = g - 2.0 * R.T @ (w * (R @ v + d))
        return g

    def hess_neg(self):
        """Positive-semidefinite -Hessian (constant)."""
        R, w, d = self._freeze()
        H = np.diag(2.0 * self.diag)
        if R.shape[0]:
            H = H + 2.0 * (R.T * w) @ R
        return H

    def value_at(self, values):
        return self.value(self.layout.pack(values))

    def is_linear(self):
        R, w, _ = self._freeze()
        return R.shape[0] == 0 and not np.any(self.diag)

    def dump(self, name="form"):
        """Plain-text canonical rendering (for offline cross-checking)."""
        R, w, d = self._freeze()
        lines = [f"{name}: const={self.const!r}"]
        nz = np.nonzero(self.lin)[0]
        if nz.size:
            lines.append("  lin: " + " ".join(f"[{i}]={self.lin[i]!r}" for i in nz))
        nz = np.nonzero(self.diag)[0]
        if nz.size:
            lines.append("  diag: " + " ".join(f"[{i}]={self.diag[i]!r}" for i in nz))
        for j in range(R.shape[0]):
            nzr = np.nonzero(R[j])[0]
            row = " ".join(f"[{i}]={R[j, i]!r}" for i in nzr)
            lines.append(f"  sq w={w[j]!r} off={d[j]!r}: {row}")
        return "\n".join(lines)
