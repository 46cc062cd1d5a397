"""Sparse finite-difference operators on the full node grid.

Grid functions are flattened in C order.  ``P`` is the diagonal projection
onto interior nodes; every operator that produces an equation residual has
its boundary rows projected out.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .geometry import CoefficientField, Domain, Face


def _forward_1d(m: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(m - 1), np.ones(m - 1)], [0, 1], shape=(m - 1, m)) / h


def _average_1d(m: int) -> sp.csr_matrix:
    return sp.diags([np.full(m - 1, 0.5), np.full(m - 1, 0.5)], [0, 1], shape=(m - 1, m))


def _central_1d(m: int, h: float) -> sp.lil_matrix:
    d = sp.lil_matrix((m, m))
    for i in range(1, m - 1):
        d[i, i - 1] = -0.5 / h
        d[i, i + 1] = 0.5 / h
    return d


def _second_1d(m: int, h: float) -> sp.lil_matrix:
    d = sp.lil_matrix((m, m))
    for i in range(1, m - 1):
        d[i, i - 1] = d[i, i + 1] = 1.0 / h**2
        d[i, i] = -2.0 / h**2
    return d


def gradient_1d(m: int, h: float) -> sp.csr_matrix:
    """First derivative, central inside and one-sided second order at both ends."""
    d = _central_1d(m, h)
    d[0, 0:3] = np.array([-1.5, 2.0, -0.5]) / h
    d[m - 1, m - 3 : m] = np.array([0.5, -2.0, 1.5]) / h
    return d.tocsr()


def second_1d_full(m: int, h: float) -> sp.csr_matrix:
    """Second derivative, central inside and one-sided second order at both ends."""
    d = _second_1d(m, h)
    d[0, 0:4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
    d[m - 1, m - 4 : m] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
    return d.tocsr()


class GridOperators:
    """Difference operators for a :class:`Domain` and coefficient field."""

    def __init__(self, domain: Domain, field: CoefficientField):
        self.domain = domain
        self.field = field
        self.n = domain.n
        self.shape = domain.shape
        self.size = domain.size
        self._deriv: dict = {}

    def _along(self, mat1d, axis: int) -> sp.csr_matrix:
        mats = [sp.identity(m, format="csr") for m in self.shape]
        mats[axis] = sp.csr_matrix(mat1d)
        out = mats[0]
        for m in mats[1:]:
            out = sp.kron(out, m, format="csr")
        return out.tocsr()

    @cached_property
    def interior(self) -> np.ndarray:
        return self.domain.interior_mask.ravel()

    @cached_property
    def P(self) -> sp.csr_matrix:
        return sp.diags(self.interior.astype(float)).tocsr()

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.where(self.interior, u, 0.0)

    @cached_property
    def coefficient_nodes(self) -> np.ndarray:
        """``a_ij`` at nodes, shape ``(size, n, n)``."""
        return self.field.on_grid(self.domain).reshape(self.size, self.n, self.n)

    @cached_property
    def A(self) -> sp.csr_matrix:
        """Divergence-form ``sum_ij d_i(a_ij d_j .)`` with Dirichlet rows removed.

        Diagonal terms use the compact flux form with ``a_ii`` averaged to
        cell faces; mixed terms use central differences.  The assembled
        matrix is symmetric.
        """
        h = self.domain.h
        a = self.coefficient_nodes
        total = sp.csr_matrix((self.size, self.size))
        for i in range(self.n):
            m = self.shape[i]
            dp = self._along(_forward_1d(m, h), i)
            av = self._along(_average_1d(m), i)
            face = av @ a[:, i, i]
            total = total - dp.T @ sp.diags(face) @ dp
        for i in range(self.n):
            for j in range(self.n):
                if i != j:
                    di = self.P @ self._along(_central_1d(self.shape[i], h), i)
                    dj = self.P @ self._along(_central_1d(self.shape[j], h), j)
                    total = total - di.T @ sp.diags(a[:, i, j]) @ dj
        return (self.P @ total @ self.P).tocsr()

    def derivative(self, alpha) -> sp.csr_matrix:
        """Interior-row stencil for ``d^alpha`` (central differences)."""
        alpha = tuple(int(v) for v in alpha)
        if alpha not in self._deriv:
            h = self.domain.h
            mat = sp.identity(self.size, format="csr")
            for axis, order in enumerate(alpha):
                m = self.shape[axis]
                if order == 1:
                    mat = self._along(_central_1d(m, h), axis) @ mat
                elif order == 2:
                    mat = self._along(_second_1d(m, h), axis) @ mat
            self._deriv[alpha] = (self.P @ mat).tocsr()
        return self._deriv[alpha]

    def full_derivative(self, alpha) -> sp.csr_matrix:
        """``d^alpha`` on every node, one-sided second order at the boundary."""
        key = ("full",) + tuple(alpha)
        if key not in self._deriv:
            h = self.domain.h
            mat = sp.identity(self.size, format="csr")
            for axis, order in enumerate(alpha):
                m = self.shape[axis]
                if order == 1:
                    mat = self._along(gradient_1d(m, h), axis) @ mat
                elif order == 2:
                    mat = self._along(second_1d_full(m, h), axis) @ mat
                elif order > 2:
                    d1 = self._along(gradient_1d(m, h), axis)
                    for _ in range(order):
                        mat = d1 @ mat
            self._deriv[key] = mat.tocsr()
        return self._deriv[key]

    def spatial(self, g) -> np.ndarray:
        """Sample a spatial factor (callable or scalar) on the flattened grid."""
        if callable(g):
            return np.asarray(g(self.domain.points), float).ravel()
        return np.full(self.size, float(g))

    @cached_property
    def trace(self) -> "TraceOperator":
        return TraceOperator(self)


class TraceOperator:
    """Conormal derivative ``sum_j a_pj d_j u * sign`` on every face node.

    Entries are stored face by face (order of ``domain.faces``) including
    corners, so a corner appears once per adjacent face with that face's
    normal and half the tangential quadrature weight.
    """

    def __init__(self, ops: GridOperators):
        self.ops = ops
        dom = ops.domain
        rows = []
        labels = []
        weights = []
        nodes = []
        grads = [ops._along(gradient_1d(m, dom.h), ax) for ax, m in enumerate(dom.shape)]
        a = ops.coefficient_nodes
        for k, face in enumerate(dom.faces):
            idx = np.ravel_multi_index(dom.face_index(face), dom.shape)
            sel = sp.csr_matrix(
                (np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), ops.size)
            )
            block = sp.csr_matrix((len(idx), ops.size))
            for j in range(dom.n):
                coef = face.sign * a[idx, face.axis, j]
                block = block + sp.diags(coef) @ sel @ grads[j]
            rows.append(block)
            labels.append(np.full(len(idx), k))
            weights.append(dom.face_weights(face))
            nodes.append(idx)
        self.matrix = sp.vstack(rows).tocsr()
        self.face_of = np.concatenate(labels)
        self.weights = np.concatenate(weights)
        self.nodes = np.concatenate(nodes)
        self.faces: tuple[Face, ...] = dom.faces

    @property
    def count(self) -> int:
        return self.matrix.shape[0]

    def mask_for(self, face_names) -> np.ndarray:
        names = set(face_names)
        keep = np.array([f.name in names for f in self.faces])
        return keep[self.face_of]

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u
