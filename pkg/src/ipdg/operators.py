"""DG building blocks and the internal-penalty operator.

The element-local pieces (lumped mass, stiffness, lifting) combine with
mortar exchange of boundary fluxes into a compact nearest-neighbor operator
over the primal variables; the auxiliary variables are reconstructed
internally each application. An OperatorHandle bundles mesh, system,
background, boundary conditions and the discretization switches, and can
also apply the full first-order operator over (auxiliary, primal) blocks
for Schur-complement checks.

Application runs in two phases. Phase one forms auxiliary fluxes of the
primal field, exchanges their normal projections across mortars (ghosts on
external faces) and reconstructs the auxiliary field with mass-lumped
lifting of the flux jumps. Phase two forms primal fluxes, exchanges
derivative-based and penalty-term data, and assembles the residual in
strong or strong-weak form.

Flat DoF layout everywhere: variables-major, then elements in mesh order,
then grid points with the first dimension fastest.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .background import face_geometry
from .basis import differentiation_matrix
from .errors import (
    ConfigurationError,
    DegenerateGeometryError,
    SingularPointError,
    TopologyError,
    UnsupportedFeatureError,
)
from .mesh import face_shape, face_slices, jacobian_at, mortar_topology
from .mortars import face_restriction_family, prolongation_matrix

__all__ = [
    "FieldVector",
    "BoundaryData",
    "OperatorHandle",
    "lumped_mass_diag",
    "apply_stiffness",
    "apply_lifting",
    "penalty_sigma",
    "auxiliary_numerical_flux",
    "primal_numerical_flux",
    "exterior_ghost_data",
]


def _flatten_trailing(arr, k):
    """Flatten the last k axes, first of them varying fastest."""
    arr = np.asarray(arr)
    if k == 0:
        return arr[..., None]
    if k == 1:
        return arr
    lead = arr.ndim - k
    perm = tuple(range(lead)) + tuple(range(arr.ndim - 1, lead - 1, -1))
    return arr.transpose(perm).reshape(arr.shape[:lead] + (-1,))


def _unflatten_trailing(arr, shape):
    """Inverse of _flatten_trailing for a known trailing grid shape."""
    shape = tuple(shape)
    k = len(shape)
    if k == 0:
        return arr[..., 0]
    if k == 1:
        return arr
    lead = arr.ndim - 1
    rev = arr.reshape(arr.shape[:-1] + tuple(reversed(shape)))
    perm = tuple(range(lead)) + tuple(range(rev.ndim - 1, lead - 1, -1))
    return rev.transpose(perm)


def _apply_matrix(mat, arr, grid_axis, grid_ndim):
    """Apply a 1D nodal matrix along one grid axis of a (..., *grid) array."""
    axis = arr.ndim - grid_ndim + grid_axis
    out = np.tensordot(mat, arr, axes=(1, axis))
    return np.moveaxis(out, 0, axis)


def _contract_normal(normal, fluxes):
    """n_i F^i... over the flux direction axis: (c, d, n) -> (c, n)."""
    return np.einsum("i...,ci...->c...", normal, fluxes)


class FieldVector:
    """Mesh-wide nodal data: one (n_components, *grid) array per element."""

    __slots__ = ("mesh", "n_components", "arrays")

    def __init__(self, mesh, n_components: int, arrays):
        if len(arrays) != len(mesh.elements):
            raise ValueError("one array per mesh element required")
        for arr, el in zip(arrays, mesh.elements):
            if arr.shape != (n_components,) + el.grid_shape:
                raise ValueError(
                    f"element array shape {arr.shape} does not match "
                    f"{(n_components,) + el.grid_shape}"
                )
        self.mesh = mesh
        self.n_components = n_components
        self.arrays = list(arrays)

    @classmethod
    def zeros(cls, mesh, n_components: int) -> "FieldVector":
        return cls(
            mesh,
            n_components,
            [np.zeros((n_components,) + el.grid_shape) for el in mesh.elements],
        )

    @classmethod
    def from_flat(cls, mesh, n_components: int, flat) -> "FieldVector":
        flat = np.asarray(flat, dtype=float).ravel()
        sizes = [el.n_points for el in mesh.elements]
        total = sum(sizes)
        if flat.size != n_components * total:
            raise ValueError(
                f"flat vector has {flat.size} entries, expected "
                f"{n_components * total}"
            )
        arrays = [
            np.empty((n_components,) + el.grid_shape) for el in mesh.elements
        ]
        pos = 0
        for c in range(n_components):
            for k, el in enumerate(mesh.elements):
                chunk = flat[pos:pos + sizes[k]]
                arrays[k][c] = chunk.reshape(el.grid_shape, order="F")
                pos += sizes[k]
        return cls(mesh, n_components, arrays)

    def to_flat(self) -> np.ndarray:
        parts = []
        for c in range(self.n_components):
            for arr in self.arrays:
                parts.append(arr[c].ravel(order="F"))
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def n_dofs(self) -> int:
        return self.n_components * sum(el.n_points for el in self.mesh.elements)

    def copy(self) -> "FieldVector":
        return FieldVector(
            self.mesh, self.n_components, [a.copy() for a in self.arrays]
        )

    def __add__(self, other):
        return FieldVector(
            self.mesh,
            self.n_components,
            [a + b for a, b in zip(self.arrays, other.arrays)],
        )

    def __sub__(self, other):
        return FieldVector(
            self.mesh,
            self.n_components,
            [a - b for a, b in zip(self.arrays, other.arrays)],
        )

    def __mul__(self, scalar):
        return FieldVector(
            self.mesh, self.n_components, [a * scalar for a in self.arrays]
        )

    __rmul__ = __mul__


@dataclass
class BoundaryData:
    """Per-face exchange payload, sampled on the mortar points.

    aux_flux:     n_i F^i of the auxiliary-variable fluxes, (n_aux, n)
    deriv_flux:   n_i F^i_u of the strong derivative of those fluxes minus
                  the extra auxiliary source, (n_primal, n)
    penalty_flux: n_i F^i_u applied to aux_flux, (n_primal, n); for ghost
                  data this field stores the value the receiving side
                  combines directly
    trace:        primal trace values, (n_primal, n)

    All entries are computed with the owning side's outward normal before
    projection to the mortar. Fields not yet available in a phase may be
    None.
    """

    aux_flux: Optional[np.ndarray] = None
    deriv_flux: Optional[np.ndarray] = None
    penalty_flux: Optional[np.ndarray] = None
    trace: Optional[np.ndarray] = None


def _check_match(a, b, what):
    if a is None or b is None:
        raise TopologyError(f"missing {what} in boundary data exchange")
    if np.shape(a) != np.shape(b):
        raise TopologyError(
            f"{what} shapes {np.shape(a)} vs {np.shape(b)} do not share "
            "mortar points"
        )


def auxiliary_numerical_flux(interior: BoundaryData, exterior: BoundaryData):
    """Average of the two sides' auxiliary boundary fluxes.

    Both sides project with their own outward normal, so the average is a
    difference of the stored values.
    """
    _check_match(interior.aux_flux, exterior.aux_flux, "auxiliary flux")
    return 0.5 * (interior.aux_flux - exterior.aux_flux)


def primal_numerical_flux(interior: BoundaryData, exterior: BoundaryData, sigma):
    """Averaged derivative-based flux minus the sigma-weighted penalty."""
    _check_match(interior.deriv_flux, exterior.deriv_flux, "derivative flux")
    _check_match(interior.penalty_flux, exterior.penalty_flux, "penalty flux")
    return 0.5 * (interior.deriv_flux - exterior.deriv_flux) - sigma * (
        interior.penalty_flux - exterior.penalty_flux
    )


def exterior_ghost_data(
    interior: BoundaryData,
    bc,
    system,
    background,
    x,
    normal,
    v_trace=None,
    linearized_traces=None,
    aux_boundary=None,
) -> BoundaryData:
    """Ghost exterior data on an external face.

    Boundary values initialize to the interior data and the condition
    overwrites its kind's slot: dirichlet-kind conditions replace the
    auxiliary boundary flux with n F_v(u_b), neumann-kind conditions replace
    the derivative flux with the boundary flux value. The exterior is then
    interior minus twice the boundary value. With `linearized_traces`
    (u0, v0) the condition's linearized data is used instead, making the
    ghost map homogeneous.
    """
    if aux_boundary is None:
        if bc.kind == "dirichlet":
            if linearized_traces is not None:
                u0, v0 = linearized_traces
                ub = bc.linearized_values(x, normal, u0, v0, interior.trace, None)
            else:
                ub = bc.values(x, normal, interior.trace, None)
            aux_boundary = _contract_normal(
                normal, system.auxiliary_flux(ub, x, background)
            )
        else:
            aux_boundary = interior.aux_flux
    if bc.kind == "neumann":
        if linearized_traces is not None:
            u0, v0 = linearized_traces
            deriv_boundary = bc.linearized_values(
                x, normal, u0, v0, interior.trace, v_trace
            )
        else:
            deriv_boundary = bc.values(x, normal, interior.trace, v_trace)
    else:
        deriv_boundary = interior.deriv_flux
    penalty_boundary = _contract_normal(
        normal, system.primal_flux(aux_boundary, x, background)
    )
    return BoundaryData(
        aux_flux=interior.aux_flux - 2.0 * aux_boundary,
        deriv_flux=(
            None
            if interior.deriv_flux is None
            else interior.deriv_flux - 2.0 * deriv_boundary
        ),
        penalty_flux=(
            None
            if interior.penalty_flux is None
            else -interior.penalty_flux + 2.0 * penalty_boundary
        ),
        trace=interior.trace,
    )


def penalty_sigma(p_int, p_ext, h_int, h_ext, c):
    """sigma = C (max(p)+1)^2 / min(h), the min taken pointwise."""
    h = np.minimum(np.asarray(h_int, dtype=float), np.asarray(h_ext, dtype=float))
    if np.any(h <= 0.0):
        raise DegenerateGeometryError("nonpositive element size h in penalty")
    return c * (max(int(p_int), int(p_ext)) + 1) ** 2 / h


class _FaceOps:
    """Precomputed geometry of one element face, flattened to points."""

    __slots__ = (
        "fdim", "side", "shape", "n", "slices", "coords", "normal",
        "h", "measure", "massless_weight", "massive_weight", "counts",
    )

    def __init__(self, eops, background, fdim, side):
        el = eops.element
        fg = face_geometry(background, el, fdim, side)
        fsh = face_shape(el.grid_shape, fdim)
        k = len(fsh)
        self.fdim = fdim
        self.side = side
        self.shape = fsh
        self.n = int(np.prod(fsh)) if k else 1
        self.slices = face_slices(el.dim, fdim, side)
        self.coords = _flatten_trailing(fg.coords, k)
        self.normal = _flatten_trailing(fg.normal, k)
        mag = _flatten_trailing(fg.normal_magnitude, k)
        self.measure = _flatten_trailing(fg.surface_measure, k)
        self.h = 2.0 / mag
        w_normal = eops.weights[fdim][0 if side < 0 else -1]
        self.massless_weight = mag / w_normal
        trans = np.ones(fsh if k else ())
        tdims = [i for i in range(el.dim) if i != fdim]
        for j, td in enumerate(tdims):
            w = eops.weights[td]
            trans = trans * w.reshape([-1 if i == j else 1 for i in range(k)])
        self.massive_weight = self.measure * _flatten_trailing(trans, k)
        self.counts = fsh


class _ElementOps:
    """Per-element geometric precomputation shared between handles."""

    __slots__ = (
        "element", "dim", "grid_shape", "coords", "jinv", "mass",
        "weights", "diffs", "faces",
    )

    def __init__(self, element, background):
        for ns in element.node_sets():
            if ns.kind != "gauss-lobatto":
                raise UnsupportedFeatureError(
                    "mass-lumped lifting requires LGL element grids"
                )
        self.element = element
        self.dim = element.dim
        self.grid_shape = element.grid_shape
        self.coords = element.coords()
        xi = element.logical_grid()
        _, det, inv = jacobian_at(element, xi)
        self.jinv = inv
        sqrt_g = np.asarray(background.sqrt_det(self.coords), dtype=float)
        node_sets = element.node_sets()
        self.weights = [ns.weights for ns in node_sets]
        self.diffs = [differentiation_matrix(ns) for ns in node_sets]
        wprod = np.ones(self.grid_shape)
        for i, w in enumerate(self.weights):
            wprod = wprod * w.reshape(
                [-1 if j == i else 1 for j in range(self.dim)]
            )
        self.mass = sqrt_g * det * wprod
        if not np.all(np.isfinite(self.mass)) or np.any(self.mass <= 0.0):
            raise DegenerateGeometryError(
                f"nonpositive lumped mass in element {element.id_string()}"
            )
        self.faces = {
            (fdim, side): _FaceOps(self, background, fdim, side)
            for fdim in range(self.dim)
            for side in (-1, 1)
        }

    def divergence(self, fluxes):
        """Strong nodal divergence sum_ij Jinv^j_i d_xi_j F^i, (c, d, *g) -> (c, *g)."""
        fluxes = np.asarray(fluxes)
        out = np.zeros((fluxes.shape[0],) + self.grid_shape)
        for j in range(self.dim):
            df = _apply_matrix(self.diffs[j], fluxes, j, self.dim)
            out += np.einsum("i...,ci...->c...", self.jinv[j], df)
        return out

    def stiffness(self, fluxes, form):
        """Massive divergence (strong) or its negative transpose (weak)."""
        if form == "strong":
            return self.mass * self.divergence(fluxes)
        if form != "weak":
            raise ValueError(f"unknown stiffness form {form!r}")
        fluxes = np.asarray(fluxes)
        out = np.zeros((fluxes.shape[0],) + self.grid_shape)
        for j in range(self.dim):
            pre = self.mass * np.einsum(
                "i...,ci...->c...", self.jinv[j], fluxes
            )
            out -= _apply_matrix(self.diffs[j].T, pre, j, self.dim)
        return out

    def face_values(self, volume, key):
        fops = self.faces[key]
        return _flatten_trailing(
            np.asarray(volume)[fops.slices], len(fops.shape)
        )

    def add_lifted(self, accumulator, key, face_values, massive):
        """Accumulate a lifted face contribution into a volume array."""
        fops = self.faces[key]
        weight = fops.massive_weight if massive else fops.massless_weight
        accumulator[fops.slices] += _unflatten_trailing(
            np.asarray(face_values, dtype=float) * weight, fops.shape
        )


def lumped_mass_diag(element, background):
    """Diagonal mass sqrt(g) J prod(w) at every grid point."""
    return _ElementOps(element, background).mass


def apply_stiffness(element, background, fluxes, form="strong"):
    """Massive strong divergence of nodal fluxes, or the weak transpose."""
    key = {"strong": "strong", "weak": "weak"}.get(form)
    if key is None:
        raise ValueError(f"unknown stiffness form {form!r}")
    return _ElementOps(element, background).stiffness(np.asarray(fluxes), key)


def apply_lifting(element, background, dim, side, face_values, massive=True):
    """Lift face data to a volume array, nonzero only at the face points."""
    eops = _ElementOps(element, background)
    fops = eops.faces[(dim, side)]
    fv = np.asarray(face_values, dtype=float)
    if fv.ndim >= 1 + len(fops.shape) and fv.shape[1:] == fops.shape:
        fv = _flatten_trailing(fv, len(fops.shape))
    if fv.shape[-1] != fops.n:
        raise ValueError(
            f"face data has {fv.shape[-1]} points, face has {fops.n}"
        )
    out = np.zeros(fv.shape[:-1] + eops.grid_shape)
    eops.add_lifted(out, (dim, side), fv, massive)
    return out


class _MortarOps:
    """Transfer matrices and penalty data of one internal mortar."""

    __slots__ = ("keys", "prolongs", "counts", "measure", "base_sigma")

    def __init__(self, elements, mesh, mortar):
        self.counts = mortar.counts
        self.keys = []
        self.prolongs = []
        face_ops = []
        for s in mortar.sides:
            fops = elements[s.element].faces[(s.dim, s.side)]
            self.keys.append((s.element, s.dim, s.side))
            self.prolongs.append(
                prolongation_matrix(fops.counts, mortar.counts, s.coverage)
            )
            face_ops.append(fops)
        # mortar surface measure from the coarse side: the partially covered
        # side if any, else the side with fewer face points (ties: side 0)
        partial = [any(c != "full" for c in s.coverage) for s in mortar.sides]
        if partial[0] != partial[1]:
            ci = 0 if partial[0] else 1
        elif face_ops[0].n != face_ops[1].n:
            ci = 0 if face_ops[0].n < face_ops[1].n else 1
        else:
            ci = 0
        self.measure = np.asarray(
            self.prolongs[ci] @ face_ops[ci].measure, dtype=float
        )
        hs = [
            np.asarray(p @ f.h, dtype=float)
            for p, f in zip(self.prolongs, face_ops)
        ]
        p_norm = max(
            mesh.elements[s.element].degrees[s.dim] for s in mortar.sides
        )
        self.base_sigma = penalty_sigma(p_norm, p_norm, hs[0], hs[1], 1.0)


class _MeshCache:
    """Geometry, topology and transfer matrices shared between handles."""

    def __init__(self, mesh, background):
        self.mesh = mesh
        self.background = background
        self.topology = mortar_topology(mesh)
        self.elements = [_ElementOps(el, background) for el in mesh.elements]
        self.mortars = [
            _MortarOps(self.elements, mesh, m) for m in self.topology.mortars
        ]
        self.restrictions = {}
        for face_key, midxs in self.topology.face_mortars.items():
            k, fdim, side = face_key
            fops = self.elements[k].faces[(fdim, side)]
            specs = []
            for mi in midxs:
                mo = self.mortars[mi]
                si = mo.keys.index(face_key)
                cov = self.topology.mortars[mi].sides[si].coverage
                specs.append((mo.counts, cov, mo.measure))
            family = face_restriction_family(fops.counts, specs)
            self.restrictions[face_key] = dict(zip(midxs, family))
        self.external = list(self.topology.external_faces)
        self.external_sigma = []
        for ef in self.external:
            fops = self.elements[ef.element].faces[(ef.dim, ef.side)]
            p = mesh.elements[ef.element].degrees[ef.dim]
            self.external_sigma.append(penalty_sigma(p, p, fops.h, fops.h, 1.0))
        self.external_tags = {ef.tag for ef in self.external}


def _prolong(mat, data):
    return np.asarray(np.einsum("qp,cp->cq", mat, data), dtype=float)


def _restrict(mat, data):
    return np.asarray(np.einsum("pq,cq->cp", mat, data), dtype=float)


class OperatorHandle:
    """The DG operator with all its discretization choices fixed.

    With a linearization point set, applications compute the directional
    derivative of the operator (linearized sources and boundary conditions);
    otherwise the full, possibly nonlinear and boundary-inhomogeneous,
    residual A(u).
    """

    def __init__(
        self,
        mesh,
        system,
        background,
        boundary_conditions,
        *,
        form: str = "strong",
        massive: bool = True,
        penalty_parameter: float = 1.0,
        linearization_point: Optional[FieldVector] = None,
        threads: int = 1,
        _cache: Optional[_MeshCache] = None,
    ):
        if system.dim != mesh.dim:
            raise ConfigurationError(
                "system", f"system is {system.dim}D but mesh is {mesh.dim}D"
            )
        if form not in ("strong", "strong-weak"):
            raise ConfigurationError("operator.form", f"unknown form {form!r}")
        if penalty_parameter < 0.0:
            raise ConfigurationError(
                "operator.penalty_parameter", "penalty parameter must be >= 0"
            )
        if threads < 1:
            raise ConfigurationError("threads", "thread count must be >= 1")
        self.mesh = mesh
        self.system = system
        self.background = background
        self.bcs = boundary_conditions
        self.form = form
        self.massive = bool(massive)
        self.penalty_parameter = float(penalty_parameter)
        self.linearization_point = linearization_point
        self.threads = int(threads)
        self._cache = _cache if _cache is not None else _MeshCache(mesh, background)
        self._pool = None
        self.bcs.validate_tags(self._cache.external_tags)
        if hasattr(system, "min_puncture_distance"):
            for eops in self._cache.elements:
                if system.min_puncture_distance(eops.coords) < 1e-10:
                    raise SingularPointError(
                        "a collocation point lies within 1e-10 of a puncture; "
                        "offset the mesh bounds"
                    )
        if linearization_point is not None:
            if linearization_point.n_components != system.n_primal:
                raise ValueError("linearization point must be a primal vector")

    # -- bookkeeping ---------------------------------------------------

    @property
    def n_primal_dofs(self) -> int:
        return self.system.n_primal * sum(
            el.n_points for el in self.mesh.elements
        )

    @property
    def n_auxiliary_dofs(self) -> int:
        return self.system.n_auxiliary * sum(
            el.n_points for el in self.mesh.elements
        )

    @property
    def is_linearized(self) -> bool:
        return self.linearization_point is not None

    def zero_primal(self) -> FieldVector:
        return FieldVector.zeros(self.mesh, self.system.n_primal)

    def _derived(self, linearization_point) -> "OperatorHandle":
        return OperatorHandle(
            self.mesh,
            self.system,
            self.background,
            self.bcs,
            form=self.form,
            massive=self.massive,
            penalty_parameter=self.penalty_parameter,
            linearization_point=linearization_point,
            threads=self.threads,
            _cache=self._cache,
        )

    def linearized_at(self, point: Optional[FieldVector] = None) -> "OperatorHandle":
        """Handle for the operator linearized about `point` (default zero)."""
        if point is None:
            point = self.zero_primal()
        return self._derived(point)

    def without_linearization(self) -> "OperatorHandle":
        return self._derived(None)

    def _map(self, fn, items):
        if self.threads == 1:
            return [fn(i) for i in items]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.threads)
        return list(self._pool.map(fn, items))

    def _lin_traces(self, k, key):
        """Linearization-point primal trace on a face (None when not linearized)."""
        if self.linearization_point is None:
            return None
        eops = self._cache.elements[k]
        u0 = eops.face_values(self.linearization_point.arrays[k], key)
        return (u0, None)

    # -- operator application ------------------------------------------

    def apply(self, u: FieldVector) -> FieldVector:
        """Residual A(u) over the primal variables."""
        _, res = self._core(u, None)
        return FieldVector(self.mesh, self.system.n_primal, res)

    def matvec(self, flat) -> np.ndarray:
        u = FieldVector.from_flat(self.mesh, self.system.n_primal, flat)
        return self.apply(u).to_flat()

    def apply_full(self, v: FieldVector, u: FieldVector):
        """Residuals of the first-order system over (auxiliary, primal)."""
        if v.n_components != self.system.n_auxiliary:
            raise ValueError("auxiliary block has wrong component count")
        res_v, res_u = self._core(u, v)
        return (
            FieldVector(self.mesh, self.system.n_auxiliary, res_v),
            FieldVector(self.mesh, self.system.n_primal, res_u),
        )

    def matvec_full(self, flat) -> np.ndarray:
        na = self.n_auxiliary_dofs
        flat = np.asarray(flat, dtype=float).ravel()
        v = FieldVector.from_flat(self.mesh, self.system.n_auxiliary, flat[:na])
        u = FieldVector.from_flat(self.mesh, self.system.n_primal, flat[na:])
        rv, ru = self.apply_full(v, u)
        return np.concatenate([rv.to_flat(), ru.to_flat()])

    def reconstruct_auxiliary(self, u: FieldVector) -> FieldVector:
        """The auxiliary field the compact operator uses internally."""
        ws, lifts, _, _ = self._phase1(u)
        return FieldVector(
            self.mesh,
            self.system.n_auxiliary,
            [w + l for w, l in zip(ws, lifts)],
        )

    def _phase1(self, u):
        """Auxiliary fluxes, exchange, and reconstruction ingredients.

        Returns (ws, lifts, face_aux, ghost_aux_b): strong flux divergences
        minus extra sources, massless-lifted jump corrections, per-face
        projected auxiliary fluxes and traces, and per-external-face
        boundary-value auxiliary fluxes.
        """
        cache = self._cache
        sys_, bg = self.system, self.background
        lin = self.linearization_point

        def element_work(k):
            eops = cache.elements[k]
            uk = u.arrays[k]
            fv = sys_.auxiliary_flux(uk, eops.coords, bg)
            div = eops.divergence(fv)
            if lin is not None:
                extra = sys_.linearized_auxiliary_source_extra(
                    lin.arrays[k], uk, eops.coords, bg
                )
            else:
                extra = sys_.auxiliary_source_extra(uk, eops.coords, bg)
            w = div - extra
            faces = {}
            for key, fops in eops.faces.items():
                tr = eops.face_values(uk, key)
                flux = sys_.auxiliary_flux(tr, fops.coords, bg)
                faces[key] = (tr, _contract_normal(fops.normal, flux))
            return w, faces

        results = self._map(element_work, range(len(cache.elements)))
        ws = [r[0] for r in results]
        face_aux = [r[1] for r in results]

        lifts = [
            np.zeros((sys_.n_auxiliary,) + eops.grid_shape)
            for eops in cache.elements
        ]
        for mi, mo in enumerate(cache.mortars):
            data = [
                BoundaryData(
                    aux_flux=_prolong(mo.prolongs[si], face_aux[key[0]][key[1:]][1])
                )
                for si, key in enumerate(mo.keys)
            ]
            star = auxiliary_numerical_flux(data[0], data[1])
            for si, key in enumerate(mo.keys):
                k, fdim, side = key
                jump = (star if si == 0 else -star) - data[si].aux_flux
                face_jump = _restrict(cache.restrictions[key][mi], jump)
                cache.elements[k].add_lifted(
                    lifts[k], (fdim, side), face_jump, massive=False
                )

        ghost_aux_b = []
        for ef in cache.external:
            key = (ef.element, ef.dim, ef.side)
            k = ef.element
            eops = cache.elements[k]
            fops = eops.faces[key[1:]]
            tr, aux_int = face_aux[k][key[1:]]
            bc = self.bcs.for_tag(ef.tag)
            if bc.kind == "dirichlet":
                if lin is not None:
                    u0 = eops.face_values(lin.arrays[k], key[1:])
                    ub = bc.linearized_values(
                        fops.coords, fops.normal, u0, None, tr, None
                    )
                else:
                    ub = bc.values(fops.coords, fops.normal, tr, None)
                flux_b = sys_.auxiliary_flux(ub, fops.coords, bg)
                aux_b = _contract_normal(fops.normal, flux_b)
            else:
                aux_b = aux_int
            # (n F_v)* - n F_v reduces to aux_b - aux_int on a ghost face
            eops.add_lifted(
                lifts[k], key[1:], aux_b - aux_int, massive=False
            )
            ghost_aux_b.append(aux_b)
        return ws, lifts, face_aux, ghost_aux_b

    def _core(self, u, given_v):
        """Shared implementation of the compact and full operators."""
        cache = self._cache
        sys_, bg = self.system, self.background
        lin = self.linearization_point
        strong = self.form == "strong"
        primal_form = "strong" if strong else "weak"

        ws, lifts, face_aux, ghost_aux_b = self._phase1(u)
        recon = [w + l for w, l in zip(ws, lifts)]
        if given_v is None:
            vs = recon
            res_v = None
        else:
            vs = given_v.arrays
            res_v = [
                eops.mass * (vk - rk)
                for eops, vk, rk in zip(cache.elements, vs, recon)
            ]

        def element_work(k):
            eops = cache.elements[k]
            vk, uk = vs[k], u.arrays[k]
            fu = sys_.primal_flux(vk, eops.coords, bg)
            if lin is not None:
                src = sys_.linearized_primal_source(
                    lin.arrays[k], None, uk, vk, eops.coords, bg
                )
            else:
                src = sys_.primal_source(uk, vk, eops.coords, bg)
            res = -eops.stiffness(fu, primal_form)
            res += eops.mass * src
            faces = {}
            for key, fops in eops.faces.items():
                wf = eops.face_values(ws[k], key)
                deriv = _contract_normal(
                    fops.normal, sys_.primal_flux(wf, fops.coords, bg)
                )
                pen = _contract_normal(
                    fops.normal,
                    sys_.primal_flux(face_aux[k][key][1], fops.coords, bg),
                )
                faces[key] = (deriv, pen)
            return res, faces

        results = self._map(element_work, range(len(cache.elements)))
        res_u = [r[0] for r in results]
        face_data = [r[1] for r in results]

        for mi, mo in enumerate(cache.mortars):
            sigma = self.penalty_parameter * mo.base_sigma
            sides = []
            for si, key in enumerate(mo.keys):
                deriv, pen = face_data[key[0]][key[1:]]
                sides.append(
                    BoundaryData(
                        aux_flux=_prolong(
                            mo.prolongs[si], face_aux[key[0]][key[1:]][1]
                        ),
                        deriv_flux=_prolong(mo.prolongs[si], deriv),
                        penalty_flux=_prolong(mo.prolongs[si], pen),
                    )
                )
            star = primal_numerical_flux(sides[0], sides[1], sigma)
            for si, key in enumerate(mo.keys):
                k = key[0]
                flux = star if si == 0 else -star
                # strong form subtracts the element's own exchanged flux
                jump = flux - sides[si].deriv_flux if strong else flux
                face_jump = _restrict(cache.restrictions[key][mi], jump)
                cache.elements[k].add_lifted(
                    res_u[k], key[1:], -face_jump, massive=True
                )

        for ei, ef in enumerate(cache.external):
            k = ef.element
            key = (ef.dim, ef.side)
            eops = cache.elements[k]
            fops = eops.faces[key]
            deriv, pen = face_data[k][key]
            tr, aux_int = face_aux[k][key]
            data_int = BoundaryData(
                aux_flux=aux_int, deriv_flux=deriv, penalty_flux=pen, trace=tr
            )
            bc = self.bcs.for_tag(ef.tag)
            v_tr = eops.face_values(vs[k], key)
            lin_traces = self._lin_traces(k, key)
            ghost = exterior_ghost_data(
                data_int,
                bc,
                sys_,
                bg,
                fops.coords,
                fops.normal,
                v_trace=v_tr,
                linearized_traces=lin_traces,
                aux_boundary=ghost_aux_b[ei],
            )
            sigma = self.penalty_parameter * cache.external_sigma[ei]
            star = primal_numerical_flux(data_int, ghost, sigma)
            jump = star - deriv if strong else star
            eops.add_lifted(res_u[k], key, -jump, massive=True)

        if not self.massive:
            for k, eops in enumerate(cache.elements):
                res_u[k] = res_u[k] / eops.mass
                if res_v is not None:
                    res_v[k] = res_v[k] / eops.mass
        for k, eops in enumerate(cache.elements):
            if not np.all(np.isfinite(res_u[k])):
                raise FloatingPointError(
                    f"non-finite residual in element {eops.element.id_string()}"
                )
        return res_v, res_u

    def build_rhs(self, fixed_source) -> FieldVector:
        """M f minus the zero-field residual with full boundary conditions."""
        sys_ = self.system
        arrays = []
        for eops in self._cache.elements:
            if isinstance(fixed_source, FieldVector):
                f = fixed_source.arrays[len(arrays)]
            else:
                f = np.asarray(fixed_source(eops.coords), dtype=float)
            if f.shape != (sys_.n_primal,) + eops.grid_shape:
                raise ValueError(
                    f"fixed source shape {f.shape} does not match element grid"
                )
            arrays.append((f * eops.mass) if self.massive else f.copy())
        base = self if self.linearization_point is None else self.without_linearization()
        a0 = base.apply(base.zero_primal())
        return FieldVector(
            self.mesh,
            sys_.n_primal,
            [f - r for f, r in zip(arrays, a0.arrays)],
        )
