"""
Analytic electrostatics of rectangular patches in the gapless-plane model,
node superposition, derivatives and the RF pseudopotential.

Interfaces take micrometers (FieldPoint); LayoutField and EffectivePotential
work on SI arrays of shape (K, 3) in meters.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import constants

from config import FIELD_SETTINGS, VOLTAGE_LIMIT
from core.errors import DomainError, InvalidParamsError, UnknownNodeError, VoltageLimitError
from core.geometry import Electrode, ElectrodeRole, TrapLayout

logger = logging.getLogger(__name__)

UM = 1e-6
_TWO_PI = 2.0 * math.pi
_CHUNK = 20000

# corner order (x, z, sign): (x2,z2)+, (x1,z2)-, (x2,z1)-, (x1,z1)+
_CORNERS = ((1, 1, 1.0), (0, 1, -1.0), (1, 0, -1.0), (0, 0, 1.0))


@dataclass(frozen=True)
class FieldPoint:
    """Position above the trap plane in micrometers."""
    x: float
    y: float
    z: float

    def to_si(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float) * UM

    @classmethod
    def from_si(cls, r) -> "FieldPoint":
        r = np.asarray(r, dtype=float) / UM
        return cls(float(r[0]), float(r[1]), float(r[2]))


@dataclass(frozen=True)
class DriveState:
    """Instantaneous voltages: RF amplitudes on rails and central electrode, DC per node."""
    V_rf: float = 200.0
    V_ce: float = 0.0
    Omega: float = _TWO_PI * 22e6
    dc_voltages: Mapping[str, float] = field(default_factory=dict, hash=False)

    @property
    def frequency_mhz(self) -> float:
        return self.Omega / _TWO_PI / 1e6

    def with_vce(self, v_ce: float) -> "DriveState":
        return replace(self, V_ce=float(v_ce))

    def with_dc(self, node: str, volts: float) -> "DriveState":
        dc = dict(self.dc_voltages)
        dc[node] = float(volts)
        return replace(self, dc_voltages=dc)

    def without_dc(self) -> "DriveState":
        return replace(self, dc_voltages={k: 0.0 for k in self.dc_voltages})

    def scaled_rf(self, factor: float) -> "DriveState":
        return replace(self, V_rf=self.V_rf * factor, V_ce=self.V_ce * factor)

    def validate(self, layout: Optional[TrapLayout] = None, limit: float = VOLTAGE_LIMIT) -> None:
        if not self.Omega > 0:
            raise InvalidParamsError(f"Omega must be > 0, got {self.Omega}")
        volts = {"V_rf": self.V_rf, "V_ce": self.V_ce}
        volts.update({f"dc_voltages.{k}": v for k, v in self.dc_voltages.items()})
        for name, value in volts.items():
            if abs(value) > limit:
                raise VoltageLimitError(f"{name}={value} V exceeds the {limit} V limit")
        if layout is not None:
            known = set(layout.nodes())
            for node in self.dc_voltages:
                if node not in known:
                    raise UnknownNodeError(f"DC voltage given for unknown node '{node}'")


@dataclass(frozen=True)
class PhysicalConstants:
    mass: float
    charge: float
    hbar: float = constants.hbar

    @classmethod
    def from_species(cls, mass_amu: float, charge_e: float) -> "PhysicalConstants":
        consts = cls(mass=mass_amu * constants.atomic_mass, charge=charge_e * constants.e)
        consts.validate()
        return consts

    def validate(self) -> None:
        if not self.mass > 0:
            raise InvalidParamsError(f"ion mass must be > 0, got {self.mass}")
        if self.charge == 0:
            raise InvalidParamsError("ion charge must be non-zero")


class NodeFields(NamedTuple):
    phi: np.ndarray                    # (n_nodes, K)
    grad: Optional[np.ndarray] = None  # (n_nodes, K, 3)
    hess: Optional[np.ndarray] = None  # (n_nodes, K, 3, 3)


def _corner_terms(X, Z, y, order: int):
    """
    Corner term F = atan2(X Z, y R) of the patch expression and its
    derivatives, returned with respect to the evaluation point (x, y, z).
    X and Z are corner minus point offsets.
    """
    X2 = X * X
    Z2 = Z * Z
    y2 = y * y
    R2 = X2 + Z2 + y2
    R = np.sqrt(R2)
    F = np.arctan2(X * Z, y * R)
    if order == 0:
        return F, None, None

    a = X2 + y2
    b = Z2 + y2
    inv_a = 1.0 / a
    inv_b = 1.0 / b
    FX = y * Z / (R * a)
    FZ = y * X / (R * b)
    Fy = -X * Z / R * (inv_a + inv_b)
    grad = (-FX, Fy, -FZ)
    if order == 1:
        return F, grad, None

    R3 = R2 * R
    FXX = -y * Z * X * (a + 2.0 * R2) / (R3 * a * a)
    FZZ = -y * X * Z * (b + 2.0 * R2) / (R3 * b * b)
    FXZ = y / R3
    FXy = Z * (R2 * a - y2 * (a + 2.0 * R2)) / (R3 * a * a)
    FZy = X * (R2 * b - y2 * (b + 2.0 * R2)) / (R3 * b * b)
    Fyy = X * Z * y * ((inv_a + inv_b) / R3 + 2.0 * (inv_a * inv_a + inv_b * inv_b) / R)
    # xx, yy, zz, xy, xz, yz
    hess = (FXX, Fyy, FZZ, -FXy, FXZ, -FZy)
    return F, grad, hess


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[-1] != 3:
        raise ValueError(f"points must have 3 coordinates, got shape {pts.shape}")
    if np.any(pts[:, 1] <= 0.0):
        raise DomainError(f"field evaluation requires y > 0, got min y = {pts[:, 1].min():.3e} m")
    return pts


def patch_potential(e: Electrode, applied_volts: float, p: FieldPoint) -> float:
    """Potential (V) of a single patch held at applied_volts, zero elsewhere in the plane."""
    if p.y <= 0:
        raise DomainError(f"patch potential requires y > 0, got {p.y} um")
    r = p.to_si()
    total = 0.0
    for ix, iz, sign in _CORNERS:
        xc = (e.x1, e.x2)[ix] * UM
        zc = (e.z1, e.z2)[iz] * UM
        F, _, _ = _corner_terms(np.float64(xc - r[0]), np.float64(zc - r[2]), np.float64(r[1]), 0)
        total += sign * float(F)
    return applied_volts * total / _TWO_PI


class LayoutField:
    """Vectorized per-node basis potentials (1 V on the node) and their derivatives."""

    def __init__(self, layout: TrapLayout):
        self.layout = layout
        self.nodes: List[str] = layout.nodes()
        self.index = {node: i for i, node in enumerate(self.nodes)}

        cx, cz, node_of, signs = [], [], [], []
        for e in layout.electrodes:
            node = layout.voltage_nodes.get(e.id)
            if node is None:
                continue
            for ix, iz, sign in _CORNERS:
                cx.append((e.x1, e.x2)[ix] * UM)
                cz.append((e.z1, e.z2)[iz] * UM)
                node_of.append(self.index[node])
                signs.append(sign)

        self._cx = np.array(cx)
        self._cz = np.array(cz)
        self._weights = np.zeros((len(self.nodes), len(cx)))
        self._weights[np.array(node_of), np.arange(len(cx))] = np.array(signs) / _TWO_PI

        self.roles = {node: layout.node_role(node) for node in self.nodes}
        logger.debug(f"LayoutField ready: {len(self.nodes)} nodes, {len(cx)} corner terms")

    def node_index(self, node: str) -> int:
        try:
            return self.index[node]
        except KeyError:
            raise UnknownNodeError(f"Unknown voltage node '{node}'") from None

    def evaluate(self, points, order: int = 0) -> NodeFields:
        pts = _as_points(points)
        if len(pts) > _CHUNK:
            parts = [self._evaluate(pts[i:i + _CHUNK], order) for i in range(0, len(pts), _CHUNK)]
            return NodeFields(*(
                None if parts[0][k] is None else np.concatenate([p[k] for p in parts], axis=1)
                for k in range(3)
            ))
        return self._evaluate(pts, order)

    def _evaluate(self, pts: np.ndarray, order: int) -> NodeFields:
        X = self._cx[:, None] - pts[None, :, 0]
        Z = self._cz[:, None] - pts[None, :, 2]
        y = np.broadcast_to(pts[None, :, 1], X.shape)
        F, grad, hess = _corner_terms(X, Z, y, order)
        W = self._weights

        phi = W @ F
        grad_nodes = None
        hess_nodes = None
        if grad is not None:
            grad_nodes = np.stack([W @ g for g in grad], axis=-1)
        if hess is not None:
            xx, yy, zz, xy, xz, yz = (W @ h for h in hess)
            hess_nodes = np.stack([
                np.stack([xx, xy, xz], axis=-1),
                np.stack([xy, yy, yz], axis=-1),
                np.stack([xz, yz, zz], axis=-1),
            ], axis=-2)
        return NodeFields(phi, grad_nodes, hess_nodes)


@lru_cache(maxsize=32)
def layout_field(layout: TrapLayout) -> LayoutField:
    return LayoutField(layout)


def node_basis_potential(layout: TrapLayout, node: str, p: FieldPoint) -> float:
    lf = layout_field(layout)
    idx = lf.node_index(node)
    return float(lf.evaluate(p.to_si(), 0).phi[idx, 0])


def resolve_node_voltages(layout: TrapLayout, drive: DriveState) -> Tuple[np.ndarray, np.ndarray]:
    """RF amplitudes and DC volts aligned with layout_field(layout).nodes."""
    lf = layout_field(layout)
    rf = np.zeros(len(lf.nodes))
    dc = np.zeros(len(lf.nodes))
    for node in drive.dc_voltages:
        lf.node_index(node)
    for node, i in lf.index.items():
        role = lf.roles[node]
        if role == ElectrodeRole.RF_RAIL:
            rf[i] = drive.V_rf
        elif role == ElectrodeRole.CENTRAL_RF:
            rf[i] = drive.V_ce
        elif role == ElectrodeRole.DC_SEGMENT:
            dc[i] = drive.dc_voltages.get(node, 0.0)
    return rf, dc


def _weights_for(layout: TrapLayout, node_voltages: Mapping[str, float]) -> np.ndarray:
    lf = layout_field(layout)
    w = np.zeros(len(lf.nodes))
    for node, volts in node_voltages.items():
        w[lf.node_index(node)] = volts
    return w


def _fd_step(y_m: float, h_fd_um: Optional[float]) -> float:
    h_min = FIELD_SETTINGS["fd_step_min_um"] * UM
    if y_m <= 2.0 * h_min:
        raise DomainError(f"height {y_m / UM:.3e} um is too close to the trap plane")
    h = FIELD_SETTINGS["fd_step_fraction"] * y_m if h_fd_um is None else h_fd_um * UM
    if y_m - h <= 0:
        h = y_m / 2.0
        logger.debug(f"Finite-difference step shrunk to {h / UM:.3e} um")
    return max(h, h_min)


def field_and_hessian(layout: TrapLayout, node_voltages: Mapping[str, float], p: FieldPoint,
                      h_fd: Optional[float] = None) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Potential (V), gradient (V/m) and Hessian (V/m^2) of the superposed
    potential at p by central differences with one Richardson level.
    h_fd is in micrometers and defaults to 1e-3 of the height.
    """
    if p.y <= 0:
        raise DomainError(f"field evaluation requires y > 0, got {p.y} um")
    weights = _weights_for(layout, node_voltages)
    lf = layout_field(layout)
    r0 = p.to_si()
    h = _fd_step(r0[1], h_fd)
    eye = np.eye(3)

    offsets = [np.zeros(3)]
    for step in (h, h / 2.0):
        for i in range(3):
            offsets.append(step * eye[i])
            offsets.append(-step * eye[i])
    pairs = [(0, 1), (0, 2), (1, 2)]
    for step in (h, h / 2.0):
        for i, j in pairs:
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                offsets.append(step * (si * eye[i] + sj * eye[j]))

    values = weights @ lf.evaluate(r0 + np.array(offsets), 0).phi
    f0 = values[0]
    axial = values[1:13].reshape(2, 3, 2)     # [level, axis, +/-]
    mixed = values[13:].reshape(2, 3, 4)      # [level, pair, ++ +- -+ --]

    grad = np.empty(3)
    hess = np.empty((3, 3))
    for i in range(3):
        d_h = (axial[0, i, 0] - axial[0, i, 1]) / (2.0 * h)
        d_h2 = (axial[1, i, 0] - axial[1, i, 1]) / h
        grad[i] = (4.0 * d_h2 - d_h) / 3.0
        s_h = (axial[0, i, 0] - 2.0 * f0 + axial[0, i, 1]) / h ** 2
        s_h2 = (axial[1, i, 0] - 2.0 * f0 + axial[1, i, 1]) / (h / 2.0) ** 2
        hess[i, i] = (4.0 * s_h2 - s_h) / 3.0
    for k, (i, j) in enumerate(pairs):
        m_h = (mixed[0, k, 0] - mixed[0, k, 1] - mixed[0, k, 2] + mixed[0, k, 3]) / (4.0 * h * h)
        m_h2 = (mixed[1, k, 0] - mixed[1, k, 1] - mixed[1, k, 2] + mixed[1, k, 3]) / (h * h)
        hess[i, j] = hess[j, i] = (4.0 * m_h2 - m_h) / 3.0
    return float(f0), grad, hess


class EffectivePotential:
    """
    Secular potential U = Psi + Q phi_DC for a fixed drive.

    Value and gradient are analytic; the Hessian is a Richardson-extrapolated
    central difference of the analytic gradient.
    """

    def __init__(self, layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                 include_dc: bool = True):
        if not drive.Omega > 0:
            raise InvalidParamsError(f"Omega must be > 0, got {drive.Omega}")
        consts.validate()
        self.layout = layout
        self.drive = drive
        self.consts = consts
        self.field = layout_field(layout)
        self.rf, self.dc = resolve_node_voltages(layout, drive)
        if not include_dc:
            self.dc = np.zeros_like(self.dc)
        self.charge = consts.charge
        self.psi_scale = consts.charge ** 2 / (4.0 * consts.mass * drive.Omega ** 2)

    @staticmethod
    def _shape_out(points, values):
        return values[0] if np.ndim(points) == 1 else values

    def rf_gradient(self, points) -> np.ndarray:
        nf = self.field.evaluate(points, 1)
        return self._shape_out(points, np.einsum("n,nkc->kc", self.rf, nf.grad))

    def pseudopotential(self, points):
        g = self.field.evaluate(points, 1).grad
        g_rf = np.einsum("n,nkc->kc", self.rf, g)
        return self._shape_out(points, self.psi_scale * np.sum(g_rf * g_rf, axis=-1))

    def value(self, points):
        nf = self.field.evaluate(points, 1)
        g_rf = np.einsum("n,nkc->kc", self.rf, nf.grad)
        u = self.psi_scale * np.sum(g_rf * g_rf, axis=-1) + self.charge * (self.dc @ nf.phi)
        return self._shape_out(points, u)

    def gradient(self, points) -> np.ndarray:
        nf = self.field.evaluate(points, 2)
        g_rf = np.einsum("n,nkc->kc", self.rf, nf.grad)
        h_rf = np.einsum("n,nkij->kij", self.rf, nf.hess)
        grad = 2.0 * self.psi_scale * np.einsum("kij,kj->ki", h_rf, g_rf)
        grad += self.charge * np.einsum("n,nkc->kc", self.dc, nf.grad)
        return self._shape_out(points, grad)

    def hessian(self, point, step: Optional[float] = None) -> np.ndarray:
        r0 = np.asarray(point, dtype=float)
        h = _fd_step(r0[1], None) if step is None else step
        eye = np.eye(3)
        offsets = []
        for s in (h, h / 2.0):
            for i in range(3):
                offsets.append(r0 + s * eye[i])
                offsets.append(r0 - s * eye[i])
        g = self.gradient(np.array(offsets)).reshape(2, 3, 2, 3)
        d_h = (g[0, :, 0, :] - g[0, :, 1, :]) / (2.0 * h)
        d_h2 = (g[1, :, 0, :] - g[1, :, 1, :]) / h
        hess = (4.0 * d_h2 - d_h) / 3.0
        return 0.5 * (hess + hess.T)

    def node_hessians(self, point) -> Tuple[np.ndarray, np.ndarray]:
        """Analytic Hessians (V/m^2) of phi_RF at full amplitude and of phi_DC."""
        nf = self.field.evaluate(point, 2)
        return (np.einsum("n,nij->ij", self.rf, nf.hess[:, 0]),
                np.einsum("n,nij->ij", self.dc, nf.hess[:, 0]))

    def dc_field(self, point) -> np.ndarray:
        """Electric field -grad(phi_DC) in V/m."""
        nf = self.field.evaluate(point, 1)
        return -np.einsum("n,nc->c", self.dc, nf.grad[:, 0])


def pseudopotential(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                    p: FieldPoint) -> float:
    """Psi = Q^2 |grad phi_RF|^2 / (4 m Omega^2) in joules."""
    return float(EffectivePotential(layout, drive, consts, include_dc=False).value(p.to_si()))


def total_effective_potential(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                              p: FieldPoint) -> float:
    return float(EffectivePotential(layout, drive, consts).value(p.to_si()))


def field_map_rows(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                   xs_um: Sequence[float], ys_um: Sequence[float], zs_um: Sequence[float],
                   quantity: str = "U") -> Tuple[List[str], List[List[float]]]:
    """Grid of phi (all nodes at their amplitudes) or U, SI columns."""
    grid = np.stack(np.meshgrid(xs_um, ys_um, zs_um, indexing="ij"), axis=-1).reshape(-1, 3) * UM
    if quantity == "U":
        values = EffectivePotential(layout, drive, consts).value(grid)
        header = ["x_m", "y_m", "z_m", "U_J"]
    elif quantity == "phi":
        rf, dc = resolve_node_voltages(layout, drive)
        values = (rf + dc) @ layout_field(layout).evaluate(grid, 0).phi
        header = ["x_m", "y_m", "z_m", "phi_V"]
    else:
        raise ValueError(f"Unknown field-map quantity: {quantity}")
    rows = [[*map(float, r), float(v)] for r, v in zip(grid, np.atleast_1d(values))]
    logger.info(f"Field map computed: {len(rows)} points of {quantity}")
    return header, rows
