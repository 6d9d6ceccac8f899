"""
Electrode patches and the four-rail single-zone trap layout.

Coordinates: x lateral, y height above the trap plane, z along the rails.
All lengths at this interface are micrometers.
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Mapping, Tuple

from config import FOUR_RAIL_LAYOUT
from core.errors import InvalidParamsError

logger = logging.getLogger(__name__)

RF_NODE = "rf"
CENTRAL_NODE = "ce"
DC_POS_NODE = "dc_pos"
DC_NEG_NODE = "dc_neg"

_OVERLAP_TOLERANCE_UM2 = 1e-9
_SYMMETRY_DIGITS = 6


class ElectrodeRole(str, Enum):
    RF_RAIL = "rf_rail"
    CENTRAL_RF = "central_rf"
    DC_SEGMENT = "dc_segment"
    GROUND = "ground"


@dataclass(frozen=True)
class Electrode:
    """Rectangular patch [x1, x2] x [z1, z2] in the y=0 plane."""
    id: str
    role: ElectrodeRole
    x1: float
    x2: float
    z1: float
    z2: float

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.z2 - self.z1)

    def reflected(self, axis: str) -> "Electrode":
        if axis == "x":
            return Electrode(self.id, self.role, -self.x2, -self.x1, self.z1, self.z2)
        if axis == "z":
            return Electrode(self.id, self.role, self.x1, self.x2, -self.z2, -self.z1)
        raise ValueError(f"Unknown mirror axis: {axis}")


@dataclass(frozen=True)
class LayoutParams:
    rf_width: float = FOUR_RAIL_LAYOUT["rf_width_um"]
    central_width: float = FOUR_RAIL_LAYOUT["central_width_um"]
    dc_segment_width: float = FOUR_RAIL_LAYOUT["dc_segment_width_um"]
    rail_length: float = FOUR_RAIL_LAYOUT["rail_length_um"]
    dc_segment_count: int = FOUR_RAIL_LAYOUT["dc_segment_count"]
    dc_segment_depth: float = FOUR_RAIL_LAYOUT["dc_segment_depth_um"]

    def validate(self) -> None:
        widths = {
            "rf_width": self.rf_width,
            "central_width": self.central_width,
            "dc_segment_width": self.dc_segment_width,
            "rail_length": self.rail_length,
            "dc_segment_depth": self.dc_segment_depth,
        }
        for name, value in widths.items():
            if not value > 0:
                raise InvalidParamsError(f"{name} must be > 0, got {value}")
        if int(self.dc_segment_count) != self.dc_segment_count or self.dc_segment_count < 3:
            raise InvalidParamsError(
                f"dc_segment_count must be an integer >= 3, got {self.dc_segment_count}"
            )
        if self.dc_segment_count * self.dc_segment_width > self.rail_length:
            raise InvalidParamsError(
                f"{self.dc_segment_count} DC segments of {self.dc_segment_width} um "
                f"extend beyond rails of length {self.rail_length} um"
            )


@dataclass(frozen=True)
class TrapLayout:
    """Electrode set plus the voltage node each electrode is wired to."""
    electrodes: Tuple[Electrode, ...]
    voltage_nodes: Mapping[str, str] = field(default_factory=dict, hash=False)
    symmetric: bool = False

    def nodes(self) -> List[str]:
        """Node labels in order of first appearance."""
        seen: List[str] = []
        for electrode in self.electrodes:
            node = self.voltage_nodes.get(electrode.id)
            if node is not None and node not in seen:
                seen.append(node)
        return seen

    def electrodes_of(self, node: str) -> List[Electrode]:
        return [e for e in self.electrodes if self.voltage_nodes.get(e.id) == node]

    def node_role(self, node: str) -> ElectrodeRole:
        members = self.electrodes_of(node)
        if not members:
            raise KeyError(node)
        return members[0].role

    def mirrored(self, axis: str) -> "TrapLayout":
        return TrapLayout(
            electrodes=tuple(e.reflected(axis) for e in self.electrodes),
            voltage_nodes=dict(self.voltage_nodes),
            symmetric=self.symmetric,
        )

    def is_mirror_symmetric(self, axis: str) -> bool:
        """True if reflecting about the axis plane maps the wired patch set onto itself."""
        return _patch_signature(self) == _patch_signature(self.mirrored(axis))


def _patch_signature(layout: TrapLayout) -> set:
    def r(v):
        return round(v, _SYMMETRY_DIGITS) + 0.0

    return {
        (e.role.value, layout.voltage_nodes.get(e.id), r(e.x1), r(e.x2), r(e.z1), r(e.z2))
        for e in layout.electrodes
    }


def _dc_node(offset: int) -> str:
    if offset == 0:
        return DC_NEG_NODE
    if offset == 1:
        return DC_POS_NODE
    return f"dc_{offset}"


def build_four_rail_trap(params: LayoutParams = LayoutParams()) -> TrapLayout:
    """
    Build two RF rails around a central electrode, flanked on both sides by
    DC segments centered on the zone (z = 0). The middle segment of each side
    is wired to dc_neg, its neighbours to dc_pos.
    """
    params.validate()

    a2 = params.central_width / 2.0
    outer = a2 + params.rf_width
    half_len = params.rail_length / 2.0

    electrodes: List[Electrode] = [
        Electrode("rf_left", ElectrodeRole.RF_RAIL, -outer, -a2, -half_len, half_len),
        Electrode("ce", ElectrodeRole.CENTRAL_RF, -a2, a2, -half_len, half_len),
        Electrode("rf_right", ElectrodeRole.RF_RAIL, a2, outer, -half_len, half_len),
    ]
    nodes: Dict[str, str] = {"rf_left": RF_NODE, "ce": CENTRAL_NODE, "rf_right": RF_NODE}

    count = int(params.dc_segment_count)
    width = params.dc_segment_width
    z_start = -count * width / 2.0
    for k in range(count):
        z1 = z_start + k * width
        z2 = z1 + width
        node = _dc_node(abs(2 * k - (count - 1)) // 2)
        for side, (x1, x2) in (("left", (-outer - params.dc_segment_depth, -outer)),
                               ("right", (outer, outer + params.dc_segment_depth))):
            eid = f"dc_{side}_{k}"
            electrodes.append(Electrode(eid, ElectrodeRole.DC_SEGMENT, x1, x2, z1, z2))
            nodes[eid] = node

    layout = TrapLayout(electrodes=tuple(electrodes), voltage_nodes=nodes, symmetric=True)
    diagnostics = validate_layout(layout)
    if diagnostics:
        raise InvalidParamsError("; ".join(diagnostics))

    logger.info(f"Built trap layout with {len(electrodes)} electrodes on nodes {layout.nodes()}")
    return layout


def validate_layout(layout: TrapLayout) -> List[str]:
    """Return human-readable problems with the layout; empty when it is sound."""
    diagnostics: List[str] = []

    ids = [e.id for e in layout.electrodes]
    for eid in sorted({i for i in ids if ids.count(i) > 1}):
        diagnostics.append(f"duplicate electrode id {eid}")

    for e in layout.electrodes:
        if not (e.x1 < e.x2 and e.z1 < e.z2):
            diagnostics.append(
                f"degenerate electrode {e.id}: x=[{e.x1}, {e.x2}], z=[{e.z1}, {e.z2}]"
            )
        if e.id not in layout.voltage_nodes:
            diagnostics.append(f"electrode {e.id} is not assigned to a voltage node")

    for eid in layout.voltage_nodes:
        if eid not in ids:
            diagnostics.append(f"voltage node entry for unknown electrode {eid}")

    for first, second in combinations(layout.electrodes, 2):
        if layout.voltage_nodes.get(first.id) == layout.voltage_nodes.get(second.id):
            continue
        dx = min(first.x2, second.x2) - max(first.x1, second.x1)
        dz = min(first.z2, second.z2) - max(first.z1, second.z1)
        if dx > 0 and dz > 0 and dx * dz > _OVERLAP_TOLERANCE_UM2:
            diagnostics.append(f"electrodes {first.id} and {second.id} overlap")

    if layout.symmetric and not layout.is_mirror_symmetric("x"):
        diagnostics.append("layout is flagged symmetric but is not mirror-symmetric about x=0")

    return diagnostics


def layout_to_json(layout: TrapLayout) -> str:
    document = {
        "electrodes": [
            {
                "id": e.id,
                "role": e.role.value,
                "x1": e.x1,
                "x2": e.x2,
                "z1": e.z1,
                "z2": e.z2,
                "node": layout.voltage_nodes.get(e.id),
            }
            for e in layout.electrodes
        ]
    }
    return json.dumps(document, indent=2)


def layout_from_json(text: str) -> TrapLayout:
    document = json.loads(text)
    return layout_from_entries(document["electrodes"])


def layout_from_entries(entries) -> TrapLayout:
    electrodes = []
    nodes = {}
    for entry in entries:
        electrode = Electrode(
            id=str(entry["id"]),
            role=ElectrodeRole(entry["role"]),
            x1=float(entry["x1"]),
            x2=float(entry["x2"]),
            z1=float(entry["z1"]),
            z2=float(entry["z2"]),
        )
        electrodes.append(electrode)
        nodes[electrode.id] = str(entry["node"])
    return TrapLayout(electrodes=tuple(electrodes), voltage_nodes=nodes)


def save_layout(layout: TrapLayout, path) -> Path:
    path = Path(path)
    path.write_text(layout_to_json(layout) + "\n", encoding="utf-8")
    logger.info(f"Layout saved: {path}")
    return path


def load_layout(path) -> TrapLayout:
    return layout_from_json(Path(path).read_text(encoding="utf-8"))
