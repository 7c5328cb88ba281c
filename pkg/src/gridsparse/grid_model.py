"""Grid topology, measurement model and DC power-flow Jacobian.

The linearized (DC) model ties active-power measurements to bus voltage
angles through a constant matrix H: a branch flow row reads +-1/x at the
terminal buses, an injection row is the signed sum of the flow rows of
the branches incident to the bus.  Every row therefore annihilates the
all-ones vector, so H has rank at most D-1 on a connected system.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CaseValidationError, ParseError

logger = logging.getLogger(__name__)

#: Named systems bundled with the package.
BUNDLED_SYSTEMS = {
    "ieee9": "case9.m",
    "ieee14": "case14.m",
    "ieee30": "case30.m",
    "ieee39": "case39.m",
    "ieee57": "case57.m",
    "ieee118": "case118.m",
    "ieee300": "case300.m",
}

_DEFAULT_NOISE_SIGMA = 0.01


@dataclass(frozen=True)
class Bus:
    id: int
    reference: bool = False


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    x: float  # series reactance, per unit; must be nonzero


@dataclass(frozen=True)
class GridCase:
    """Validated grid topology.

    Buses keep file order; the state vector indexes them in that order.
    Parallel branches between the same bus pair are allowed.
    """

    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted(i for i in set(ids) if ids.count(i) > 1)[0]
            raise CaseValidationError("duplicate bus id {}".format(dup))
        refs = [b.id for b in self.buses if b.reference]
        if len(refs) != 1:
            raise CaseValidationError(
                "expected exactly one reference bus, found {} ({})".format(
                    len(refs), refs
                )
            )
        known = set(ids)
        for k, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise CaseValidationError(
                        "branch {} references unknown bus {}".format(k, end)
                    )
            if br.from_bus == br.to_bus:
                raise CaseValidationError(
                    "branch {} is a self-loop at bus {}".format(k, br.from_bus)
                )
            if br.x == 0:
                raise CaseValidationError(
                    "branch {} ({}-{}) has zero reactance".format(
                        k, br.from_bus, br.to_bus
                    )
                )
        self._check_connected()

    def _check_connected(self):
        adj: dict[int, list[int]] = {b.id: [] for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
        start = self.buses[0].id
        seen = {start}
        stack = [start]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        missing = [b.id for b in self.buses if b.id not in seen]
        if missing:
            raise CaseValidationError(
                "grid is disconnected: bus {} unreachable from bus {}".format(
                    missing[0], start
                )
            )

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}


@dataclass(frozen=True)
class MeasurementScheme:
    """Ordered measurement descriptors.

    Each descriptor is ("injection", bus_id) or ("flow", branch_index)
    with the branch index positional into GridCase.branches.
    """

    descriptors: tuple[tuple[str, int], ...]

    @staticmethod
    def default(case: GridCase) -> "MeasurementScheme":
        """All bus injections (bus order) followed by all from-side flows."""
        desc = [("injection", b.id) for b in case.buses]
        desc += [("flow", e) for e in range(case.n_branches)]
        return MeasurementScheme(tuple(desc))

    @staticmethod
    def flows_only(case: GridCase) -> "MeasurementScheme":
        return MeasurementScheme(tuple(("flow", e) for e in range(case.n_branches)))


@dataclass(frozen=True)
class MeasurementModel:
    """DC measurement Jacobian plus per-measurement noise variances."""

    case: GridCase
    scheme: MeasurementScheme
    jacobian: np.ndarray            # N x D
    noise_variances: np.ndarray     # length N, all > 0

    @property
    def n_measurements(self) -> int:
        return self.jacobian.shape[0]

    @property
    def n_states(self) -> int:
        return self.jacobian.shape[1]


@dataclass(frozen=True)
class StructureReport:
    n_measurements: int
    n_states: int
    rank: int
    zero_fraction: float


# ---------------------------------------------------------------------------
# parsing

_ASSIGN_RE = re.compile(r"mpc\.(\w+)\s*=\s*(.*)")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def parse_matpower(text: str) -> GridCase:
    """Parse the MATPOWER subset used here: baseMVA, bus and branch tables.

    Bus columns: 1 = id, 2 = type (3 marks the reference bus).
    Branch columns: 1 = from bus, 2 = to bus, 4 = series reactance.
    Raises ParseError with a line number on malformed input.
    """
    name = "unnamed"
    base_mva = None
    tables: dict[str, list[list[float]]] = {}
    current: str | None = None
    row_buf: list[str] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if current is not None:
            if _consume_block(line, tables[current], row_buf, lineno):
                current = None
            continue
        fn = re.match(r"function\s+mpc\s*=\s*(\w+)", line)
        if fn:
            name = fn.group(1)
            continue
        m = _ASSIGN_RE.match(line)
        if not m:
            continue
        key, rest = m.group(1), m.group(2).strip()
        if key == "baseMVA":
            try:
                base_mva = float(rest.rstrip(";").strip())
            except ValueError:
                raise ParseError("invalid baseMVA value {!r}".format(rest), lineno)
        elif key in ("bus", "branch"):
            if not rest.startswith("["):
                raise ParseError("expected '[' after mpc.{}".format(key), lineno)
            current = key
            tables[key] = []
            if _consume_block(rest[1:], tables[key], row_buf, lineno):
                current = None

    if current is not None:
        raise ParseError("unterminated mpc.{} block".format(current))
    if base_mva is None:
        raise ParseError("missing mpc.baseMVA")
    for key in ("bus", "branch"):
        if key not in tables or not tables[key]:
            raise ParseError("missing mpc.{} table".format(key))

    buses = []
    for r, row in enumerate(tables["bus"]):
        if len(row) < 2:
            raise ParseError("bus row {} has fewer than 2 columns".format(r + 1))
        buses.append(Bus(id=int(row[0]), reference=int(row[1]) == 3))
    branches = []
    for r, row in enumerate(tables["branch"]):
        if len(row) < 4:
            raise ParseError("branch row {} has fewer than 4 columns".format(r + 1))
        branches.append(Branch(from_bus=int(row[0]), to_bus=int(row[1]), x=float(row[3])))

    case = GridCase(name=name, base_mva=base_mva, buses=tuple(buses),
                    branches=tuple(branches))
    logger.debug("parsed %s: %d buses, %d branches", name, case.n_buses,
                 case.n_branches)
    return case


def _flush_row(table: list[list[float]], row_buf: list[str], lineno: int) -> None:
    if not row_buf:
        return
    tokens = " ".join(row_buf).split()
    row_buf.clear()
    try:
        table.append([float(tok) for tok in tokens])
    except ValueError:
        raise ParseError("bad numeric token in row {!r}".format(" ".join(tokens)),
                         lineno)


def _consume_block(chunk: str, table: list[list[float]], row_buf: list[str],
                   lineno: int) -> bool:
    """Feed one line of a matrix block; rows are ';'-separated and may span
    lines.  Returns True when the closing ']' is reached."""
    pos = chunk.find("]")
    closed = pos >= 0
    body = chunk[:pos] if closed else chunk
    parts = body.split(";")
    for k, part in enumerate(parts):
        part = part.strip()
        if part:
            row_buf.append(part)
        if k < len(parts) - 1:
            _flush_row(table, row_buf, lineno)
    if closed:
        # allow the final row to omit its trailing ';'
        _flush_row(table, row_buf, lineno)
    return closed


def grid_from_json(text: str) -> GridCase:
    """Parse the package's JSON grid format."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("invalid JSON: {}".format(exc.msg), exc.lineno)
    try:
        buses = tuple(
            Bus(id=int(b["id"]), reference=bool(b.get("reference", False)))
            for b in doc["buses"]
        )
        branches = tuple(
            Branch(from_bus=int(br["from"]), to_bus=int(br["to"]), x=float(br["x"]))
            for br in doc["branches"]
        )
        return GridCase(
            name=str(doc.get("name", "unnamed")),
            base_mva=float(doc.get("base_mva", 100.0)),
            buses=buses,
            branches=branches,
        )
    except (KeyError, TypeError) as exc:
        raise ParseError("missing or malformed field: {}".format(exc))


def grid_to_json(case: GridCase) -> str:
    doc = {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [{"id": b.id, "reference": b.reference} for b in case.buses],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "x": br.x} for br in case.branches
        ],
    }
    return json.dumps(doc, indent=2)


def load_case(source: str | Path) -> GridCase:
    """Load a grid case from a bundled name (e.g. 'ieee57') or a file path.

    Files ending in .json use the JSON grid format; anything else is
    parsed as MATPOWER text (a leading '{' also selects JSON).
    """
    key = str(source)
    if key in BUNDLED_SYSTEMS:
        data = resources.files("gridsparse.data").joinpath(BUNDLED_SYSTEMS[key])
        return parse_matpower(data.read_text())
    path = Path(source)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        return grid_from_json(text)
    return parse_matpower(text)


# ---------------------------------------------------------------------------
# Jacobian

def build_dc_jacobian(case: GridCase, scheme: MeasurementScheme | None = None,
                      noise_sigma: float = _DEFAULT_NOISE_SIGMA) -> MeasurementModel:
    """Assemble the DC measurement Jacobian for a measurement scheme.

    Parameters
    ----------
    case : GridCase
        Validated topology.
    scheme : MeasurementScheme, optional
        Defaults to all bus injections followed by all from-side flows,
        giving N = buses + branches rows.
    noise_sigma : float
        Common per-measurement noise standard deviation (per unit).

    Returns
    -------
    MeasurementModel
        Jacobian of shape (N, D) with D = number of buses, plus the
        diagonal noise variances.
    """
    if noise_sigma <= 0:
        raise CaseValidationError("noise_sigma must be positive")
    if scheme is None:
        scheme = MeasurementScheme.default(case)
    if not scheme.descriptors:
        raise CaseValidationError("measurement scheme has no descriptors")
    index = case.bus_index()
    d = case.n_buses

    flow_rows = np.zeros((case.n_branches, d))
    for e, br in enumerate(case.branches):
        b = 1.0 / br.x
        flow_rows[e, index[br.from_bus]] += b
        flow_rows[e, index[br.to_bus]] -= b

    rows = np.zeros((len(scheme.descriptors), d))
    for r, (kind, ident) in enumerate(scheme.descriptors):
        if kind == "flow":
            if not 0 <= ident < case.n_branches:
                raise CaseValidationError("flow descriptor {} out of range".format(ident))
            rows[r] = flow_rows[ident]
        elif kind == "injection":
            if ident not in index:
                raise CaseValidationError(
                    "injection descriptor references unknown bus {}".format(ident)
                )
            acc = np.zeros(d)
            for e, br in enumerate(case.branches):
                if br.from_bus == ident:
                    acc += flow_rows[e]
                elif br.to_bus == ident:
                    acc -= flow_rows[e]
            rows[r] = acc
        else:
            raise CaseValidationError("unknown descriptor kind {!r}".format(kind))

    variances = np.full(len(scheme.descriptors), noise_sigma ** 2)
    return MeasurementModel(case=case, scheme=scheme, jacobian=rows,
                            noise_variances=variances)


def structure_report(model: MeasurementModel,
                     rank_tolerance: float = 1e-9) -> StructureReport:
    """Dimensions, numerical rank and exact-zero fraction of the Jacobian."""
    h = model.jacobian
    sigma = np.linalg.svd(h, compute_uv=False)
    rank = int(np.sum(sigma > rank_tolerance * sigma[0])) if sigma.size else 0
    zero_fraction = float(np.count_nonzero(h == 0.0) / h.size)
    return StructureReport(
        n_measurements=h.shape[0],
        n_states=h.shape[1],
        rank=rank,
        zero_fraction=zero_fraction,
    )
