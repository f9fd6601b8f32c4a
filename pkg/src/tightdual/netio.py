"""MATPOWER case parsing and the per-unit network model.

Only the subset used by PGLib OPF cases is understood: ``mpc.baseMVA``,
``mpc.bus``, ``mpc.gen``, ``mpc.branch`` and ``mpc.gencost`` with polynomial
cost model 2.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Bus",
    "Generator",
    "Branch",
    "Network",
    "CaseFormatError",
    "UnsupportedCostError",
    "parse_matpower",
    "read_case",
    "validate",
    "network_to_json",
    "network_from_json",
]

SCHEMA = "tightdual.network/1"


class CaseFormatError(ValueError):
    """Raised when a case file cannot be read as MATPOWER data."""


class UnsupportedCostError(CaseFormatError):
    """Raised for cost models other than quadratic polynomials."""


@dataclass
class Bus:
    id: int
    vmin: float
    vmax: float
    pd: float = 0.0
    qd: float = 0.0
    gs: float = 0.0
    bs: float = 0.0


@dataclass
class Generator:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0


@dataclass
class Branch:
    f_bus: int
    t_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    rate_a: float = 0.0
    # set when rate_a was 0 (unlimited) and a substitute limit was applied
    limit_substituted: bool = False


@dataclass
class Network:
    base_mva: float
    buses: list[Bus]
    generators: list[Generator]
    branches: list[Branch]
    name: str = ""
    _index: dict[int, int] = field(default=None, init=False, repr=False, compare=False)

    def bus_index(self, label: int) -> int:
        """Dense 0-based position of the bus with external id ``label``."""
        if self._index is None:
            self._index = {b.id: k for k, b in enumerate(self.buses)}
        return self._index[label]

    @property
    def constant_cost(self) -> float:
        return float(sum(g.c0 for g in self.generators))

    def total_demand(self) -> float:
        return float(sum(math.hypot(b.pd, b.qd) for b in self.buses))


# ---------------------------------------------------------------------------
# parsing

_COMMENT = re.compile(r"%[^\n]*")
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([^;\[\n]+);")
_MATRIX = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)


def _matrix(name: str, body: str) -> np.ndarray:
    rows = []
    for raw in re.split(r"[;\n]", body):
        tokens = raw.replace(",", " ").split()
        if not tokens:
            continue
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise CaseFormatError(f"mpc.{name}: malformed row {raw.strip()!r}") from None
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    for r in rows:
        if len(r) != width:
            raise CaseFormatError(
                f"mpc.{name}: row has {len(r)} columns, expected {width}: {r}"
            )
    return np.array(rows)


def _require_cols(name: str, mat: np.ndarray, ncols: int) -> None:
    if mat.size and mat.shape[1] < ncols:
        raise CaseFormatError(f"mpc.{name}: need at least {ncols} columns, got {mat.shape[1]}")


def _costs(row: np.ndarray, base: float) -> tuple[float, float, float]:
    model = int(row[0])
    if model == 1:
        raise UnsupportedCostError("piecewise-linear cost (model 1) is not supported")
    if model != 2:
        raise UnsupportedCostError(f"unknown cost model {model}")
    n = int(row[3])
    coeffs = list(row[4 : 4 + n])
    if len(coeffs) != n:
        raise CaseFormatError(f"gencost row declares {n} coefficients, found {len(coeffs)}")
    # highest order first; anything above quadratic must vanish
    if any(c != 0.0 for c in coeffs[: max(n - 3, 0)]):
        raise UnsupportedCostError("cost polynomials above degree 2 are not supported")
    c2, c1, c0 = ([0.0, 0.0, 0.0] + coeffs)[-3:]
    return c2 * base**2, c1 * base, c0


def parse_matpower(text: str, name: str = "") -> Network:
    """Parse MATPOWER case text into a per-unit :class:`Network`.

    Out-of-service generators and branches are dropped. Branches with
    ``rate_a == 0`` get a substitute limit of ``2 * sum|S_d| + 1`` p.u.
    """
    text = _COMMENT.sub("", text)
    if not name:
        m = re.search(r"function\s+mpc\s*=\s*(\w+)", text)
        name = m.group(1) if m else ""

    scalars = {k: v.strip() for k, v in _SCALAR.findall(text)}
    mats = {k: _matrix(k, v) for k, v in _MATRIX.findall(text)}
    try:
        base = float(scalars["baseMVA"])
    except KeyError:
        raise CaseFormatError("mpc.baseMVA missing") from None
    except ValueError:
        raise CaseFormatError(f"mpc.baseMVA not numeric: {scalars['baseMVA']!r}") from None
    if base == 0.0:
        raise CaseFormatError("mpc.baseMVA is zero")
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in mats:
            raise CaseFormatError(f"mpc.{key} missing")

    bus, gen, branch, gencost = mats["bus"], mats["gen"], mats["branch"], mats["gencost"]
    _require_cols("bus", bus, 13)
    _require_cols("gen", gen, 10)
    _require_cols("branch", branch, 11)
    _require_cols("gencost", gencost, 4)
    if len(gencost) < len(gen):
        raise CaseFormatError("mpc.gencost has fewer rows than mpc.gen")

    buses = [
        Bus(
            id=int(r[0]),
            vmin=float(r[12]),
            vmax=float(r[11]),
            pd=float(r[2] / base),
            qd=float(r[3] / base),
            gs=float(r[4] / base),
            bs=float(r[5] / base),
        )
        for r in bus
    ]
    gens = []
    for r, cost in zip(gen, gencost):
        if r[7] <= 0:
            continue
        c2, c1, c0 = _costs(cost, base)
        gens.append(
            Generator(
                bus=int(r[0]),
                pmin=float(r[9] / base),
                pmax=float(r[8] / base),
                qmin=float(r[4] / base),
                qmax=float(r[3] / base),
                c2=c2,
                c1=c1,
                c0=c0,
            )
        )

    fallback = 2.0 * sum(math.hypot(b.pd, b.qd) for b in buses) + 1.0
    branches = []
    for r in branch:
        if r[10] <= 0:
            continue
        rate = float(r[5] / base)
        branches.append(
            Branch(
                f_bus=int(r[0]),
                t_bus=int(r[1]),
                r=float(r[2]),
                x=float(r[3]),
                b_charge=float(r[4]),
                tap=float(r[8]) if r[8] != 0 else 1.0,
                shift=math.radians(float(r[9])),
                rate_a=rate if rate > 0 else fallback,
                limit_substituted=bool(rate <= 0),
            )
        )
    return Network(base_mva=base, buses=buses, generators=gens, branches=branches, name=name)


def read_case(path: str | Path) -> Network:
    path = Path(path)
    return parse_matpower(path.read_text(), name=path.stem)


# ---------------------------------------------------------------------------
# validation


def validate(network: Network) -> list[str]:
    """Return human-readable findings; an empty list means the case is well posed."""
    findings = []
    labels = {b.id for b in network.buses}
    touched = set()
    for k, b in enumerate(network.buses):
        if not 0 < b.vmin <= b.vmax:
            findings.append(f"bus {b.id}: invalid voltage bounds [{b.vmin}, {b.vmax}]")
        elif b.vmin == b.vmax:
            findings.append(f"bus {b.id}: vmin == vmax ({b.vmin}), box has zero width")
    for k, g in enumerate(network.generators):
        if g.bus not in labels:
            findings.append(f"generator {k}: undefined bus {g.bus}")
        if g.pmin > g.pmax or g.qmin > g.qmax:
            findings.append(f"generator {k}: inverted output bounds")
        if g.c2 < 0:
            findings.append(f"generator {k}: negative quadratic cost {g.c2}")
        touched.add(g.bus)
    for k, br in enumerate(network.branches):
        for end in (br.f_bus, br.t_bus):
            if end not in labels:
                findings.append(f"branch {k}: undefined bus {end}")
        if br.r == 0 and br.x == 0:
            findings.append(f"branch {k}: zero impedance")
        if br.limit_substituted:
            findings.append(
                f"branch {k} ({br.f_bus}-{br.t_bus}): rate_a missing, limit substituted "
                f"with {br.rate_a:.6g} p.u."
            )
        touched.update((br.f_bus, br.t_bus))
    for b in network.buses:
        if b.id not in touched:
            findings.append(f"bus {b.id}: isolated (no branch or generator)")
    if not network.generators:
        findings.append("network has no in-service generator")
    return findings


# ---------------------------------------------------------------------------
# JSON dump


def network_to_json(network: Network) -> str:
    """Serialize to the stable JSON dump (``schema`` key ``tightdual.network/1``)."""
    doc = {
        "schema": SCHEMA,
        "name": network.name,
        "base_mva": network.base_mva,
        "buses": [asdict(b) for b in network.buses],
        "generators": [asdict(g) for g in network.generators],
        "branches": [asdict(br) for br in network.branches],
    }
    return json.dumps(doc, indent=1)


def network_from_json(text: str) -> Network:
    doc = json.loads(text)
    if doc.get("schema") != SCHEMA:
        raise CaseFormatError(f"unexpected schema {doc.get('schema')!r}")
    return Network(
        base_mva=doc["base_mva"],
        buses=[Bus(**b) for b in doc["buses"]],
        generators=[Generator(**g) for g in doc["generators"]],
        branches=[Branch(**br) for br in doc["branches"]],
        name=doc.get("name", ""),
    )
