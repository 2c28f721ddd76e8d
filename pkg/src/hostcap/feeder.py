"""Radial feeder data model: parsing, validation, per-unit normalization.

A feeder file is a plain-text document with three sections::

    [base]
    kv=4.16          # line voltage base, kV
    kva=5000         # power base, kVA
    vsub_pu=1.0      # optional substation voltage, pu (not squared)

    [nodes]
    # id,load_kw,load_kvar,pv_max_kw
    650,0,0,0
    632,100.0,58.0,400

    [edges]
    # from,to,r_ohm,x_ohm,rated_amps
    650,632,0.144,0.42,730

Comments start with ``#``.  The substation is the unique node that never
appears as an edge child; a blank ``rated_amps`` field means "unrated" and
maps to a large sentinel so the thermal constraint exists but never binds.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from importlib import resources

import numpy as np

V_MIN_SQ_DEFAULT = 0.95**2
V_MAX_SQ_DEFAULT = 1.05**2

# Current rating used when a feeder file leaves the field blank (pu).
UNRATED_CURRENT_PU = 10.0

BUNDLED = ("ieee13", "ieee123", "two_bus", "two_bus_zero_load", "three_bus")


class FeederFormatError(ValueError):
    """Feeder data rejected.  Carries the 1-based file line when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)


@dataclass(frozen=True)
class Node:
    id: str
    load_kw: float = 0.0
    load_kvar: float = 0.0
    pv_max_kw: float = 0.0
    pv_min_kw: float = 0.0


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    r_ohm: float
    x_ohm: float
    rated_a: float | None = None  # None = unrated, use sentinel


@dataclass(frozen=True)
class LoadScaling:
    """Dimensionless multiplier applied to every load (0.3 = light load)."""

    multiplier: float

    def __post_init__(self):
        if not (math.isfinite(self.multiplier) and self.multiplier > 0):
            raise ValueError("load multiplier must be finite and > 0, got %r" % (self.multiplier,))


@dataclass(frozen=True, eq=False)
class FeederModel:
    """Immutable radial network in physical units plus per-unit views.

    Loads are stored as-read together with a lazy `load_scale` multiplier so
    that repeated scalings compose exactly (scale(a) then scale(b) equals
    scale(a*b) bit-for-bit).  All solver-facing quantities are the per-unit
    numpy arrays exposed as cached properties.
    """

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    substation: str
    base_kv: float
    base_kva: float
    v_sub: float = 1.0  # squared pu
    v_min_sq: float = V_MIN_SQ_DEFAULT
    v_max_sq: float = V_MAX_SQ_DEFAULT
    load_scale: float = 1.0

    def __post_init__(self):
        _validate(self)

    # -- identity ---------------------------------------------------------

    def _key(self):
        eff_nodes = tuple(
            (n.id, n.load_kw * self.load_scale, n.load_kvar * self.load_scale,
             n.pv_max_kw, n.pv_min_kw)
            for n in self.nodes
        )
        return (eff_nodes, self.edges, self.substation, self.base_kv, self.base_kva,
                self.v_sub, self.v_min_sq, self.v_max_sq)

    def __eq__(self, other):
        if not isinstance(other, FeederModel):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    # -- sizes and indexing -------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_edges(self):
        return len(self.edges)

    @cached_property
    def node_index(self) -> dict:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @cached_property
    def root(self) -> int:
        return self.node_index[self.substation]

    @cached_property
    def parent_of_edge(self) -> np.ndarray:
        return np.array([self.node_index[e.parent] for e in self.edges], dtype=int)

    @cached_property
    def child_of_edge(self) -> np.ndarray:
        return np.array([self.node_index[e.child] for e in self.edges], dtype=int)

    @cached_property
    def in_edge(self) -> np.ndarray:
        """Incoming edge index per node; -1 at the substation."""
        inc = np.full(self.n_nodes, -1, dtype=int)
        for k, j in enumerate(self.child_of_edge):
            inc[j] = k
        return inc

    @cached_property
    def out_edges(self) -> list:
        """Edge indices leaving each node."""
        out = [[] for _ in range(self.n_nodes)]
        for k, i in enumerate(self.parent_of_edge):
            out[i].append(k)
        return out

    @cached_property
    def edge_order_downstream(self) -> np.ndarray:
        """Edge indices ordered root-outward (parents before children)."""
        order = []
        stack = [self.root]
        while stack:
            i = stack.pop()
            for k in self.out_edges[i]:
                order.append(k)
                stack.append(int(self.child_of_edge[k]))
        return np.array(order, dtype=int)

    # -- per-unit bases -----------------------------------------------------

    @property
    def z_base_ohm(self):
        return 1000.0 * self.base_kv**2 / self.base_kva

    @property
    def i_base_a(self):
        return self.base_kva / self.base_kv

    # -- per-unit data ------------------------------------------------------

    @cached_property
    def load_p(self) -> np.ndarray:
        return np.array([n.load_kw * self.load_scale / self.base_kva for n in self.nodes])

    @cached_property
    def load_q(self) -> np.ndarray:
        return np.array([n.load_kvar * self.load_scale / self.base_kva for n in self.nodes])

    @cached_property
    def pv_hi(self) -> np.ndarray:
        return np.array([n.pv_max_kw / self.base_kva for n in self.nodes])

    @cached_property
    def pv_lo(self) -> np.ndarray:
        return np.array([n.pv_min_kw / self.base_kva for n in self.nodes])

    @cached_property
    def r(self) -> np.ndarray:
        return np.array([e.r_ohm / self.z_base_ohm for e in self.edges])

    @cached_property
    def x(self) -> np.ndarray:
        return np.array([e.x_ohm / self.z_base_ohm for e in self.edges])

    @cached_property
    def i_rated(self) -> np.ndarray:
        return np.array([
            UNRATED_CURRENT_PU if e.rated_a is None else e.rated_a / self.i_base_a
            for e in self.edges
        ])

    def edge_label(self, k) -> str:
        e = self.edges[k]
        return "%s->%s" % (e.parent, e.child)


def _validate(m: FeederModel):
    if not (m.base_kv > 0 and m.base_kva > 0):
        raise FeederFormatError("voltage and power bases must be positive")
    if not (m.v_sub > 0):
        raise FeederFormatError("substation voltage must be positive")
    if not (0 < m.v_min_sq < m.v_max_sq):
        raise FeederFormatError("voltage window must satisfy 0 < v_min_sq < v_max_sq")
    if not (math.isfinite(m.load_scale) and m.load_scale > 0):
        raise FeederFormatError("load_scale must be finite and > 0")

    ids = [n.id for n in m.nodes]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})[0]
        raise FeederFormatError("duplicate node id %r" % dup)
    known = set(ids)
    if m.substation not in known:
        raise FeederFormatError("missing substation: node %r not defined" % m.substation)

    for n in m.nodes:
        if n.load_kw < 0 or n.load_kvar < 0:
            raise FeederFormatError("negative load at node %r" % n.id)
        if n.pv_min_kw > n.pv_max_kw:
            raise FeederFormatError("pv_min exceeds pv_max at node %r" % n.id)
    sub = m.nodes[[i for i, n in enumerate(m.nodes) if n.id == m.substation][0]]
    if sub.load_kw != 0 or sub.load_kvar != 0:
        raise FeederFormatError("load at the substation node is outside the model")
    if sub.pv_max_kw != 0:
        raise FeederFormatError("PV capacity at the substation node is not supported")

    if len(m.edges) != len(m.nodes) - 1:
        raise FeederFormatError(
            "non-radial topology: %d edges for %d nodes (tree needs %d)"
            % (len(m.edges), len(m.nodes), len(m.nodes) - 1))

    seen_child = set()
    for e in m.edges:
        for end in (e.parent, e.child):
            if end not in known:
                raise FeederFormatError("edge %s->%s references unknown node %r"
                                        % (e.parent, e.child, end))
        if e.parent == e.child:
            raise FeederFormatError("non-radial topology: self-loop at %r" % e.parent)
        if e.child == m.substation:
            raise FeederFormatError("non-radial topology: edge into the substation %r" % e.child)
        if e.child in seen_child:
            raise FeederFormatError(
                "non-radial topology: node %r has two incoming edges" % e.child)
        seen_child.add(e.child)
        if e.r_ohm < 0 or e.x_ohm < 0:
            raise FeederFormatError("negative impedance on edge %s->%s" % (e.parent, e.child))
        if e.r_ohm == 0 and e.x_ohm == 0:
            raise FeederFormatError("zero impedance on edge %s->%s" % (e.parent, e.child))
        if e.rated_a is not None and not e.rated_a > 0:
            raise FeederFormatError("non-positive rating on edge %s->%s" % (e.parent, e.child))

    # reachability: every node visited by BFS from the root
    adj = {n.id: [] for n in m.nodes}
    for e in m.edges:
        adj[e.parent].append(e.child)
    seen = {m.substation}
    queue = deque([m.substation])
    while queue:
        for c in adj[queue.popleft()]:
            if c not in seen:
                seen.add(c)
                queue.append(c)
    if len(seen) != len(m.nodes):
        missing = sorted(known - seen)
        raise FeederFormatError(
            "non-radial topology: nodes unreachable from substation: %s"
            % ", ".join(missing))


# ---------------------------------------------------------------------------
# parsing / serialization
# ---------------------------------------------------------------------------

def _strip(line):
    return line.split("#", 1)[0].strip()


def _float_field(raw, what, lineno):
    try:
        val = float(raw)
    except ValueError:
        raise FeederFormatError("bad %s value %r" % (what, raw), lineno) from None
    if not math.isfinite(val):
        raise FeederFormatError("non-finite %s value %r" % (what, raw), lineno)
    return val


def parse_feeder(text: str) -> FeederModel:
    """Parse feeder file content into a validated per-unit FeederModel."""
    base = {}
    nodes = []
    edges = []
    edge_lines = {}
    node_lines = {}
    section = None
    base_line = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if line.startswith("["):
            if line not in ("[base]", "[nodes]", "[edges]"):
                raise FeederFormatError("unknown section %s" % line, lineno)
            section = line[1:-1]
            continue
        if section is None:
            raise FeederFormatError("content before any section header", lineno)

        if section == "base":
            if "=" not in line:
                raise FeederFormatError("expected key=value in [base]", lineno)
            key, _, raw_val = line.partition("=")
            key = key.strip()
            if key not in ("kv", "kva", "vsub_pu", "vmin_pu", "vmax_pu"):
                raise FeederFormatError("unknown [base] key %r" % key, lineno)
            if key in base:
                raise FeederFormatError("duplicate [base] key %r" % key, lineno)
            base[key] = _float_field(raw_val.strip(), key, lineno)
            base_line[key] = lineno
        elif section == "nodes":
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise FeederFormatError(
                    "node row needs 4 fields (id,load_kw,load_kvar,pv_max_kw), got %d"
                    % len(parts), lineno)
            nid = parts[0]
            if not nid:
                raise FeederFormatError("empty node id", lineno)
            if nid in node_lines:
                raise FeederFormatError("duplicate node id %r" % nid, lineno)
            node_lines[nid] = lineno
            nodes.append(Node(
                id=nid,
                load_kw=_float_field(parts[1], "load_kw", lineno),
                load_kvar=_float_field(parts[2], "load_kvar", lineno),
                pv_max_kw=_float_field(parts[3], "pv_max_kw", lineno),
            ))
        else:
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 5:
                raise FeederFormatError(
                    "edge row needs 5 fields (from,to,r_ohm,x_ohm,rated_amps), got %d"
                    % len(parts), lineno)
            rated = None if parts[4] == "" else _float_field(parts[4], "rated_amps", lineno)
            edge = Edge(
                parent=parts[0],
                child=parts[1],
                r_ohm=_float_field(parts[2], "r_ohm", lineno),
                x_ohm=_float_field(parts[3], "x_ohm", lineno),
                rated_a=rated,
            )
            edges.append(edge)
            edge_lines[(edge.parent, edge.child)] = lineno

    for key in ("kv", "kva"):
        if key not in base:
            raise FeederFormatError("missing [base] key %r" % key)
    if not nodes:
        raise FeederFormatError("no nodes defined")

    known = {n.id for n in nodes}
    children = set()
    for e in edges:
        for end in (e.parent, e.child):
            if end not in known:
                raise FeederFormatError(
                    "edge references unknown node %r" % end, edge_lines[(e.parent, e.child)])
        if e.child in children:
            raise FeederFormatError(
                "non-radial topology: node %r has two incoming edges" % e.child,
                edge_lines[(e.parent, e.child)])
        children.add(e.child)
    roots = [n.id for n in nodes if n.id not in children]
    if len(roots) != 1:
        # a cycle leaves no root, extra roots mean a forest; report a helpful line
        if not roots:
            raise FeederFormatError(
                "missing substation: every node has an incoming edge (non-radial topology)",
                min(edge_lines.values()) if edge_lines else None)
        raise FeederFormatError(
            "missing substation: multiple root candidates %s (disconnected feeder)"
            % ", ".join(sorted(roots)), node_lines[sorted(roots)[1]])

    vsub_pu = base.get("vsub_pu", 1.0)
    if vsub_pu <= 0:
        raise FeederFormatError("vsub_pu must be positive", base_line.get("vsub_pu"))
    kwargs = {}
    if "vmin_pu" in base:
        kwargs["v_min_sq"] = base["vmin_pu"] ** 2
    if "vmax_pu" in base:
        kwargs["v_max_sq"] = base["vmax_pu"] ** 2

    try:
        return FeederModel(
            nodes=tuple(nodes),
            edges=tuple(edges),
            substation=roots[0],
            base_kv=base["kv"],
            base_kva=base["kva"],
            v_sub=vsub_pu**2,
            **kwargs,
        )
    except FeederFormatError as err:
        if err.line is None:
            line = _locate(str(err), node_lines, edge_lines)
            if line is not None:
                raise FeederFormatError(str(err), line) from None
        raise


def _locate(message, node_lines, edge_lines):
    """Best-effort line attribution for errors raised by model validation."""
    for (parent, child), line in edge_lines.items():
        if "%s->%s" % (parent, child) in message:
            return line
    for nid, line in node_lines.items():
        if "%r" % nid in message:
            return line
    if "unreachable" in message or "non-radial" in message:
        return min(edge_lines.values()) if edge_lines else None
    return None


def serialize_feeder(model: FeederModel) -> str:
    """Render a model back to feeder-file text (inverse of parse_feeder)."""
    out = ["[base]"]
    out.append("kv=%r" % model.base_kv)
    out.append("kva=%r" % model.base_kva)
    out.append("vsub_pu=%r" % math.sqrt(model.v_sub))
    if model.v_min_sq != V_MIN_SQ_DEFAULT:
        out.append("vmin_pu=%r" % math.sqrt(model.v_min_sq))
    if model.v_max_sq != V_MAX_SQ_DEFAULT:
        out.append("vmax_pu=%r" % math.sqrt(model.v_max_sq))
    out.append("")
    out.append("[nodes]")
    for n in model.nodes:
        out.append("%s,%r,%r,%r" % (
            n.id, n.load_kw * model.load_scale, n.load_kvar * model.load_scale, n.pv_max_kw))
    out.append("")
    out.append("[edges]")
    for e in model.edges:
        rated = "" if e.rated_a is None else "%r" % e.rated_a
        out.append("%s,%s,%r,%r,%s" % (e.parent, e.child, e.r_ohm, e.x_ohm, rated))
    out.append("")
    return "\n".join(out)


def scale_loads(model: FeederModel, scaling) -> FeederModel:
    """Return a copy of the model with all loads multiplied by the factor."""
    if not isinstance(scaling, LoadScaling):
        scaling = LoadScaling(float(scaling))
    return replace(model, load_scale=model.load_scale * scaling.multiplier)


def load_feeder(path) -> FeederModel:
    with open(path, encoding="utf-8") as handle:
        return parse_feeder(handle.read())


def bundled_feeder(name: str) -> FeederModel:
    """Load a feeder shipped with the package (see BUNDLED for names)."""
    if name not in BUNDLED:
        raise KeyError("no bundled feeder %r (have: %s)" % (name, ", ".join(BUNDLED)))
    text = resources.files("hostcap").joinpath("data/%s.feeder" % name).read_text("utf-8")
    return parse_feeder(text)
