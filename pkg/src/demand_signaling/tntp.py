"""Readers for the plain-text transportation-network formats (_net, _trips)
and the conversion of BPR link parameters to affine costs.

The _net format carries tagged metadata (``<NUMBER OF NODES>`` etc.,
closed by ``<END OF METADATA>``) followed by one whitespace-separated row
per link, optionally ``;``-terminated, with ``~`` starting comments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .model import AffineCost, Edge, Network


class TntpFormatError(ValueError):
    """Malformed file; the message carries the offending line number."""


@dataclass(frozen=True)
class TntpLink:
    init_node: int          # 1-based, as in the file
    term_node: int
    capacity: float
    length: float
    free_flow_time: float
    b: float
    power: float
    speed: float
    toll: float
    link_type: int


@dataclass(frozen=True)
class TntpNetwork:
    num_zones: int
    num_nodes: int
    first_thru_node: int
    num_links: int
    links: tuple[TntpLink, ...]

    @property
    def zones(self) -> tuple[int, ...]:
        return tuple(range(1, self.num_zones + 1))


def _strip_comment(line: str) -> str:
    pos = line.find("~")
    return line if pos < 0 else line[:pos]


def parse_tntp(path) -> TntpNetwork:
    """Parse a _net file; raises ``TntpFormatError`` with line numbers."""
    meta: dict[str, str] = {}
    rows: list[tuple[int, list[str]]] = []
    in_body = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            if not in_body:
                if line.upper().startswith("<END OF METADATA>"):
                    in_body = True
                    continue
                if line.startswith("<"):
                    close = line.find(">")
                    if close < 0:
                        raise TntpFormatError(f"line {lineno}: unterminated metadata tag")
                    meta[line[1:close].strip().upper()] = line[close + 1:].strip()
                    continue
                raise TntpFormatError(
                    f"line {lineno}: expected metadata tag before <END OF METADATA>"
                )
            fields = line.rstrip(";").split()
            if fields:
                rows.append((lineno, fields))

    def meta_int(tag: str) -> int:
        if tag not in meta:
            raise TntpFormatError(f"missing metadata tag <{tag}>")
        try:
            return int(float(meta[tag]))
        except ValueError as exc:
            raise TntpFormatError(f"metadata tag <{tag}> is not a number") from exc

    if not in_body:
        raise TntpFormatError("missing <END OF METADATA> header")
    num_nodes = meta_int("NUMBER OF NODES")
    num_links = meta_int("NUMBER OF LINKS")
    num_zones = meta_int("NUMBER OF ZONES") if "NUMBER OF ZONES" in meta else num_nodes
    first_thru = meta_int("FIRST THRU NODE") if "FIRST THRU NODE" in meta else 1

    links: list[TntpLink] = []
    for lineno, fields in rows:
        if len(fields) < 5:
            raise TntpFormatError(
                f"line {lineno}: expected at least 5 fields, found {len(fields)}"
            )
        padded = fields + ["0"] * (10 - len(fields))
        try:
            values = [float(v) for v in padded[:10]]
        except ValueError as exc:
            raise TntpFormatError(f"line {lineno}: non-numeric field") from exc
        link = TntpLink(
            init_node=int(values[0]),
            term_node=int(values[1]),
            capacity=values[2],
            length=values[3],
            free_flow_time=values[4],
            b=values[5],
            power=values[6],
            speed=values[7],
            toll=values[8],
            link_type=int(values[9]),
        )
        for node, what in ((link.init_node, "init"), (link.term_node, "term")):
            if not 1 <= node <= num_nodes:
                raise TntpFormatError(
                    f"line {lineno}: {what} node {node} outside 1..{num_nodes}"
                )
        if link.capacity < 0:
            raise TntpFormatError(f"line {lineno}: negative capacity")
        if link.free_flow_time < 0:
            raise TntpFormatError(f"line {lineno}: negative free-flow time")
        links.append(link)

    if len(links) != num_links:
        raise TntpFormatError(
            f"declared {num_links} links but parsed {len(links)}"
        )
    return TntpNetwork(num_zones, num_nodes, first_thru, num_links, tuple(links))


def bpr_to_affine(net: TntpNetwork, eta: float) -> Network:
    """Affine costs ``a = eta * t / C`` and ``b = t`` per link.

    This is the degree-one member of the BPR family
    ``t * (1 + eta * (x / C) ** beta)``.  Node ids shift to 0-based;
    terminals default to the first and last node and are reassigned per
    study instance.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    edges = []
    for k, link in enumerate(net.links):
        if link.capacity == 0:
            raise ValueError(f"link {k}: zero capacity")
        t, c = link.free_flow_time, link.capacity
        edges.append(Edge(
            link.init_node - 1,
            link.term_node - 1,
            AffineCost(eta * t / c, t, free=(t == 0)),
        ))
    return Network(net.num_nodes, tuple(edges), 0, net.num_nodes - 1)


def parse_trips(path) -> tuple[int, dict[tuple[int, int], float]]:
    """Parse a _trips file: returns (zones, origin-destination flows)."""
    zones = 0
    flows: dict[tuple[int, int], float] = {}
    origin: Optional[int] = None
    in_body = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            if not in_body:
                if line.upper().startswith("<END OF METADATA>"):
                    in_body = True
                elif line.upper().startswith("<NUMBER OF ZONES>"):
                    try:
                        zones = int(float(line.split(">", 1)[1].strip()))
                    except ValueError as exc:
                        raise TntpFormatError(
                            f"line {lineno}: bad zone count") from exc
                continue
            if line.lower().startswith("origin"):
                try:
                    origin = int(float(line.split()[1]))
                except (IndexError, ValueError) as exc:
                    raise TntpFormatError(
                        f"line {lineno}: bad origin header") from exc
                continue
            if origin is None:
                raise TntpFormatError(f"line {lineno}: flow entry before Origin")
            for chunk in line.split(";"):
                chunk = chunk.strip()
                if not chunk:
                    continue
                if ":" not in chunk:
                    raise TntpFormatError(f"line {lineno}: expected 'dest : flow'")
                dest_s, flow_s = chunk.split(":", 1)
                try:
                    flows[origin, int(float(dest_s))] = float(flow_s)
                except ValueError as exc:
                    raise TntpFormatError(
                        f"line {lineno}: non-numeric entry") from exc
    return zones, flows


def total_od_flow(flows: dict[tuple[int, int], float]) -> float:
    return float(sum(flows.values()))
