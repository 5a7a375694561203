"""Building footprint ingestion from GeoJSON and OSM XML.

OSM data is dirty by nature: rings may self-intersect, ways may reference
missing nodes, features may carry the wrong geometry type. The parser
skips malformed individual features and counts the skips instead of
failing; only an unreadable document raises.
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import IO, Literal

from .errors import DocumentMalformed, NoFootprints
from .geodesy import GeoPoint

log = logging.getLogger(__name__)

FootprintFormat = Literal["geojson", "osm-xml"]


@dataclass(frozen=True)
class BuildingFootprint:
    """One building polygon: outer ring plus optional holes.

    Rings are ordered GeoPoint lists with >= 3 vertices, implicitly closed
    (the closing duplicate of the first vertex is stripped on ingest).
    Self-intersection is not checked; the even-odd rasterizer tolerates it.
    """

    outer_ring: tuple[GeoPoint, ...]
    holes: tuple[tuple[GeoPoint, ...], ...] = ()
    tag_id: str = ""


@dataclass
class ParseResult:
    """Parsed footprints plus a count of malformed features skipped."""

    footprints: list[BuildingFootprint] = field(default_factory=list)
    skipped: int = 0


def _clean_ring(points: list[GeoPoint]) -> tuple[GeoPoint, ...] | None:
    """Strip the closing vertex and consecutive duplicates; None if < 3 left."""
    if len(points) >= 2 and points[0] == points[-1]:
        points = points[:-1]
    cleaned: list[GeoPoint] = []
    for p in points:
        if not cleaned or p != cleaned[-1]:
            cleaned.append(p)
    if len(cleaned) >= 2 and cleaned[0] == cleaned[-1]:
        cleaned.pop()
    if len(cleaned) < 3:
        return None
    return tuple(cleaned)


def parse_footprints(source: bytes | IO[bytes], fmt: FootprintFormat) -> ParseResult:
    """Parse building footprints from a byte stream.

    Args:
        source: raw bytes or a binary file object.
        fmt: "geojson" for an RFC 7946 FeatureCollection, "osm-xml" for an
            OSM XML v0.6 document (closed building ways and building
            multipolygon relations).

    Raises:
        DocumentMalformed: the stream is not parseable in the declared format.
        NoFootprints: the document parsed but held zero buildings; the
            caller decides whether that is fatal.
    """
    data = source if isinstance(source, bytes) else source.read()
    if fmt == "geojson":
        result = _parse_geojson(data)
    elif fmt == "osm-xml":
        result = _parse_osm_xml(data)
    else:
        raise ValueError(f"unknown footprint format {fmt!r}")
    if not result.footprints:
        raise NoFootprints(f"document parsed ({result.skipped} features skipped) but holds no buildings")
    return result


def _geo_from_lonlat(coord: list) -> GeoPoint:
    # GeoJSON positions are [lon, lat]; extra members (altitude) are ignored.
    return GeoPoint(float(coord[1]), float(coord[0]))


def _footprint_from_polygon(rings: list, tag_id: str) -> BuildingFootprint | None:
    outer = _clean_ring([_geo_from_lonlat(c) for c in rings[0]])
    if outer is None:
        return None
    holes = []
    for ring in rings[1:]:
        hole = _clean_ring([_geo_from_lonlat(c) for c in ring])
        if hole is not None:
            holes.append(hole)
    return BuildingFootprint(outer, tuple(holes), tag_id)


def _parse_geojson(data: bytes) -> ParseResult:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DocumentMalformed(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise DocumentMalformed("expected a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise DocumentMalformed("FeatureCollection without a features array")

    result = ParseResult()
    for i, feature in enumerate(features):
        geom = feature.get("geometry") if isinstance(feature, dict) else None
        tag_id = str(feature.get("id", i)) if isinstance(feature, dict) else str(i)
        try:
            gtype = geom.get("type") if geom else None
            if gtype == "Polygon":
                polys = [geom["coordinates"]]
            elif gtype == "MultiPolygon":
                polys = list(geom["coordinates"])
            else:
                raise ValueError(f"unsupported geometry {gtype!r}")
            added = 0
            for poly in polys:
                fp = _footprint_from_polygon(poly, tag_id)
                if fp is not None:
                    result.footprints.append(fp)
                    added += 1
            if added == 0:
                raise ValueError("no valid ring")
        except (ValueError, TypeError, KeyError, IndexError) as exc:
            result.skipped += 1
            log.warning("skipping GeoJSON feature %s: %s", tag_id, exc)
    return result


def _parse_osm_xml(data: bytes) -> ParseResult:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise DocumentMalformed(f"invalid OSM XML: {exc}") from exc
    if root.tag != "osm":
        raise DocumentMalformed(f"expected <osm> root, got <{root.tag}>")

    nodes: dict[str, GeoPoint] = {}
    for el in root.iter("node"):
        try:
            nodes[el.attrib["id"]] = GeoPoint(float(el.attrib["lat"]), float(el.attrib["lon"]))
        except (KeyError, ValueError):
            continue  # a node we cannot place is the same as an unreferenced one

    ways: dict[str, ET.Element] = {el.attrib["id"]: el for el in root.iter("way") if "id" in el.attrib}

    result = ParseResult()
    consumed_ways: set[str] = set()

    # Multipolygon relations first so their member ways are not re-emitted.
    for rel in root.iter("relation"):
        tags = {t.attrib.get("k"): t.attrib.get("v") for t in rel.iter("tag")}
        if not _is_building(tags) or tags.get("type") != "multipolygon":
            continue
        rel_id = rel.attrib.get("id", "?")
        outers: list[tuple[GeoPoint, ...]] = []
        inners: list[tuple[GeoPoint, ...]] = []
        ok = True
        for member in rel.iter("member"):
            if member.attrib.get("type") != "way":
                continue
            ref = member.attrib.get("ref", "")
            role = member.attrib.get("role", "outer")
            ring = _ring_from_way(ways.get(ref), nodes)
            if ring is None:
                ok = False
                break
            consumed_ways.add(ref)
            (outers if role != "inner" else inners).append(ring)
        if not ok or not outers:
            result.skipped += 1
            log.warning("skipping OSM relation %s: unresolvable member rings", rel_id)
            continue
        for j, outer in enumerate(outers):
            holes = tuple(h for h in inners if _ring_inside(h, outer))
            tag = f"relation/{rel_id}" if len(outers) == 1 else f"relation/{rel_id}#{j}"
            result.footprints.append(BuildingFootprint(outer, holes, tag))

    for way_id, way in ways.items():
        if way_id in consumed_ways:
            continue
        tags = {t.attrib.get("k"): t.attrib.get("v") for t in way.iter("tag")}
        if not _is_building(tags):
            continue
        refs = [nd.attrib.get("ref", "") for nd in way.iter("nd")]
        if len(refs) < 4 or refs[0] != refs[-1]:
            result.skipped += 1
            log.warning("skipping OSM way %s: not a closed ring", way_id)
            continue
        ring = _ring_from_way(way, nodes)
        if ring is None:
            result.skipped += 1
            log.warning("skipping OSM way %s: missing nodes or degenerate ring", way_id)
            continue
        result.footprints.append(BuildingFootprint(ring, (), f"way/{way_id}"))
    return result


def _is_building(tags: dict) -> bool:
    value = tags.get("building")
    return value is not None and value != "no"


def _ring_from_way(way: ET.Element | None, nodes: dict[str, GeoPoint]) -> tuple[GeoPoint, ...] | None:
    if way is None:
        return None
    points = []
    for nd in way.iter("nd"):
        node = nodes.get(nd.attrib.get("ref", ""))
        if node is None:
            return None
        points.append(node)
    return _clean_ring(points)


def _ring_inside(inner: tuple[GeoPoint, ...], outer: tuple[GeoPoint, ...]) -> bool:
    """Even-odd test of inner's first vertex against the outer ring."""
    x, y = inner[0].lon, inner[0].lat
    inside = False
    n = len(outer)
    for i in range(n):
        x1, y1 = outer[i].lon, outer[i].lat
        x2, y2 = outer[(i + 1) % n].lon, outer[(i + 1) % n].lat
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
            if x < x_cross:
                inside = not inside
    return inside
