//! Antenna cell polygons and the neighbouring-antenna relation.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Closed outer ring of a planar cell. The last vertex repeats the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    ring: Vec<(f64, f64)>,
}

impl Polygon {
    /// Builds a polygon from its outer ring, closing it if needed.
    pub fn new(mut ring: Vec<(f64, f64)>) -> Result<Self> {
        if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("polygon coordinates must be finite"));
        }
        if ring.first() != ring.last() {
            if let Some(&first) = ring.first() {
                ring.push(first);
            }
        }
        if ring.len() < 4 {
            return Err(Error::invalid(format!(
                "polygon ring needs at least 3 distinct vertices, got {}",
                ring.len().saturating_sub(1)
            )));
        }
        Ok(Polygon { ring })
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)])
    }

    pub fn ring(&self) -> &[(f64, f64)] {
        &self.ring
    }

    /// Parses `POLYGON ((x y, x y, ...))`; holes are ignored.
    pub fn from_wkt(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        let upper = trimmed.to_ascii_uppercase();
        let rest = upper
            .strip_prefix("POLYGON")
            .ok_or_else(|| Error::invalid(format!("not a WKT polygon: `{trimmed}`")))?;
        let offset = trimmed.len() - rest.len();
        let body = trimmed[offset..].trim();
        let body = body
            .strip_prefix('(')
            .and_then(|b| b.strip_suffix(')'))
            .ok_or_else(|| Error::invalid(format!("malformed WKT polygon: `{trimmed}`")))?
            .trim();
        let outer_end = body
            .find(')')
            .ok_or_else(|| Error::invalid(format!("malformed WKT ring: `{trimmed}`")))?;
        let outer = body[..outer_end]
            .trim()
            .strip_prefix('(')
            .ok_or_else(|| Error::invalid(format!("malformed WKT ring: `{trimmed}`")))?;
        let mut ring = Vec::new();
        for pair in outer.split(',') {
            let mut it = pair.split_whitespace();
            let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::invalid(format!("bad WKT coordinate `{}`", pair.trim())));
            };
            let x: f64 = x
                .parse()
                .map_err(|_| Error::invalid(format!("bad WKT number `{x}`")))?;
            let y: f64 = y
                .parse()
                .map_err(|_| Error::invalid(format!("bad WKT number `{y}`")))?;
            ring.push((x, y));
        }
        Self::new(ring)
    }

    pub fn to_wkt(&self) -> String {
        let coords: Vec<String> = self.ring.iter().map(|(x, y)| format!("{x} {y}")).collect();
        format!("POLYGON (({}))", coords.join(", "))
    }

    fn edges(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.ring.windows(2).map(|w| (w[0], w[1]))
    }

    /// Point-in-polygon (even-odd), boundary counted as inside.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        if self.edges().any(|(a, b)| on_segment(a, b, p)) {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.1 > p.1) != (b.1 > p.1) {
                let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
                if p.0 < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// True when the polygons overlap or share any boundary point.
    pub fn intersects_or_touches(&self, other: &Polygon) -> bool {
        for (a, b) in self.edges() {
            for (c, d) in other.edges() {
                if segments_intersect(a, b, c, d) {
                    return true;
                }
            }
        }
        self.contains(other.ring[0]) || other.contains(self.ring[0])
    }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    orient(a, b, p) == 0.0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

/// Cell polygon per antenna id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AntennaCells {
    pub cells: BTreeMap<String, Polygon>,
}

impl AntennaCells {
    pub fn new(cells: BTreeMap<String, Polygon>) -> Self {
        AntennaCells { cells }
    }

    pub fn get(&self, antenna: &str) -> Option<&Polygon> {
        self.cells.get(antenna)
    }

    /// For each antenna, the set of antennas whose cells intersect or touch
    /// its own. Every antenna is its own neighbour.
    pub fn neighbor_map(&self) -> BTreeMap<String, BTreeSet<String>> {
        let ids: Vec<&String> = self.cells.keys().collect();
        let mut out: BTreeMap<String, BTreeSet<String>> = ids
            .iter()
            .map(|id| ((*id).clone(), BTreeSet::from([(*id).clone()])))
            .collect();
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                if self.cells[ids[i]].intersects_or_touches(&self.cells[ids[j]]) {
                    out.get_mut(ids[i]).unwrap().insert(ids[j].clone());
                    out.get_mut(ids[j]).unwrap().insert(ids[i].clone());
                }
            }
        }
        out
    }
}
