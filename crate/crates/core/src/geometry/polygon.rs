use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{GeometryError, BOUNDARY_EPS};

/// Polygons whose fill area is below this many square pixels are rejected.
pub const MIN_AREA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point { x, y }
    }
}

/// Axis-aligned bounding box, `min` inclusive and `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// A closed polygon in image space, at least three vertices, non-degenerate.
///
/// Construction canonicalizes the vertex list: consecutive duplicates
/// (including a repeated closing vertex) are dropped, coordinates must be
/// finite, and the even-odd fill area must reach [`MIN_AREA`].
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if let Some(p) = vertices.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::DegeneratePolygon(format!(
                "non-finite coordinate ({}, {})",
                p.x, p.y
            )));
        }
        let mut canon: Vec<Point> = Vec::with_capacity(vertices.len());
        for p in vertices {
            if canon.last() != Some(&p) {
                canon.push(p);
            }
        }
        while canon.len() > 1 && canon.first() == canon.last() {
            canon.pop();
        }
        if canon.len() < 3 {
            return Err(GeometryError::DegeneratePolygon(format!(
                "{} distinct vertices, need at least 3",
                canon.len()
            )));
        }
        let poly = Polygon { vertices: canon };
        if poly.area() < MIN_AREA {
            // A self-intersecting outline (a bowtie, say) can have a
            // vanishing signed area while still enclosing pixels.
            let encloses = poly.is_self_intersecting() && hull_area(&poly.vertices) >= MIN_AREA;
            if !encloses {
                return Err(GeometryError::DegeneratePolygon(format!(
                    "area {:.3e} below {MIN_AREA:e}",
                    poly.area()
                )));
            }
        }
        Ok(poly)
    }

    pub fn from_coords(coords: &[[f64; 2]]) -> Result<Self, GeometryError> {
        Self::new(coords.iter().copied().map(Point::from).collect())
    }

    /// Axis-aligned rectangle `[x, x+w] × [y, y+h]`.
    pub fn rect(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::from_coords(&[[x, y], [x + w, y], [x + w, y + h], [x, y + h]])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn to_coords(&self) -> Vec<[f64; 2]> {
        self.vertices.iter().map(|p| [p.x, p.y]).collect()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Closed edge cycle `(v[i], v[i+1 mod n])`.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace sum; positive when the vertex order is counter-clockwise
    /// in a y-up frame (clockwise on screen).
    pub fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>() / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn bounds(&self) -> Bounds {
        let mut b = Bounds {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in &self.vertices {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        b
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(p, self)
    }

    /// True when every turn has the same orientation (collinear turns are
    /// ignored) and the outline winds around exactly once.
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        let mut sign = 0.0f64;
        let mut turning = 0.0f64;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            let e1 = b.sub(a);
            let e2 = c.sub(b);
            let cr = e1.cross(e2);
            if cr.abs() > 1e-12 * (1.0 + e1.dot(e1) + e2.dot(e2)) {
                if sign == 0.0 {
                    sign = cr.signum();
                } else if cr.signum() != sign {
                    return false;
                }
            }
            turning += cr.atan2(e1.dot(e2));
        }
        // Star-shaped outlines turn consistently but wind more than once.
        sign != 0.0 && (turning.abs() - std::f64::consts::TAU).abs() < 1e-6
    }

    /// Whether any two non-adjacent edges intersect.
    pub fn is_self_intersecting(&self) -> bool {
        let n = self.vertices.len();
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return true;
                }
            }
        }
        false
    }

    pub fn reversed(&self) -> Polygon {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        Polygon { vertices }
    }
}

impl Serialize for Polygon {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polygon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let coords = Vec::<[f64; 2]>::deserialize(d)?;
        Polygon::from_coords(&coords).map_err(serde::de::Error::custom)
    }
}

/// Shoelace area of the closed vertex cycle.
pub fn polygon_area(poly: &Polygon) -> f64 {
    poly.area()
}

/// Even-odd containment with a deterministic boundary rule.
///
/// A point on a vertex or on exactly one edge is inside. A point where an
/// odd number of edges pass through it is inside, an even number (the
/// crossing point of a self-intersecting outline) is outside. Away from the
/// boundary the usual crossing-parity test decides.
pub fn point_in_polygon(pt: Point, poly: &Polygon) -> bool {
    let mut on_edges = 0usize;
    for (a, b) in poly.edges() {
        if dist2(pt, a) <= BOUNDARY_EPS * BOUNDARY_EPS {
            return true;
        }
        if segment_dist2(pt, a, b) <= BOUNDARY_EPS * BOUNDARY_EPS {
            on_edges += 1;
        }
    }
    if on_edges > 0 {
        return on_edges % 2 == 1;
    }
    crossing_parity(pt, poly)
}

/// Ray-casting parity towards +x, half-open in y so shared vertices are
/// counted once.
pub(crate) fn crossing_parity(pt: Point, poly: &Polygon) -> bool {
    let mut inside = false;
    for (a, b) in poly.edges() {
        if (a.y > pt.y) != (b.y > pt.y) && pt.x < edge_x_at(a, b, pt.y) {
            inside = !inside;
        }
    }
    inside
}

/// X coordinate of the edge `a→b` at height `y`. Caller guarantees the
/// edge straddles `y`.
#[inline]
pub(crate) fn edge_x_at(a: Point, b: Point, y: f64) -> f64 {
    a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y)
}

fn dist2(p: Point, q: Point) -> f64 {
    let d = p.sub(q);
    d.dot(d)
}

fn segment_dist2(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return dist2(p, a);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    dist2(p, Point::new(a.x + t * ab.x, a.y + t * ab.y))
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Area of the convex hull (Andrew's monotone chain).
fn hull_area(points: &[Point]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let n = hull.len();
    (0..n)
        .map(|i| hull[i].cross(hull[(i + 1) % n]))
        .sum::<f64>()
        .abs()
        / 2.0
}
