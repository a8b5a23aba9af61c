use serde::{Deserialize, Serialize};

use super::polygon::{Point, Polygon};
use super::GeometryError;

/// Axis-aligned rectangle `[x0, x0 + width] × [y0, y0 + height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

impl PixelRect {
    pub fn new(x0: f64, y0: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(width > 0.0 && height > 0.0) || !x0.is_finite() || !y0.is_finite() {
            return Err(GeometryError::InvalidRect(format!(
                "origin ({x0}, {y0}) size {width}x{height}"
            )));
        }
        Ok(Self {
            x0,
            y0,
            width,
            height,
        })
    }

    pub fn x1(&self) -> f64 {
        self.x0 + self.width
    }

    pub fn y1(&self) -> f64 {
        self.y0 + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

#[derive(Clone, Copy)]
enum Side {
    Left(f64),
    Right(f64),
    Top(f64),
    Bottom(f64),
}

impl Side {
    fn inside(self, p: Point) -> bool {
        match self {
            Side::Left(x) => p.x >= x,
            Side::Right(x) => p.x <= x,
            Side::Top(y) => p.y >= y,
            Side::Bottom(y) => p.y <= y,
        }
    }

    /// Crossing point of `a→b` with the boundary line; the clipped
    /// coordinate is set exactly so results stay inside the rectangle.
    fn intersect(self, a: Point, b: Point) -> Point {
        match self {
            Side::Left(x) | Side::Right(x) => {
                let t = (x - a.x) / (b.x - a.x);
                Point::new(x, a.y + t * (b.y - a.y))
            }
            Side::Top(y) | Side::Bottom(y) => {
                let t = (y - a.y) / (b.y - a.y);
                Point::new(a.x + t * (b.x - a.x), y)
            }
        }
    }
}

/// Sutherland-Hodgman pass over one half-plane.
fn clip_pass<F, G>(input: &[Point], inside: F, intersect: G) -> Vec<Point>
where
    F: Fn(Point) -> bool,
    G: Fn(Point, Point) -> Point,
{
    let mut out = Vec::with_capacity(input.len() + 4);
    let n = input.len();
    for i in 0..n {
        let cur = input[i];
        let prev = input[(i + n - 1) % n];
        match (inside(prev), inside(cur)) {
            (true, true) => out.push(cur),
            (true, false) => out.push(intersect(prev, cur)),
            (false, true) => {
                out.push(intersect(prev, cur));
                out.push(cur);
            }
            (false, false) => {}
        }
    }
    out
}

/// Clip a (possibly concave) polygon to a rectangle. Returns `None` when
/// less than [`super::MIN_AREA`] survives.
pub fn clip_polygon_to_rect(poly: &Polygon, rect: &PixelRect) -> Option<Polygon> {
    let mut pts = poly.vertices().to_vec();
    for side in [
        Side::Left(rect.x0),
        Side::Right(rect.x1()),
        Side::Top(rect.y0),
        Side::Bottom(rect.y1()),
    ] {
        if pts.is_empty() {
            return None;
        }
        pts = clip_pass(&pts, |p| side.inside(p), |a, b| side.intersect(a, b));
    }
    Polygon::new(pts).ok()
}

/// Exact area of `a ∩ b` for convex polygons.
pub fn convex_intersection_area(a: &Polygon, b: &Polygon) -> Result<f64, GeometryError> {
    if !a.is_convex() || !b.is_convex() {
        return Err(GeometryError::NotConvex);
    }
    let orientation = b.signed_area().signum();
    let mut pts = a.vertices().to_vec();
    for (p, q) in b.edges() {
        if pts.is_empty() {
            break;
        }
        let side = |r: Point| orientation * ((q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x)) >= 0.0;
        let cut = |s: Point, e: Point| {
            let d1 = (q.x - p.x) * (s.y - p.y) - (q.y - p.y) * (s.x - p.x);
            let d2 = (q.x - p.x) * (e.y - p.y) - (q.y - p.y) * (e.x - p.x);
            let t = d1 / (d1 - d2);
            Point::new(s.x + t * (e.x - s.x), s.y + t * (e.y - s.y))
        };
        pts = clip_pass(&pts, side, cut);
    }
    if pts.len() < 3 {
        return Ok(0.0);
    }
    let n = pts.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (pts[i], pts[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    Ok(twice.abs() / 2.0)
}
