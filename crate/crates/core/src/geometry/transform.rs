use serde::{Deserialize, Serialize};

use super::polygon::{Point, Polygon};
use super::GeometryError;

/// `(x, y) → (a·x + b·y + tx, c·x + d·y + ty)`, always invertible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub c: f64,
    pub d: f64,
    pub ty: f64,
}

impl AffineTransform {
    pub fn new(a: f64, b: f64, tx: f64, c: f64, d: f64, ty: f64) -> Result<Self, GeometryError> {
        let t = Self { a, b, tx, c, d, ty };
        let det = t.determinant();
        if det == 0.0 || !det.is_finite() || !tx.is_finite() || !ty.is_finite() {
            return Err(GeometryError::SingularTransform);
        }
        Ok(t)
    }

    pub const IDENTITY: Self = Self {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        c: 0.0,
        d: 1.0,
        ty: 0.0,
    };

    /// Mirror across the vertical center line of an image `width` wide.
    pub fn horizontal_flip(width: f64) -> Self {
        Self {
            a: -1.0,
            tx: width,
            ..Self::IDENTITY
        }
    }

    pub fn vertical_flip(height: f64) -> Self {
        Self {
            d: -1.0,
            ty: height,
            ..Self::IDENTITY
        }
    }

    pub fn scale(sx: f64, sy: f64) -> Result<Self, GeometryError> {
        Self::new(sx, 0.0, 0.0, 0.0, sy, 0.0)
    }

    pub fn translate(dx: f64, dy: f64) -> Self {
        Self {
            tx: dx,
            ty: dy,
            ..Self::IDENTITY
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x + self.b * p.y + self.tx,
            self.c * p.x + self.d * p.y + self.ty,
        )
    }

    /// `self` first, then `next`.
    pub fn then(&self, next: &AffineTransform) -> AffineTransform {
        AffineTransform {
            a: next.a * self.a + next.b * self.c,
            b: next.a * self.b + next.b * self.d,
            tx: next.a * self.tx + next.b * self.ty + next.tx,
            c: next.c * self.a + next.d * self.c,
            d: next.c * self.b + next.d * self.d,
            ty: next.c * self.tx + next.d * self.ty + next.ty,
        }
    }

    pub fn inverse(&self) -> AffineTransform {
        let det = self.determinant();
        let a = self.d / det;
        let b = -self.b / det;
        let c = -self.c / det;
        let d = self.a / det;
        AffineTransform {
            a,
            b,
            tx: -(a * self.tx + b * self.ty),
            c,
            d,
            ty: -(c * self.tx + d * self.ty),
        }
    }
}

/// Map every vertex; the area scales by `|det|`.
pub fn transform_polygon(poly: &Polygon, t: &AffineTransform) -> Result<Polygon, GeometryError> {
    if t.determinant() == 0.0 {
        return Err(GeometryError::SingularTransform);
    }
    Polygon::new(poly.vertices().iter().map(|&p| t.apply(p)).collect())
}
