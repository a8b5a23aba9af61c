use serde::{Deserialize, Serialize};

use super::polygon::{edge_x_at, point_in_polygon, Bounds, Point, Polygon};
use super::{GeometryError, BOUNDARY_EPS};

/// Rasterization target: pixel dimensions and samples per pixel edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: u32,
    pub height: u32,
    pub supersample: u32,
}

impl GridSpec {
    pub const DEFAULT_SUPERSAMPLE: u32 = 3;

    pub fn new(width: u32, height: u32, supersample: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidGrid(format!("{width}x{height} has a zero dimension")));
        }
        if supersample == 0 || supersample > 255 {
            return Err(GeometryError::InvalidGrid(format!(
                "supersample {supersample} outside 1..=255"
            )));
        }
        Ok(Self {
            width,
            height,
            supersample,
        })
    }

    /// The image's own pixel grid at the default supersampling.
    pub fn for_image(width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(width, height, Self::DEFAULT_SUPERSAMPLE)
    }
}

/// Row-major bit grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl RasterMask {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = self.index(x, y);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn popcount(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn intersection_count(&self, other: &RasterMask) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }

    pub fn union_count(&self, other: &RasterMask) -> u64 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum()
    }

    /// Decode alternating run lengths over the row-major pixel sequence,
    /// starting with a run of zeros (which may be empty).
    pub fn from_rle(height: u32, width: u32, counts: &[u64]) -> Result<Self, GeometryError> {
        let total = width as u64 * height as u64;
        let sum: u64 = counts.iter().sum();
        if sum != total {
            return Err(GeometryError::InvalidRle(format!(
                "run lengths sum to {sum}, expected {total} for {height}x{width}"
            )));
        }
        let mut mask = RasterMask::new(width, height);
        let mut pos = 0u64;
        for (k, &run) in counts.iter().enumerate() {
            if k % 2 == 1 {
                for i in pos..pos + run {
                    mask.words[(i / 64) as usize] |= 1 << (i % 64);
                }
            }
            pos += run;
        }
        Ok(mask)
    }

    pub fn to_rle(&self) -> Vec<u64> {
        let total = self.width as u64 * self.height as u64;
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for i in 0..total {
            let bit = self.words[(i / 64) as usize] >> (i % 64) & 1 == 1;
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }
}

/// Either side of an IoU computation.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Polygon(&'a Polygon),
    Mask(&'a RasterMask),
}

impl<'a> From<&'a Polygon> for Region<'a> {
    fn from(p: &'a Polygon) -> Self {
        Region::Polygon(p)
    }
}

impl<'a> From<&'a RasterMask> for Region<'a> {
    fn from(m: &'a RasterMask) -> Self {
        Region::Mask(m)
    }
}

/// Sets pixel `(i, j)` when a strict majority of its `s × s` sample points
/// (centered sub-pixel lattice) lies inside the polygon per
/// [`point_in_polygon`]. With an odd `s` there are no ties.
pub fn rasterize(poly: &Polygon, grid: GridSpec) -> RasterMask {
    let s = grid.supersample as usize;
    let mut counts = vec![0u16; grid.width as usize * grid.height as usize];
    scan_samples(poly, grid, |col, row| {
        counts[(row / s) * grid.width as usize + col / s] += 1;
    });
    let total = (s * s) as u16;
    let mut mask = RasterMask::new(grid.width, grid.height);
    for (i, &c) in counts.iter().enumerate() {
        if 2 * c > total {
            mask.set((i % grid.width as usize) as u32, (i / grid.width as usize) as u32, true);
        }
    }
    mask
}

/// One bit per sample point: a `(width·s) × (height·s)` mask.
pub fn rasterize_samples(poly: &Polygon, grid: GridSpec) -> RasterMask {
    let s = grid.supersample;
    let mut mask = RasterMask::new(grid.width * s, grid.height * s);
    scan_samples(poly, grid, |col, row| mask.set(col as u32, row as u32, true));
    mask
}

/// Number of inside sample points; divided by `s²` it estimates the area
/// clipped to the grid.
pub fn sample_coverage(poly: &Polygon, grid: GridSpec) -> u64 {
    let mut n = 0u64;
    scan_samples(poly, grid, |_, _| n += 1);
    n
}

/// Calls `inside(sample_col, sample_row)` for every sample point of the grid
/// lattice that lies inside the polygon.
///
/// Rows are scanned with sorted edge crossings. Samples within the boundary
/// tolerance of an edge or vertex fall back to [`point_in_polygon`], so the
/// result matches the point test sample for sample.
fn scan_samples(poly: &Polygon, grid: GridSpec, mut inside: impl FnMut(usize, usize)) {
    let s = grid.supersample as usize;
    let b = poly.bounds();
    let Some((row_lo, row_hi)) = span(b.min_y, b.max_y, grid.height as usize) else {
        return;
    };
    let Some((col_lo, col_hi)) = span(b.min_x, b.max_x, grid.width as usize) else {
        return;
    };
    let step = 1.0 / s as f64;
    let vertex_ys: Vec<f64> = poly.vertices().iter().map(|p| p.y).collect();
    let mut crossings: Vec<f64> = Vec::new();

    for srow in row_lo * s..row_hi * s {
        let y = (srow as f64 + 0.5) * step;
        let near_vertex = vertex_ys.iter().any(|vy| (vy - y).abs() <= BOUNDARY_EPS);
        crossings.clear();
        let mut window = 0.0f64;
        for (a, c) in poly.edges() {
            if (a.y > y) != (c.y > y) {
                let len = ((c.x - a.x).powi(2) + (c.y - a.y).powi(2)).sqrt();
                window = window.max(BOUNDARY_EPS * len / (c.y - a.y).abs() + 1e-12);
                crossings.push(edge_x_at(a, c, y));
            }
        }
        if crossings.is_empty() && !near_vertex {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        let mut passed = 0usize;
        for scol in col_lo * s..col_hi * s {
            let x = (scol as f64 + 0.5) * step;
            while passed < crossings.len() && crossings[passed] <= x {
                passed += 1;
            }
            let ambiguous = near_vertex
                || (passed > 0 && x - crossings[passed - 1] <= window)
                || (passed < crossings.len() && crossings[passed] - x <= window);
            let hit = if ambiguous {
                point_in_polygon(Point::new(x, y), poly)
            } else {
                (crossings.len() - passed) % 2 == 1
            };
            if hit {
                inside(scol, srow);
            }
        }
    }
}

/// Pixel index range `[lo, hi)` whose cells can intersect `[min, max]`.
fn span(min: f64, max: f64, limit: usize) -> Option<(usize, usize)> {
    let lo = min.floor().max(0.0);
    let hi = (max.ceil() + 1.0).min(limit as f64);
    if hi <= lo {
        return None;
    }
    Some((lo as usize, hi as usize))
}

fn to_mask(region: Region<'_>, grid: GridSpec) -> Result<std::borrow::Cow<'_, RasterMask>, GeometryError> {
    match region {
        Region::Polygon(p) => Ok(std::borrow::Cow::Owned(rasterize(p, grid))),
        Region::Mask(m) => {
            if m.width != grid.width || m.height != grid.height {
                return Err(GeometryError::GridMismatch {
                    mask_w: m.width,
                    mask_h: m.height,
                    grid_w: grid.width,
                    grid_h: grid.height,
                });
            }
            Ok(std::borrow::Cow::Borrowed(m))
        }
    }
}

fn mask_iou(a: &RasterMask, b: &RasterMask) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        return 0.0;
    }
    a.intersection_count(b) as f64 / union as f64
}

/// Rasterized intersection over union; 0 when the union is empty.
///
/// Two polygons are compared on the full sample lattice of `grid`. When
/// either side is a pixel mask, polygons are reduced to pixel masks first
/// and the comparison happens at pixel resolution.
pub fn iou<'a, 'b>(
    a: impl Into<Region<'a>>,
    b: impl Into<Region<'b>>,
    grid: GridSpec,
) -> Result<f64, GeometryError> {
    match (a.into(), b.into()) {
        (Region::Polygon(pa), Region::Polygon(pb)) => Ok(mask_iou(
            &rasterize_samples(pa, grid),
            &rasterize_samples(pb, grid),
        )),
        (ra, rb) => {
            let (ma, mb) = (to_mask(ra, grid)?, to_mask(rb, grid)?);
            Ok(mask_iou(&ma, &mb))
        }
    }
}

/// IoU of the two polygons' axis-aligned bounding boxes.
pub fn bbox_iou(a: &Polygon, b: &Polygon) -> f64 {
    let (ba, bb) = (a.bounds(), b.bounds());
    let inter = Bounds {
        min_x: ba.min_x.max(bb.min_x),
        min_y: ba.min_y.max(bb.min_y),
        max_x: ba.max_x.min(bb.max_x),
        max_y: ba.max_y.min(bb.max_y),
    };
    let inter_area = if inter.width() > 0.0 && inter.height() > 0.0 {
        inter.area()
    } else {
        0.0
    };
    let union = ba.area() + bb.area() - inter_area;
    if union <= 0.0 {
        0.0
    } else {
        inter_area / union
    }
}

/// Reference rasterizer: classify every sample with the point test only.
#[cfg(test)]
pub(crate) fn rasterize_naive(poly: &Polygon, grid: GridSpec) -> RasterMask {
    let s = grid.supersample;
    let mut mask = RasterMask::new(grid.width, grid.height);
    for j in 0..grid.height {
        for i in 0..grid.width {
            let mut c = 0;
            for k in 0..s {
                for m in 0..s {
                    let x = i as f64 + (m as f64 + 0.5) / s as f64;
                    let y = j as f64 + (k as f64 + 0.5) / s as f64;
                    if point_in_polygon(Point::new(x, y), poly) {
                        c += 1;
                    }
                }
            }
            mask.set(i, j, 2 * c > s * s);
        }
    }
    mask
}
