use std::collections::VecDeque;

use super::polygon::{Point, Polygon};
use super::raster::RasterMask;

/// Outer boundary of the largest 4-connected component of `mask`, traced
/// along pixel edges. Holes are not represented. `None` for an empty mask.
pub fn mask_to_polygon(mask: &RasterMask) -> Option<Polygon> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let component = largest_component(mask)?;
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && component[(y * w + x) as usize];

    // First pixel in row-major order: its top edge is on the outer boundary.
    let first = component.iter().position(|&b| b)? as i64;
    let start = (first % w, first / w);
    let mut pos = start;
    let mut dir = (1i64, 0i64);
    let mut vertices = vec![Point::new(start.0 as f64, start.1 as f64)];
    loop {
        pos = (pos.0 + dir.0, pos.1 + dir.1);
        let (x, y) = pos;
        // Pixels ahead of the current heading, left and right of it.
        let (ahead_left, ahead_right) = match dir {
            (1, 0) => ((x, y - 1), (x, y)),
            (0, 1) => ((x, y), (x - 1, y)),
            (-1, 0) => ((x - 1, y), (x - 1, y - 1)),
            _ => ((x - 1, y - 1), (x, y - 1)),
        };
        let next = if !inside(ahead_right.0, ahead_right.1) {
            (-dir.1, dir.0)
        } else if inside(ahead_left.0, ahead_left.1) {
            (dir.1, -dir.0)
        } else {
            dir
        };
        if pos == start && next == (1, 0) {
            break;
        }
        if next != dir {
            vertices.push(Point::new(x as f64, y as f64));
        }
        dir = next;
    }
    Polygon::new(vertices).ok()
}

fn largest_component(mask: &RasterMask) -> Option<Vec<bool>> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut label = vec![0u32; w * h];
    let mut best: Option<(u32, usize)> = None;
    let mut next_label = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if label[start] != 0 || !mask.get((start % w) as u32, (start / w) as u32) {
            continue;
        }
        next_label += 1;
        let mut size = 0usize;
        label[start] = next_label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if label[j] == 0 && mask.get((j % w) as u32, (j / w) as u32) {
                    label[j] = next_label;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((next_label, size));
        }
    }
    let (keep, _) = best?;
    Some(label.into_iter().map(|l| l == keep).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, GridSpec};

    fn mask_from(rows: &[&str]) -> RasterMask {
        let mut m = RasterMask::new(rows[0].len() as u32, rows.len() as u32);
        for (y, r) in rows.iter().enumerate() {
            for (x, c) in r.chars().enumerate() {
                m.set(x as u32, y as u32, c == '#');
            }
        }
        m
    }

    #[test]
    fn rectangle_block() {
        let m = mask_from(&["....", ".##.", ".##.", "...."]);
        let p = mask_to_polygon(&m).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.area(), 4.0);
    }

    #[test]
    fn l_shape_round_trips_through_raster() {
        let m = mask_from(&["#...", "#...", "###.", "...."]);
        let p = mask_to_polygon(&m).unwrap();
        assert_eq!(p.area(), 5.0);
        assert_eq!(rasterize(&p, GridSpec::new(4, 4, 1).unwrap()), m);
    }

    #[test]
    fn keeps_largest_component_only() {
        let m = mask_from(&["#..##", "...##", "#...."]);
        let p = mask_to_polygon(&m).unwrap();
        assert_eq!(p.area(), 4.0);
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let m = mask_from(&["##.", "##.", "..#"]);
        assert_eq!(mask_to_polygon(&m).unwrap().area(), 4.0);
    }

    #[test]
    fn empty_mask() {
        assert!(mask_to_polygon(&RasterMask::new(3, 3)).is_none());
    }

    #[test]
    fn hole_is_filled() {
        let m = mask_from(&["###", "#.#", "###"]);
        assert_eq!(mask_to_polygon(&m).unwrap().area(), 9.0);
    }
}
