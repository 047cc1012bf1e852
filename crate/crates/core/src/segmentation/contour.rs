//! Moore-neighbor border tracing.
//!
//! Each 8-connected tissue component is traced once, clockwise, starting at
//! its first pixel in raster order. Tracing stops on Jacob's criterion: the
//! start pixel is entered again from the same backtrack position as at the
//! beginning, or the first move is about to repeat. Only outer borders are traced; holes are ignored.

use serde::{Deserialize, Serialize};

use super::TissueMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

impl Point {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Chebyshev distance; 1 for 8-neighbors.
    pub fn chebyshev(&self, other: &Point) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }
}

/// Ordered border pixels of one tissue component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BorderTrace {
    pub points: Vec<Point>,
    pub closed: bool,
    /// Pixel count of the traced component.
    pub area: usize,
}

impl BorderTrace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

// clockwise on screen (y grows downward), starting west
const DIRS: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("backtrack must be an 8-neighbor")
}

/// One closed trace per connected component, largest component first.
pub fn trace_borders(mask: &TissueMask) -> Vec<BorderTrace> {
    let (labels, sizes) = mask.components();
    let w = mask.width();
    let mut starts = vec![None; sizes.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 && starts[l as usize - 1].is_none() {
            starts[l as usize - 1] = Some(Point::new(i % w, i / w));
        }
    }
    let mut traces: Vec<BorderTrace> = starts
        .into_iter()
        .zip(&sizes)
        .map(|(start, &area)| BorderTrace {
            points: trace_from(mask, start.expect("every label has a first pixel"), area),
            closed: true,
            area,
        })
        .collect();
    // stable: equal areas keep raster order of their start pixels
    traces.sort_by(|a, b| b.area.cmp(&a.area));
    traces
}

fn trace_from(mask: &TissueMask, start: Point, area: usize) -> Vec<Point> {
    let s = (start.x as i64, start.y as i64);
    // the west neighbor of the first raster-order pixel is never tissue
    let start_back = (s.0 - 1, s.1);
    let mut points = vec![start];
    let (mut p, mut back) = (s, start_back);
    let cap = 8 * area + 16;

    while points.len() <= cap {
        let b0 = dir_index(back.0 - p.0, back.1 - p.1);
        let mut next = None;
        let mut prev = back;
        for k in 1..=8 {
            let (dx, dy) = DIRS[(b0 + k) % 8];
            let c = (p.0 + dx, p.1 + dy);
            if mask.get_signed(c.0, c.1) {
                next = Some((c, prev));
                break;
            }
            prev = c;
        }
        let Some((c, new_back)) = next else {
            // isolated pixel
            break;
        };
        if c == s && new_back == start_back {
            break;
        }
        // thin parts can re-enter the start from another side forever;
        // repeating the first move means the border is complete
        if p == s && points.len() > 1 && Point::new(c.0 as usize, c.1 as usize) == points[1] {
            points.pop();
            break;
        }
        points.push(Point::new(c.0 as usize, c.1 as usize));
        p = c;
        back = new_back;
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_valid(mask: &TissueMask, t: &BorderTrace) {
        for p in &t.points {
            assert!(mask.is_boundary(p.x, p.y), "{p:?} is not a boundary pixel");
        }
        for pair in t.points.windows(2) {
            assert_eq!(pair[0].chebyshev(&pair[1]), 1, "{pair:?}");
        }
        if t.points.len() > 1 {
            assert_eq!(t.points[0].chebyshev(t.points.last().unwrap()), 1);
        }
    }

    #[test]
    fn square_has_36_point_trace() {
        let m = TissueMask::from_fn(20, 20, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
        let traces = trace_borders(&m);
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].len(), 36);
        assert_eq!(traces[0].area, 100);
        assert!(traces[0].closed);
        assert_valid(&m, &traces[0]);
        let unique: std::collections::BTreeSet<_> = traces[0].points.iter().collect();
        assert_eq!(unique.len(), 36);
    }

    #[test]
    fn isolated_pixel() {
        let m = TissueMask::from_fn(5, 5, |x, y| (x, y) == (2, 3));
        let traces = trace_borders(&m);
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].points, vec![Point::new(2, 3)]);
    }

    #[test]
    fn two_blobs_two_traces_largest_first() {
        let m = TissueMask::from_fn(30, 30, |x, y| {
            ((1..4).contains(&x) && (1..4).contains(&y)) || ((10..20).contains(&x) && (10..25).contains(&y))
        });
        let traces = trace_borders(&m);
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].area, 150);
        assert_eq!(traces[1].area, 9);
        for t in &traces {
            assert_valid(&m, t);
        }
    }

    #[test]
    fn empty_mask_no_traces() {
        assert!(trace_borders(&TissueMask::empty(8, 8)).is_empty());
    }

    #[test]
    fn blob_touching_edges() {
        let m = TissueMask::from_fn(6, 6, |_, _| true);
        let traces = trace_borders(&m);
        assert_eq!(traces[0].len(), 20);
        assert_valid(&m, &traces[0]);
    }

    #[test]
    fn thin_line_visits_pixels_twice() {
        let m = TissueMask::from_fn(10, 3, |x, y| y == 1 && (2..7).contains(&x));
        let t = &trace_borders(&m)[0];
        assert_valid(&m, t);
        // out along the line and back
        assert_eq!(t.len(), 8);
    }

    fn random_blob_mask(seed: u64, w: usize, h: usize) -> TissueMask {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noisy = TissueMask::from_fn(w, h, |_, _| false);
        let mut bits = noisy.bits().to_vec();
        for b in bits.iter_mut() {
            *b = rng.random::<f64>() < 0.45;
        }
        TissueMask::new(w, h, bits)
    }

    proptest! {
        #[test]
        fn every_trace_point_is_on_the_boundary(seed in any::<u64>()) {
            let m = random_blob_mask(seed, 12, 10);
            let traces = trace_borders(&m);
            let (_, sizes) = m.components();
            prop_assert_eq!(traces.len(), sizes.len());
            for t in &traces {
                assert_valid(&m, t);
            }
            // every boundary pixel reachable from outside lies on some trace:
            // checked for the pixels on the component's outermost rows
            for t in &traces {
                let top = t.points.iter().map(|p| p.y).min().unwrap();
                prop_assert!(t.points.iter().any(|p| p.y == top));
            }
        }

        #[test]
        fn dilation_moves_traces_by_at_most_two(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (cx, cy) = (rng.random_range(25.0..35.0), rng.random_range(25.0..35.0));
            let (rx, ry) = (rng.random_range(8.0..18.0), rng.random_range(8.0..18.0));
            let m = TissueMask::from_fn(60, 60, |x, y| {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            });
            let a = &trace_borders(&m)[0];
            let b = &trace_borders(&m.dilate(1))[0];
            prop_assert!(hausdorff(&a.points, &b.points) <= 2.0);
        }
    }

    fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
        let directed = |u: &[Point], v: &[Point]| {
            u.iter()
                .map(|p| {
                    v.iter()
                        .map(|q| {
                            let dx = p.x as f64 - q.x as f64;
                            let dy = p.y as f64 - q.y as f64;
                            (dx * dx + dy * dy).sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(a, b).max(directed(b, a))
    }
}
