//! Recursive vessel-tree phantoms.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;

use crate::error::DataError;
use crate::geometry::{point_segment_distance, ArcPath, Vec2};

/// One vessel branch: a quadratic Bezier centreline with constant width.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: Vec2,
    pub ctrl: Vec2,
    pub end: Vec2,
    /// Lumen diameter in pixels.
    pub width: f64,
    /// Attenuation depth (gray levels at the vessel axis).
    pub intensity: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl Segment {
    pub fn point(&self, t: f64) -> Vec2 {
        let u = 1.0 - t;
        self.start * (u * u) + self.ctrl * (2.0 * u * t) + self.end * (t * t)
    }

    /// Centreline sampled at roughly `step` pixel spacing, endpoints included.
    pub fn polyline(&self, step: f64) -> Vec<Vec2> {
        let approx = (self.ctrl - self.start).norm() + (self.end - self.ctrl).norm();
        let n = ((approx / step).ceil() as usize).max(1);
        (0..=n).map(|i| self.point(i as f64 / n as f64)).collect()
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        self.polyline(1.0).windows(2).map(|w| point_segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub pixel_spacing_mm: f64,
    pub segments: Vec<Segment>,
    pub bifurcations: usize,
}

impl PhantomSpec {
    /// True when `p` lies inside some vessel lumen (with `slack` pixels).
    pub fn in_lumen(&self, p: Vec2, slack: f64) -> bool {
        self.segments.iter().any(|s| s.distance_to(p) <= s.width / 2.0 + slack)
    }

    /// Leaf segments reachable from the root, in index order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.segments.len()).filter(|&i| self.segments[i].children.is_empty()).collect()
    }

    /// Centreline path from the root to the end of segment `leaf`.
    pub fn path_to(&self, leaf: usize) -> ArcPath {
        let mut chain = vec![leaf];
        while let Some(p) = self.segments[*chain.last().expect("non-empty")].parent {
            chain.push(p);
        }
        chain.reverse();
        let mut pts = Vec::new();
        for i in chain {
            pts.extend(self.segments[i].polyline(0.5));
        }
        ArcPath::new(pts)
    }

    /// Longest root-to-leaf path; ties go to the lowest leaf index.
    pub fn longest_path(&self) -> ArcPath {
        let mut best: Option<ArcPath> = None;
        for leaf in self.leaves() {
            let p = self.path_to(leaf);
            if best.as_ref().is_none_or(|b| p.length() > b.length()) {
                best = Some(p);
            }
        }
        best.unwrap_or_else(|| ArcPath::new(Vec::new()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeParams {
    pub width: usize,
    pub height: usize,
    pub pixel_spacing_mm: f64,
    pub depth: usize,
    pub root_width: f64,
    pub width_decay: f64,
    pub root_length: f64,
    pub length_decay: f64,
    /// Branch angle range from the parent direction, degrees.
    pub branch_angle: (f64, f64),
    /// Keep-out border, pixels.
    pub margin: f64,
    pub intensity: f64,
    pub min_segment: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            width: 512,
            height: 512,
            pixel_spacing_mm: 0.3,
            depth: 4,
            root_width: 11.0,
            width_decay: 0.72,
            root_length: 190.0,
            length_decay: 0.78,
            branch_angle: (22.0, 42.0),
            margin: 28.0,
            intensity: 48.0,
            min_segment: 24.0,
        }
    }
}

struct Pending {
    start: Vec2,
    angle: f64,
    width: f64,
    length: f64,
    level: usize,
    parent: Option<usize>,
}

/// Grows a binary vessel tree breadth-first. A branch that would leave the
/// image is shortened; one shorter than `min_segment` is dropped.
pub fn gen_vessel_tree(params: &TreeParams, rng: &mut impl Rng) -> Result<PhantomSpec, DataError> {
    if params.depth == 0 {
        return Err(DataError::InvalidParam("tree depth must be >= 1".into()));
    }
    let (w, h, m) = (params.width as f64, params.height as f64, params.margin);
    if w <= 2.0 * m || h <= 2.0 * m {
        return Err(DataError::InvalidParam("image too small for margin".into()));
    }
    let inside = |p: Vec2| p.x >= m && p.x <= w - m && p.y >= m && p.y <= h - m;

    // root enters from a random side, heading roughly to the centre
    let side = rng.random_range(0..4);
    let along = rng.random_range(0.3..0.7);
    let start = match side {
        0 => Vec2::new(m + along * (w - 2.0 * m), m),
        1 => Vec2::new(w - m, m + along * (h - 2.0 * m)),
        2 => Vec2::new(m + along * (w - 2.0 * m), h - m),
        _ => Vec2::new(m, m + along * (h - 2.0 * m)),
    };
    let to_centre = Vec2::new(w / 2.0, h / 2.0) - start;
    let angle = to_centre.y.atan2(to_centre.x) + rng.random_range(-0.3..0.3);

    let mut segments: Vec<Segment> = Vec::new();
    let mut queue = VecDeque::from([Pending {
        start,
        angle,
        width: params.root_width,
        length: params.root_length,
        level: 1,
        parent: None,
    }]);
    while let Some(p) = queue.pop_front() {
        let dir = Vec2::from_angle(p.angle);
        // longest prefix of the intended segment that stays inside
        let mut len = p.length;
        while len >= params.min_segment && !inside(p.start + dir * len) {
            len -= 2.0;
        }
        if len < params.min_segment {
            continue;
        }
        let end = p.start + dir * len;
        let bend = rng.random_range(-0.18..0.18) * len;
        let mut ctrl = p.start.lerp(end, 0.5) + dir.perp() * bend;
        if !inside(ctrl) {
            ctrl = p.start.lerp(end, 0.5);
        }
        let idx = segments.len();
        segments.push(Segment {
            start: p.start,
            ctrl,
            end,
            width: p.width,
            intensity: params.intensity * (0.8 + 0.2 * p.width / params.root_width),
            parent: p.parent,
            children: Vec::new(),
        });
        if let Some(parent) = p.parent {
            segments[parent].children.push(idx);
        }
        if p.level < params.depth {
            // continue from the curve's end tangent
            let tangent = end - ctrl;
            let base = tangent.y.atan2(tangent.x);
            for sign in [-1.0, 1.0] {
                let spread = rng.random_range(params.branch_angle.0..params.branch_angle.1) * PI / 180.0;
                let decay = rng.random_range(0.9..1.1);
                queue.push_back(Pending {
                    start: end,
                    angle: base + sign * spread,
                    width: (p.width * params.width_decay * decay).max(2.0),
                    length: p.length * params.length_decay * decay,
                    level: p.level + 1,
                    parent: Some(idx),
                });
            }
        }
    }
    let bifurcations = segments.iter().filter(|s| s.children.len() == 2).count();
    Ok(PhantomSpec {
        width: params.width,
        height: params.height,
        pixel_spacing_mm: params.pixel_spacing_mm,
        segments,
        bifurcations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_one_is_single_segment() {
        let params = TreeParams { depth: 1, ..Default::default() };
        let t = gen_vessel_tree(&params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(t.segments.len(), 1);
        assert_eq!(t.bifurcations, 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = TreeParams::default();
        let a = gen_vessel_tree(&p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gen_vessel_tree(&p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn segment_count_bound_and_bounds() {
        for depth in 1..=6 {
            for seed in 0..20 {
                let p = TreeParams { depth, ..Default::default() };
                let t = gen_vessel_tree(&p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                assert!(t.segments.len() < 1 << depth);
                for s in &t.segments {
                    assert!(s.width > 0.0);
                    for q in [s.start, s.ctrl, s.end] {
                        assert!(q.x >= p.margin && q.x <= 512.0 - p.margin);
                        assert!(q.y >= p.margin && q.y <= 512.0 - p.margin);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_depth_rejected() {
        let p = TreeParams { depth: 0, ..Default::default() };
        assert!(gen_vessel_tree(&p, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn longest_path_stays_in_lumen() {
        let t = gen_vessel_tree(&TreeParams::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let path = t.longest_path();
        assert!(path.length() > 100.0);
        for &p in path.points().iter().step_by(7) {
            assert!(t.in_lumen(p, 0.0));
        }
    }
}
