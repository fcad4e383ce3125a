use std::ops::{Add, Mul, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Polyline with cumulative arc length, queried by arc-length position.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcPath {
    points: Vec<Vec2>,
    cum: Vec<f64>,
}

impl ArcPath {
    pub fn new(points: Vec<Vec2>) -> Self {
        let mut pts: Vec<Vec2> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q: &Vec2| (p - *q).norm() > 1e-9) {
                pts.push(p);
            }
        }
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        for (i, p) in pts.iter().enumerate() {
            if i > 0 {
                acc += (*p - pts[i - 1]).norm();
            }
            cum.push(acc);
        }
        ArcPath { points: pts, cum }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    /// Point at arc length `s`, clamped to the path ends.
    pub fn at(&self, s: f64) -> Vec2 {
        if self.points.len() < 2 || s <= 0.0 {
            return self.points.first().copied().unwrap_or_default();
        }
        if s >= self.length() {
            return *self.points.last().expect("non-empty");
        }
        let i = self.cum.partition_point(|&c| c <= s).max(1) - 1;
        let seg = self.cum[i + 1] - self.cum[i];
        self.points[i].lerp(self.points[i + 1], (s - self.cum[i]) / seg)
    }

    /// Vertices from the start up to arc length `s`, ending exactly at `at(s)`.
    pub fn prefix(&self, s: f64) -> Vec<Vec2> {
        let mut out: Vec<Vec2> = self.points.iter().zip(&self.cum).take_while(|(_, &c)| c < s).map(|(p, _)| *p).collect();
        out.push(self.at(s));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_length_queries() {
        let p = ArcPath::new(vec![Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), Vec2::new(3.0, 4.0)]);
        assert_eq!(p.length(), 7.0);
        assert_eq!(p.at(1.5), Vec2::new(1.5, 0.0));
        assert_eq!(p.at(5.0), Vec2::new(3.0, 2.0));
        assert_eq!(p.at(100.0), Vec2::new(3.0, 4.0));
        assert_eq!(p.prefix(4.0), vec![Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), Vec2::new(3.0, 1.0)]);
    }

    #[test]
    fn segment_distance() {
        let (a, b) = (Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0));
        assert_eq!(point_segment_distance(Vec2::new(5.0, 3.0), a, b), 3.0);
        assert_eq!(point_segment_distance(Vec2::new(13.0, 4.0), a, b), 5.0);
    }
}
