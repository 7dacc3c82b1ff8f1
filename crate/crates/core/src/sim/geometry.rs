use serde::{Deserialize, Serialize};

use crate::kinematics::wrap_angle;

/// Rigid planar transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, yaw: 0.0 };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.yaw]
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    /// Inverse of [`Pose2::apply`].
    pub fn apply_inv(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let [x, y] = self.apply([other.x, other.y]);
        Pose2::new(x, y, wrap_angle(self.yaw + other.yaw))
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, wrap_angle(-self.yaw))
    }
}

/// Signed distance to an axis-aligned box at the origin with half extents `h`, and its gradient.
pub fn sdf_box(p: [f64; 2], h: [f64; 2]) -> (f64, [f64; 2]) {
    let q = [p[0].abs() - h[0], p[1].abs() - h[1]];
    let sx = if p[0] < 0.0 { -1.0 } else { 1.0 };
    let sy = if p[1] < 0.0 { -1.0 } else { 1.0 };
    if q[0] > 0.0 || q[1] > 0.0 {
        let o = [q[0].max(0.0), q[1].max(0.0)];
        let d = o[0].hypot(o[1]);
        (d, [sx * o[0] / d, sy * o[1] / d])
    } else if q[0] > q[1] {
        (q[0], [sx, 0.0])
    } else {
        (q[1], [0.0, sy])
    }
}

/// Planar solid described by a signed distance (negative inside).
pub trait Sdf {
    /// Distance and outward gradient at a world point.
    fn eval(&self, p: [f64; 2]) -> (f64, [f64; 2]);

    fn distance(&self, p: [f64; 2]) -> f64 {
        self.eval(p).0
    }
}

impl<F: Fn([f64; 2]) -> (f64, [f64; 2])> Sdf for F {
    fn eval(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        self(p)
    }
}

/// `{p : n . p <= offset}` with unit normal `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlane {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl Sdf for HalfPlane {
    fn eval(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        (self.normal[0] * p[0] + self.normal[1] * p[1] - self.offset, self.normal)
    }
}

/// Oriented rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectSolid {
    pub pose: Pose2,
    pub half: [f64; 2],
}

impl Sdf for RectSolid {
    fn eval(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (d, g) = sdf_box(self.pose.apply_inv(p), self.half);
        (d, self.pose.rotate(g))
    }
}

/// Block with a straight channel cut into its `-x` face.
///
/// In the object frame the block spans `x in [0, depth]`, `|y| <= half_width`;
/// the channel spans `x in [0, channel_depth]`, `|y| < gap / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotBlock {
    pub pose: Pose2,
    pub depth: f64,
    pub half_width: f64,
    pub channel_depth: f64,
    pub gap: f64,
}

impl SlotBlock {
    pub fn eval_local(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (a, ga) = sdf_box([p[0] - self.depth / 2.0, p[1]], [self.depth / 2.0, self.half_width]);
        // channel box extended past the mouth so the cut is open
        let ext = self.half_width;
        let (b, gb) = sdf_box(
            [p[0] - (self.channel_depth - ext) / 2.0, p[1]],
            [(self.channel_depth + ext) / 2.0, self.gap / 2.0],
        );
        if a >= -b {
            (a, ga)
        } else {
            (-b, [-gb[0], -gb[1]])
        }
    }

    /// Convex corners of the block in the object frame.
    pub fn corners_local(&self) -> [[f64; 2]; 8] {
        let (d, h, c, g) = (self.depth, self.half_width, self.channel_depth, self.gap / 2.0);
        [[0.0, g], [0.0, -g], [c, g], [c, -g], [0.0, h], [0.0, -h], [d, h], [d, -h]]
    }
}

impl Sdf for SlotBlock {
    fn eval(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (d, g) = self.eval_local(self.pose.apply_inv(p));
        (d, self.pose.rotate(g))
    }
}

/// Rectangular peg in the wrist frame: `x in [offset, offset + length]`, `|y| <= width / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peg {
    pub offset: f64,
    pub length: f64,
    pub width: f64,
}

impl Peg {
    pub fn tip(&self) -> [f64; 2] {
        [self.offset + self.length, 0.0]
    }

    pub fn solid(&self, wrist: Pose2) -> RectSolid {
        RectSolid {
            pose: wrist.compose(&Pose2::new(self.offset + self.length / 2.0, 0.0, 0.0)),
            half: [self.length / 2.0, self.width / 2.0],
        }
    }

    /// Boundary samples in the wrist frame, spaced at most `spacing` apart.
    pub fn boundary(&self, spacing: f64) -> Vec<[f64; 2]> {
        let (x0, x1, h) = (self.offset, self.offset + self.length, self.width / 2.0);
        let edge = |a: [f64; 2], b: [f64; 2], out: &mut Vec<[f64; 2]>| {
            let n = (((b[0] - a[0]).hypot(b[1] - a[1])) / spacing).ceil().max(1.0) as usize;
            for i in 0..n {
                let t = i as f64 / n as f64;
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        };
        let mut pts = Vec::new();
        edge([x0, -h], [x1, -h], &mut pts);
        edge([x1, -h], [x1, h], &mut pts);
        edge([x1, h], [x0, h], &mut pts);
        edge([x0, h], [x0, -h], &mut pts);
        pts
    }
}

/// Deepest overlap between the peg and the block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub depth: f64,
    /// World point on the peg.
    pub point: [f64; 2],
    /// Unit direction that moves the peg out of the block.
    pub normal: [f64; 2],
}

/// Deepest peg/block overlap for the peg at `wrist`, or `None` when separated.
pub fn deepest_contact(block: &SlotBlock, peg: &Peg, samples: &[[f64; 2]], wrist: Pose2) -> Option<Contact> {
    let mut best: Option<Contact> = None;
    let mut consider = |c: Contact| {
        if c.depth > 0.0 && best.map_or(true, |b| c.depth > b.depth) {
            best = Some(c);
        }
    };
    for s in samples {
        let p = wrist.apply(*s);
        let (d, g) = block.eval(p);
        consider(Contact { depth: -d, point: p, normal: g });
    }
    let solid = peg.solid(wrist);
    for c in block.corners_local() {
        let p = block.pose.apply(c);
        let (d, g) = solid.eval(p);
        consider(Contact {
            depth: -d,
            point: p,
            normal: [-g[0], -g[1]],
        });
    }
    best
}
