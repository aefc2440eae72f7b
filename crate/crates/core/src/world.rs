//! Collision geometry: a KD-tree over the scene point cloud, the cylinder
//! collision test, nearest-obstacle distance and start/goal sampling.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Balanced 3D KD-tree. Queries are exact and return point indices in
/// ascending order.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: Option<u32>,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    point: u32,
    axis: u8,
    left: Option<u32>,
    right: Option<u32>,
}

impl SpatialIndex {
    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        let mut ids: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(&points, &mut ids, 0, &mut nodes);
        SpatialIndex {
            points,
            nodes,
            root,
        }
    }

    fn build_rec(
        points: &[Vector3<f64>],
        ids: &mut [u32],
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> Option<u32> {
        if ids.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = ids.len() / 2;
        ids.select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        let slot = nodes.len();
        nodes.push(Node {
            point: ids[mid],
            axis: axis as u8,
            left: None,
            right: None,
        });
        let (lo, rest) = ids.split_at_mut(mid);
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, &mut rest[1..], depth + 1, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        Some(slot as u32)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        self.points[i]
    }

    /// Indices of points `p` with `|p - center| <= r`.
    pub fn query_radius(&self, center: &Vector3<f64>, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if r < 0.0 {
            return out;
        }
        let r2 = r * r;
        self.visit_box(
            &(center - Vector3::repeat(r)),
            &(center + Vector3::repeat(r)),
            &mut |i, p| {
                if (p - center).norm_squared() <= r2 {
                    out.push(i);
                }
            },
        );
        out.sort_unstable();
        out
    }

    /// Indices of points inside the closed box `[lo, hi]`.
    pub fn query_box(&self, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_box(lo, hi, &mut |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    fn visit_box(
        &self,
        lo: &Vector3<f64>,
        hi: &Vector3<f64>,
        f: &mut dyn FnMut(usize, &Vector3<f64>),
    ) {
        let mut stack: Vec<u32> = self.root.into_iter().collect();
        while let Some(n) = stack.pop() {
            let node = self.nodes[n as usize];
            let p = &self.points[node.point as usize];
            if (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]) {
                f(node.point as usize, p);
            }
            let a = node.axis as usize;
            // left subtree holds values <= split, right >= split
            if let Some(l) = node.left {
                if lo[a] <= p[a] {
                    stack.push(l);
                }
            }
            if let Some(r) = node.right {
                if hi[a] >= p[a] {
                    stack.push(r);
                }
            }
        }
    }
}

/// Collision cylinder and obstacle-distance parameters, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionSpec {
    pub r_col: f64,
    pub h_tol: f64,
    pub delta_safe: f64,
    pub r_safe: f64,
    pub r_goal: f64,
}

impl Default for CollisionSpec {
    fn default() -> Self {
        CollisionSpec {
            r_col: 0.3,
            h_tol: 0.2,
            delta_safe: 0.2,
            r_safe: 2.0,
            r_goal: 2.0,
        }
    }
}

impl CollisionSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.r_col, self.h_tol, self.delta_safe, self.r_safe, self.r_goal];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("collision parameters must be positive".into()))
        }
    }

    pub fn query_radius(&self) -> f64 {
        self.r_col + self.delta_safe
    }

    /// Horizontal search radius for the nearest obstacle.
    pub fn obstacle_radius(&self) -> f64 {
        self.r_safe.max(self.query_radius())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionResult {
    pub collided: bool,
    /// Horizontal distance to the nearest height-gated point within
    /// [`CollisionSpec::obstacle_radius`]; `+∞` when there is none.
    pub d_obs: f64,
}

fn horizontal(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Cylinder test: collided iff some point lies within `r_col` horizontally
/// and `h_tol` vertically of the drone.
pub fn check_collision(index: &SpatialIndex, drone: &Vector3<f64>, spec: &CollisionSpec) -> CollisionResult {
    let reach = spec.obstacle_radius();
    let lo = drone - Vector3::new(reach, reach, spec.h_tol);
    let hi = drone + Vector3::new(reach, reach, spec.h_tol);
    let mut collided = false;
    let mut d_obs = f64::INFINITY;
    index.visit_box(&lo, &hi, &mut |_, p| {
        if (drone.z - p.z).abs() > spec.h_tol {
            return;
        }
        let d = horizontal(drone, p);
        if d <= spec.r_col {
            collided = true;
        }
        if d <= reach && d < d_obs {
            d_obs = d;
        }
    });
    CollisionResult { collided, d_obs }
}

/// 2D occupancy grid at a fixed altitude, obstacles inflated by `r_col`.
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    pub origin: [f64; 2],
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    blocked: Vec<bool>,
}

impl OccupancyGrid {
    /// Cells whose center lies within `r_col` (horizontally) of a point in
    /// the height band `|z - altitude| <= h_tol`, plus each such point's own
    /// cell, are blocked.
    pub fn build(
        index: &SpatialIndex,
        area: [f64; 4],
        altitude: f64,
        cell: f64,
        spec: &CollisionSpec,
    ) -> Self {
        let [x0, y0, x1, y1] = area;
        let nx = ((x1 - x0) / cell).ceil().max(1.0) as usize;
        let ny = ((y1 - y0) / cell).ceil().max(1.0) as usize;
        let mut grid = OccupancyGrid {
            origin: [x0, y0],
            cell,
            nx,
            ny,
            blocked: vec![false; nx * ny],
        };
        let lo = Vector3::new(x0 - spec.r_col, y0 - spec.r_col, altitude - spec.h_tol);
        let hi = Vector3::new(x1 + spec.r_col, y1 + spec.r_col, altitude + spec.h_tol);
        for i in index.query_box(&lo, &hi) {
            let p = index.point(i);
            if let Some(c) = grid.cell_of(p.x, p.y) {
                grid.blocked[c.1 * nx + c.0] = true;
            }
            let span = (spec.r_col / cell).ceil() as i64 + 1;
            let ci = ((p.x - x0) / cell).floor() as i64;
            let cj = ((p.y - y0) / cell).floor() as i64;
            for j in cj - span..=cj + span {
                for i in ci - span..=ci + span {
                    if i < 0 || j < 0 || i >= nx as i64 || j >= ny as i64 {
                        continue;
                    }
                    let c = grid.center(i as usize, j as usize);
                    if ((c[0] - p.x).powi(2) + (c[1] - p.y).powi(2)).sqrt() <= spec.r_col {
                        grid.blocked[j as usize * nx + i as usize] = true;
                    }
                }
            }
        }
        grid
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.cell,
            self.origin[1] + (j as f64 + 0.5) * self.cell,
        ]
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin[0]) / self.cell).floor();
        let j = ((y - self.origin[1]) / self.cell).floor();
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.ny as f64 {
            None
        } else {
            Some((i as usize, j as usize))
        }
    }

    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.blocked[j * self.nx + i]
    }

    /// 4-connected breadth-first search between the cells containing `a`
    /// and `b`.
    pub fn connected(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let (Some(s), Some(g)) = (self.cell_of(a[0], a[1]), self.cell_of(b[0], b[1])) else {
            return false;
        };
        if self.is_blocked(s.0, s.1) || self.is_blocked(g.0, g.1) {
            return false;
        }
        let mut seen = vec![false; self.blocked.len()];
        let mut queue = VecDeque::from([s]);
        seen[s.1 * self.nx + s.0] = true;
        while let Some((i, j)) = queue.pop_front() {
            if (i, j) == g {
                return true;
            }
            let mut push = |ni: usize, nj: usize| {
                let k = nj * self.nx + ni;
                if !seen[k] && !self.blocked[k] {
                    seen[k] = true;
                    queue.push_back((ni, nj));
                }
            };
            if i > 0 {
                push(i - 1, j);
            }
            if i + 1 < self.nx {
                push(i + 1, j);
            }
            if j > 0 {
                push(i, j - 1);
            }
            if j + 1 < self.ny {
                push(i, j + 1);
            }
        }
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingSpec {
    pub min_distance: f64,
    pub attempts: usize,
    pub grid_cell: f64,
    /// Keep samples this far inside the area border.
    pub border: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            min_distance: 30.0,
            attempts: 1000,
            grid_cell: 0.5,
            border: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartGoal {
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
    /// Initial yaw, facing the goal.
    pub yaw: f64,
}

/// Rejection-samples a start/goal pair at `altitude` inside `area`
/// (`[min_x, min_y, max_x, max_y]`).
pub fn sample_start_goal<R: Rng>(
    index: &SpatialIndex,
    area: [f64; 4],
    altitude: f64,
    spec: &CollisionSpec,
    sampling: &SamplingSpec,
    rng: &mut R,
) -> Result<StartGoal> {
    let grid = OccupancyGrid::build(index, area, altitude, sampling.grid_cell, spec);
    let [x0, y0, x1, y1] = area;
    let b = sampling.border;
    if x1 - x0 <= 2.0 * b || y1 - y0 <= 2.0 * b {
        return Err(Error::input("sampling area is smaller than its border"));
    }
    let clear = |p: &Vector3<f64>| {
        let r = spec.query_radius();
        index
            .query_box(
                &(p - Vector3::new(r, r, spec.h_tol)),
                &(p + Vector3::new(r, r, spec.h_tol)),
            )
            .into_iter()
            .all(|i| horizontal(p, &index.point(i)) > r)
    };
    for _ in 0..sampling.attempts {
        let start = Vector3::new(
            rng.gen_range(x0 + b..x1 - b),
            rng.gen_range(y0 + b..y1 - b),
            altitude,
        );
        let goal = Vector3::new(
            rng.gen_range(x0 + b..x1 - b),
            rng.gen_range(y0 + b..y1 - b),
            altitude,
        );
        if (goal - start).norm() < sampling.min_distance {
            continue;
        }
        if !clear(&start) || !clear(&goal) {
            continue;
        }
        if !grid.connected([start.x, start.y], [goal.x, goal.y]) {
            continue;
        }
        let yaw = (goal.y - start.y).atan2(goal.x - start.x);
        return Ok(StartGoal { start, goal, yaw });
    }
    Err(Error::SceneTooDense {
        attempts: sampling.attempts,
    })
}
