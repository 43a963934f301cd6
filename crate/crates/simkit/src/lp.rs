//! Incremental 2D linear programming over half-planes inside a disc.
//!
//! This is the solver of the RVO2 reference library: constraints are added
//! one at a time and the optimum only moves when the current one violates
//! the new half-plane, in which case a 1D program along that boundary line
//! finds the new optimum. When the half-planes have no common point inside
//! the disc, the problem is lifted to 3D and the velocity that violates the
//! constraints the least is returned instead.

use num_traits::Float;

use crate::vec2::Vec2;

/// Boundary of a half-plane. Feasible points lie to the left of
/// `direction` (counter-clockwise side) when standing on `point`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlane<F> {
    pub point: Vec2<F>,
    /// Unit length.
    pub direction: Vec2<F>,
}

impl<F: Float> HalfPlane<F> {
    /// Signed violation: positive when `v` lies on the infeasible side.
    pub fn violation(&self, v: Vec2<F>) -> F {
        self.direction.det(self.point - v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Solution<F> {
    /// Optimum of the feasible program.
    Feasible(Vec2<F>),
    /// The half-planes have no common point in the disc; this is the point
    /// minimizing the largest violation.
    LeastViolating(Vec2<F>),
}

impl<F: Copy> Solution<F> {
    pub fn point(&self) -> Vec2<F> {
        match *self {
            Solution::Feasible(p) | Solution::LeastViolating(p) => p,
        }
    }
}

#[derive(Clone, Copy)]
enum Objective<F> {
    /// Closest point to a target.
    Closest(Vec2<F>),
    /// Farthest point along a unit direction.
    Farthest(Vec2<F>),
}

fn parallel_eps<F: Float>() -> F {
    F::from(1e-9).unwrap()
}

/// Point of `lines` within `radius` of the origin closest to `preferred`.
pub fn solve<F: Float>(lines: &[HalfPlane<F>], radius: F, preferred: Vec2<F>) -> Solution<F> {
    let (failed, partial) = solve_2d(lines, radius, Objective::Closest(preferred));
    if failed == lines.len() {
        Solution::Feasible(partial)
    } else {
        Solution::LeastViolating(solve_3d(lines, failed, radius, partial))
    }
}

/// 1D program along the boundary of `lines[index]`, subject to
/// `lines[..index]`. `None` when infeasible.
fn solve_on_line<F: Float>(
    lines: &[HalfPlane<F>],
    index: usize,
    radius: F,
    objective: Objective<F>,
) -> Option<Vec2<F>> {
    let line = lines[index];
    let along = line.point.dot(line.direction);
    let discriminant = along * along + radius * radius - line.point.norm_sq();
    if discriminant < F::zero() {
        // boundary misses the disc entirely
        return None;
    }
    let root = discriminant.sqrt();
    let mut t_left = -along - root;
    let mut t_right = -along + root;

    for other in &lines[..index] {
        let denominator = line.direction.det(other.direction);
        let numerator = other.direction.det(line.point - other.point);
        if denominator.abs() <= parallel_eps() {
            if numerator < F::zero() {
                return None;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= F::zero() {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = match objective {
        Objective::Farthest(dir) => {
            if dir.dot(line.direction) > F::zero() {
                t_right
            } else {
                t_left
            }
        }
        Objective::Closest(target) => line
            .direction
            .dot(target - line.point)
            .max(t_left)
            .min(t_right),
    };
    Some(line.point + line.direction * t)
}

/// Returns the index of the first constraint that made the program
/// infeasible (`lines.len()` on success) and the optimum so far.
fn solve_2d<F: Float>(
    lines: &[HalfPlane<F>],
    radius: F,
    objective: Objective<F>,
) -> (usize, Vec2<F>) {
    let mut best = match objective {
        Objective::Farthest(dir) => dir * radius,
        Objective::Closest(p) if p.norm_sq() > radius * radius => p.normalize() * radius,
        Objective::Closest(p) => p,
    };
    for (i, line) in lines.iter().enumerate() {
        if line.violation(best) > F::zero() {
            match solve_on_line(lines, i, radius, objective) {
                Some(p) => best = p,
                None => return (i, best),
            }
        }
    }
    (lines.len(), best)
}

/// Minimizes the maximum violation over `lines[first_failed..]`, starting
/// from a point that satisfies `lines[..first_failed]`.
fn solve_3d<F: Float>(
    lines: &[HalfPlane<F>],
    first_failed: usize,
    radius: F,
    start: Vec2<F>,
) -> Vec2<F> {
    let mut best = start;
    let mut distance = F::zero();
    let half = F::from(0.5).unwrap();

    for i in first_failed..lines.len() {
        let line = lines[i];
        if line.violation(best) <= distance {
            continue;
        }
        // Points where lines[i] is violated no more than each earlier line.
        let mut projected = Vec::with_capacity(i);
        for other in &lines[..i] {
            let determinant = line.direction.det(other.direction);
            let point = if determinant.abs() <= parallel_eps() {
                if line.direction.dot(other.direction) > F::zero() {
                    continue;
                }
                (line.point + other.point) * half
            } else {
                let t = other.direction.det(line.point - other.point) / determinant;
                line.point + line.direction * t
            };
            projected.push(HalfPlane {
                point,
                direction: (other.direction - line.direction).normalize(),
            });
        }
        let (failed, candidate) = solve_2d(
            &projected,
            radius,
            Objective::Farthest(line.direction.perp()),
        );
        // Failure here can only come from round-off; keep the previous point.
        if failed == projected.len() {
            best = candidate;
        }
        distance = line.violation(best);
    }
    best
}
