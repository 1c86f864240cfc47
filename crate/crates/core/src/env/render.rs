//! Egocentric ray-cast renderer. Each of the 16 image columns is one ray of a
//! 90° frustum (leftmost column = leftmost ray). A ray that hits a wall or
//! pillar draws a vertical band whose height grows as the hit gets closer,
//! tinted by the hit cell's color; the floor strip of a column lights up
//! when the goal cell lies on the ray before any hit.

use super::{heading_vector, AgentPose, Cell, GridMap};
use crate::encoders::ToyObservation;

pub const RAYS: usize = 16;
pub const FOV_DEGREES: f64 = 90.0;
pub const MAX_VIEW_DISTANCE: f64 = 8.0;
const IMAGE: usize = 16;
const WALL_RGB: [f64; 3] = [0.5, 0.5, 0.5];
const GOAL_ROWS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
struct RayHit {
    distance: f64,
    cell: Option<Cell>,
    goal_distance: Option<f64>,
}

fn cast(map: &GridMap, origin: (f64, f64), dir: (f64, f64)) -> RayHit {
    let goal = map.goal_cell();
    let (mut cx, mut cy) = (origin.0.floor() as i64, origin.1.floor() as i64);
    let step = |d: f64| if d > 0.0 { 1 } else { -1 };
    let (sx, sy) = (step(dir.0), step(dir.1));
    let delta = |d: f64| if d == 0.0 { f64::INFINITY } else { 1.0 / d.abs() };
    let (dx, dy) = (delta(dir.0), delta(dir.1));
    let first = |o: f64, c: i64, d: f64, s: i64| {
        if d == 0.0 {
            f64::INFINITY
        } else {
            let edge = if s > 0 { c as f64 + 1.0 } else { c as f64 };
            (edge - o) / d
        }
    };
    let mut tx = first(origin.0, cx, dir.0, sx);
    let mut ty = first(origin.1, cy, dir.1, sy);
    let mut t = 0.0;
    let mut goal_distance = None;
    loop {
        if t > MAX_VIEW_DISTANCE {
            return RayHit {
                distance: MAX_VIEW_DISTANCE,
                cell: None,
                goal_distance,
            };
        }
        match map.cell(cx, cy) {
            None => {
                return RayHit {
                    distance: MAX_VIEW_DISTANCE,
                    cell: None,
                    goal_distance,
                }
            }
            Some(c) if c.is_blocking() => {
                return RayHit {
                    distance: t,
                    cell: Some(c),
                    goal_distance,
                }
            }
            Some(_) => {
                if goal_distance.is_none() && (cx, cy) == (goal.0 as i64, goal.1 as i64) {
                    goal_distance = Some(t);
                }
            }
        }
        if tx < ty {
            t = tx;
            tx += dx;
            cx += sx;
        } else {
            t = ty;
            ty += dy;
            cy += sy;
        }
    }
}

fn ray_direction(pose: &AgentPose, column: usize) -> (f64, f64) {
    let offset = FOV_DEGREES / 2.0 - (column as f64 + 0.5) * FOV_DEGREES / RAYS as f64;
    if offset == 0.0 {
        return heading_vector(pose.heading);
    }
    let a = (f64::from(pose.heading) * 15.0 + offset).to_radians();
    (a.cos(), a.sin())
}

pub fn render_obs(map: &GridMap, pose: AgentPose) -> ToyObservation {
    let mut obs = ToyObservation::zeros(IMAGE, IMAGE, 3);
    for col in 0..RAYS {
        let hit = cast(map, pose.position(), ray_direction(&pose, col));
        let near = 1.0 - hit.distance.min(MAX_VIEW_DISTANCE) / MAX_VIEW_DISTANCE;
        if let Some(cell) = hit.cell {
            let rgb = match cell {
                Cell::Landmark(c) => c.rgb(),
                _ => WALL_RGB,
            };
            let shade = 0.35 + 0.65 * near;
            let half = IMAGE as f64 / 2.0;
            for row in 0..IMAGE {
                if (row as f64 + 0.5 - half).abs() < half * near {
                    for (ch, v) in rgb.iter().enumerate() {
                        obs.set(row, col, ch, v * shade);
                    }
                }
            }
        }
        if let Some(gd) = hit.goal_distance {
            let g_near = 1.0 - gd.min(MAX_VIEW_DISTANCE) / MAX_VIEW_DISTANCE;
            for row in IMAGE - GOAL_ROWS..IMAGE {
                obs.set(row, col, 0, 1.0);
                obs.set(row, col, 1, 1.0);
                obs.set(row, col, 2, g_near);
            }
        }
    }
    obs
}
