use serde::{Deserialize, Serialize};

use crate::dynamics::BoxBounds;

/// Wall between two points in the first two state coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl WallSegment {
    fn distance_to(&self, p: [f64; 2]) -> f64 {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len_sq = dx * dx + dy * dy;
        let t = if len_sq > 0.0 {
            (((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (cx, cy) = (self.a[0] + t * dx, self.a[1] + t * dy);
        ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
    }
}

fn default_margin() -> f64 {
    0.05
}

/// State-space obstacles: closed boxes and thickened wall segments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    #[serde(default)]
    pub boxes: Vec<BoxBounds>,
    #[serde(default)]
    pub walls: Vec<WallSegment>,
    /// Points closer than this to a wall are inside it.
    #[serde(default = "default_margin")]
    pub wall_margin: f64,
}

impl ObstacleSet {
    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty() && self.walls.is_empty()
    }
}

pub fn inside_obstacle(obs: &ObstacleSet, x: &[f64]) -> bool {
    if obs.boxes.iter().any(|b| b.contains(x)) {
        return true;
    }
    if x.len() >= 2 {
        let p = [x[0], x[1]];
        return obs.walls.iter().any(|w| w.distance_to(p) <= obs.wall_margin);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three walls forming a U with its mouth facing -x.
    fn u_walls() -> ObstacleSet {
        ObstacleSet {
            boxes: vec![],
            walls: vec![
                WallSegment { a: [-3.0, -1.0], b: [-1.0, -1.0] },
                WallSegment { a: [-1.0, -1.0], b: [-1.0, 1.0] },
                WallSegment { a: [-1.0, 1.0], b: [-3.0, 1.0] },
            ],
            wall_margin: 0.05,
        }
    }

    #[test]
    fn empty_set_contains_nothing() {
        let obs = ObstacleSet::default();
        assert!(!inside_obstacle(&obs, &[0.0, 0.0]));
        assert!(!inside_obstacle(&obs, &[100.0, -3.0]));
    }

    #[test]
    fn unit_box() {
        let obs = ObstacleSet {
            boxes: vec![BoxBounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()],
            ..Default::default()
        };
        assert!(inside_obstacle(&obs, &[0.5, 0.5]));
        assert!(!inside_obstacle(&obs, &[1.5, 0.5]));
    }

    #[test]
    fn u_shaped_walls() {
        let obs = u_walls();
        // inside the mouth, 0.5 from the nearest wall
        assert!(!inside_obstacle(&obs, &[-2.0, 0.5]));
        assert!(!inside_obstacle(&obs, &[-2.0, 0.0]));
        // on each wall
        assert!(inside_obstacle(&obs, &[-2.0, -1.0]));
        assert!(inside_obstacle(&obs, &[-1.0, 0.3]));
        assert!(inside_obstacle(&obs, &[-1.5, 1.04]));
        // just beyond the margin
        assert!(!inside_obstacle(&obs, &[-0.94, 0.0]));
        // past the end of an arm
        assert!(!inside_obstacle(&obs, &[-3.1, -1.0]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn enlarging_a_box_is_monotone(
                lo0 in -3.0f64..0.0, lo1 in -3.0f64..0.0,
                w0 in 0.0f64..3.0, w1 in 0.0f64..3.0,
                grow in 0.0f64..1.0,
                x0 in -5.0f64..5.0, x1 in -5.0f64..5.0,
            ) {
                let small = ObstacleSet {
                    boxes: vec![BoxBounds::new(vec![lo0, lo1], vec![lo0 + w0, lo1 + w1]).unwrap()],
                    ..Default::default()
                };
                let big = ObstacleSet {
                    boxes: vec![BoxBounds::new(vec![lo0 - grow, lo1 - grow], vec![lo0 + w0 + grow, lo1 + w1 + grow]).unwrap()],
                    ..Default::default()
                };
                if inside_obstacle(&small, &[x0, x1]) {
                    prop_assert!(inside_obstacle(&big, &[x0, x1]));
                }
            }
        }
    }
}
