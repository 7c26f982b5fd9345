//! Reference generators.

use std::f64::consts::{FRAC_PI_4, TAU};

use serde::{Deserialize, Serialize};

use crate::dynamics::QuadState;
use crate::{Error, Result};

/// References at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setpoint {
    /// Position references with feedforward velocity; roll and pitch come
    /// from the outer loop.
    Position {
        x: f64,
        y: f64,
        z: f64,
        yaw: f64,
        vx: f64,
        vy: f64,
    },
    Attitude {
        roll: f64,
        pitch: f64,
        yaw: f64,
        z: f64,
    },
}

impl Setpoint {
    pub fn yaw(&self) -> f64 {
        match *self {
            Setpoint::Position { yaw, .. } | Setpoint::Attitude { yaw, .. } => yaw,
        }
    }

    pub fn z(&self) -> f64 {
        match *self {
            Setpoint::Position { z, .. } | Setpoint::Attitude { z, .. } => z,
        }
    }
}

/// One waypoint: arrival time and pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Trajectory {
    Hover {
        #[serde(default)]
        x: f64,
        #[serde(default)]
        y: f64,
        #[serde(default = "default_height")]
        z: f64,
        #[serde(default)]
        yaw: f64,
    },
    /// Counter-clockwise square starting at `origin`, constant speed along
    /// each side, holding the start corner once the lap is done.
    Square {
        #[serde(default = "default_side")]
        side: f64,
        #[serde(default = "default_side_time")]
        side_time: f64,
        #[serde(default = "default_height")]
        z: f64,
        #[serde(default)]
        origin: [f64; 2],
        #[serde(default)]
        yaw: f64,
    },
    /// Helix about the z axis starting at `(radius, 0, z0)`.
    Helix {
        #[serde(default = "default_radius")]
        radius: f64,
        /// Climb per revolution, m.
        #[serde(default = "default_pitch")]
        pitch: f64,
        /// Revolutions per second.
        #[serde(default = "default_rev_rate")]
        rev_rate: f64,
        #[serde(default = "default_height")]
        z0: f64,
        #[serde(default)]
        yaw: f64,
    },
    /// Piecewise-linear path through timed waypoints; holds the last one.
    Waypoints { points: Vec<Waypoint> },
    /// Direct attitude references with altitude hold.
    Attitude {
        #[serde(default)]
        roll: f64,
        #[serde(default)]
        pitch: f64,
        #[serde(default)]
        yaw: f64,
        #[serde(default = "default_height")]
        z: f64,
    },
}

fn default_height() -> f64 {
    2.0
}
fn default_side() -> f64 {
    4.0
}
fn default_side_time() -> f64 {
    20.0
}
fn default_radius() -> f64 {
    1.0
}
fn default_pitch() -> f64 {
    0.5
}
fn default_rev_rate() -> f64 {
    0.1
}

impl Trajectory {
    pub fn kind(&self) -> &'static str {
        match self {
            Trajectory::Hover { .. } => "hover",
            Trajectory::Square { .. } => "square",
            Trajectory::Helix { .. } => "helix",
            Trajectory::Waypoints { .. } => "waypoints",
            Trajectory::Attitude { .. } => "attitude",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        let ok = match self {
            Trajectory::Hover { x, y, z, yaw } => finite(&[*x, *y, *z, *yaw]),
            Trajectory::Square {
                side,
                side_time,
                z,
                origin,
                yaw,
            } => {
                finite(&[*side, *z, origin[0], origin[1], *yaw])
                    && *side_time > 0.0
                    && side_time.is_finite()
            }
            Trajectory::Helix {
                radius,
                pitch,
                rev_rate,
                z0,
                yaw,
            } => finite(&[*radius, *pitch, *rev_rate, *z0, *yaw]) && *radius >= 0.0,
            Trajectory::Waypoints { points } => {
                !points.is_empty()
                    && points.iter().all(|p| finite(&[p.t, p.x, p.y, p.z, p.yaw]))
                    && points.windows(2).all(|w| w[1].t > w[0].t)
            }
            Trajectory::Attitude {
                roll,
                pitch,
                yaw,
                z,
            } => finite(&[*yaw, *z]) && roll.abs() <= FRAC_PI_4 && pitch.abs() <= FRAC_PI_4,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid {} trajectory parameters",
                self.kind()
            )))
        }
    }

    pub fn setpoint(&self, t: f64) -> Setpoint {
        match *self {
            Trajectory::Hover { x, y, z, yaw } => Setpoint::Position {
                x,
                y,
                z,
                yaw,
                vx: 0.0,
                vy: 0.0,
            },
            Trajectory::Square {
                side,
                side_time,
                z,
                origin,
                yaw,
            } => {
                const CORNERS: [[f64; 2]; 5] =
                    [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
                let leg = (t / side_time).floor();
                let (p, v) = if t < 0.0 || leg >= 4.0 {
                    ([0.0, 0.0], [0.0, 0.0])
                } else {
                    let i = leg as usize;
                    let s = t / side_time - leg;
                    let (a, b) = (CORNERS[i], CORNERS[i + 1]);
                    let d = [b[0] - a[0], b[1] - a[1]];
                    (
                        [a[0] + s * d[0], a[1] + s * d[1]],
                        [d[0] / side_time, d[1] / side_time],
                    )
                };
                Setpoint::Position {
                    x: origin[0] + side * p[0],
                    y: origin[1] + side * p[1],
                    z,
                    yaw,
                    vx: side * v[0],
                    vy: side * v[1],
                }
            }
            Trajectory::Helix {
                radius,
                pitch,
                rev_rate,
                z0,
                yaw,
            } => {
                let w = TAU * rev_rate;
                let (s, c) = (w * t).sin_cos();
                Setpoint::Position {
                    x: radius * c,
                    y: radius * s,
                    z: z0 + pitch * rev_rate * t,
                    yaw,
                    vx: -radius * w * s,
                    vy: radius * w * c,
                }
            }
            Trajectory::Waypoints { ref points } => waypoint_setpoint(points, t),
            Trajectory::Attitude {
                roll,
                pitch,
                yaw,
                z,
            } => Setpoint::Attitude {
                roll,
                pitch,
                yaw,
                z,
            },
        }
    }

    /// At rest on the reference at `t = 0`.
    pub fn initial_state(&self) -> QuadState {
        let mut s = QuadState::default();
        match self.setpoint(0.0) {
            Setpoint::Position { x, y, z, yaw, .. } => {
                s.x = x;
                s.y = y;
                s.z = z;
                s.yaw = yaw;
            }
            Setpoint::Attitude { yaw, z, .. } => {
                s.z = z;
                s.yaw = yaw;
            }
        }
        s
    }
}

fn waypoint_setpoint(points: &[Waypoint], t: f64) -> Setpoint {
    let hold = |p: &Waypoint| Setpoint::Position {
        x: p.x,
        y: p.y,
        z: p.z,
        yaw: p.yaw,
        vx: 0.0,
        vy: 0.0,
    };
    let first = &points[0];
    if t <= first.t {
        return hold(first);
    }
    match points.windows(2).find(|w| t < w[1].t) {
        None => hold(points.last().expect("non-empty")),
        Some(w) => {
            let (a, b) = (&w[0], &w[1]);
            let span = b.t - a.t;
            let s = (t - a.t) / span;
            Setpoint::Position {
                x: a.x + s * (b.x - a.x),
                y: a.y + s * (b.y - a.y),
                z: a.z + s * (b.z - a.z),
                yaw: a.yaw + s * (b.yaw - a.yaw),
                vx: (b.x - a.x) / span,
                vy: (b.y - a.y) / span,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(sp: Setpoint) -> (f64, f64, f64) {
        match sp {
            Setpoint::Position { x, y, z, .. } => (x, y, z),
            _ => panic!("position setpoint expected"),
        }
    }

    #[test]
    fn square_visits_corners() {
        let sq = Trajectory::Square {
            side: 4.0,
            side_time: 20.0,
            z: 2.0,
            origin: [0.0, 0.0],
            yaw: 0.0,
        };
        assert_eq!(pos(sq.setpoint(0.0)), (0.0, 0.0, 2.0));
        assert_eq!(pos(sq.setpoint(20.0)), (4.0, 0.0, 2.0));
        assert_eq!(pos(sq.setpoint(40.0)), (4.0, 4.0, 2.0));
        assert_eq!(pos(sq.setpoint(60.0)), (0.0, 4.0, 2.0));
        assert_eq!(pos(sq.setpoint(90.0)), (0.0, 0.0, 2.0));
        let (x, y, _) = pos(sq.setpoint(10.0));
        assert!((x - 2.0).abs() < 1e-12 && y == 0.0);
    }

    #[test]
    fn helix_climbs_pitch_per_revolution() {
        let h = Trajectory::Helix {
            radius: 1.0,
            pitch: 0.5,
            rev_rate: 0.1,
            z0: 2.0,
            yaw: 0.0,
        };
        let (x0, y0, z0) = pos(h.setpoint(0.0));
        let (x1, y1, z1) = pos(h.setpoint(10.0));
        assert!((x0 - x1).abs() < 1e-12 && (y0 - y1).abs() < 1e-12);
        assert!((z1 - z0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn waypoints_interpolate_and_hold() {
        let w = Trajectory::Waypoints {
            points: vec![
                Waypoint {
                    t: 0.0,
                    x: 0.0,
                    y: 0.0,
                    z: 1.0,
                    yaw: 0.0,
                },
                Waypoint {
                    t: 10.0,
                    x: 1.0,
                    y: 2.0,
                    z: 1.0,
                    yaw: 0.0,
                },
            ],
        };
        w.validate().unwrap();
        let (x, y, _) = pos(w.setpoint(5.0));
        assert!((x - 0.5).abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
        assert_eq!(pos(w.setpoint(50.0)), (1.0, 2.0, 1.0));
    }

    #[test]
    fn attitude_limits_checked() {
        let a = Trajectory::Attitude {
            roll: 1.0,
            pitch: 0.0,
            yaw: 0.0,
            z: 2.0,
        };
        assert!(a.validate().is_err());
    }
}
