//! Derivative-free steering between two states in one macro step.
//!
//! A compass-style pattern search over the control box, probing a direction
//! set made of the signed coordinate axes plus random unit vectors, with a
//! Hooke-Jeeves extrapolation after each successful move. Every iterate is
//! clamped into the control box.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_backward, step_forward, ControlVec, IntegratorConfig, SystemDef};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Find `u` with `f⁺(from, u) ≈ target`.
    Forward,
    /// Find `u` with `f⁻(from, u) ≈ target`.
    Backward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteerConfig {
    /// Initial step; `None` means a quarter of the control-box diameter.
    pub alpha0: Option<f64>,
    /// Initial step when the search starts from a caller-supplied control;
    /// `None` means 1/32 of the control-box diameter.
    pub seeded_alpha0: Option<f64>,
    pub shrink: f64,
    pub eps_alpha: f64,
    /// Size of the signed direction set; `None` means `4m`. Must be at least
    /// `2m`: the signed axes always come first, random unit vectors fill the rest.
    pub n_directions: Option<usize>,
    /// Budget of residual evaluations per call, across restarts.
    pub max_evals: usize,
    pub restarts: usize,
    /// The search stops early once the residual falls below this fraction of
    /// the connection tolerance.
    pub polish_ratio: f64,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self {
            alpha0: None,
            seeded_alpha0: None,
            shrink: 2.0,
            eps_alpha: 1e-4,
            n_directions: None,
            max_evals: 400,
            restarts: 2,
            polish_ratio: 0.1,
        }
    }
}

impl SteerConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        for a in [self.alpha0, self.seeded_alpha0].into_iter().flatten() {
            if !(a > self.eps_alpha) {
                return Err(Error::InvalidParameter("steer alpha0 must exceed eps_alpha".into()));
            }
        }
        if !(self.eps_alpha > 0.0) || !(self.shrink > 1.0) {
            return Err(Error::InvalidParameter("steer needs eps_alpha > 0 and shrink > 1".into()));
        }
        if let Some(n) = self.n_directions {
            if n < 2 * m {
                return Err(Error::InvalidParameter(format!("steer needs at least {} directions", 2 * m)));
            }
        }
        if !(self.polish_ratio > 0.0 && self.polish_ratio <= 1.0) {
            return Err(Error::InvalidParameter("steer polish_ratio must lie in (0, 1]".into()));
        }
        if self.max_evals == 0 || self.restarts == 0 {
            return Err(Error::InvalidParameter("steer needs max_evals >= 1 and restarts >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteerResult {
    pub control: ControlVec,
    pub residual: f64,
    pub evals: usize,
}

fn direction_set<R: Rng + ?Sized>(m: usize, total: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(total);
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        dirs.push(e.clone());
        e[i] = -1.0;
        dirs.push(e);
    }
    // In one dimension every unit vector is already an axis.
    if m > 1 {
        while dirs.len() + 1 < total {
            let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            let v: Vec<f64> = v.iter().map(|c| c / norm).collect();
            dirs.push(v.iter().map(|c| -c).collect());
            dirs.push(v);
        }
    }
    dirs
}

/// Pattern search from `start`, returning the best control found even if it
/// misses the tolerance.
#[allow(clippy::too_many_arguments)]
pub fn steer_search<R: Rng + ?Sized>(
    sys: &SystemDef,
    integrator: &IntegratorConfig,
    cfg: &SteerConfig,
    eps_connect: f64,
    from: &[f64],
    target: &[f64],
    direction: Direction,
    start: Option<&[f64]>,
    rng: &mut R,
) -> Result<SteerResult> {
    sys.check_state(from)?;
    sys.check_state(target)?;
    let m = sys.m;
    let ubox = &sys.control_bounds;
    let alpha0 = cfg.alpha0.unwrap_or(0.25 * ubox.diameter()).max(cfg.eps_alpha * 2.0);
    let seeded_alpha0 = cfg
        .seeded_alpha0
        .unwrap_or(ubox.diameter() / 32.0)
        .max(cfg.eps_alpha * 2.0);
    let n_dirs = cfg.n_directions.unwrap_or(4 * m).max(2 * m);
    let stop_below = eps_connect * cfg.polish_ratio;

    let mut evals = 0usize;
    let residual = |u: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let reached = match direction {
            Direction::Forward => step_forward(sys, integrator, from, u),
            Direction::Backward => step_backward(sys, integrator, from, u),
        };
        match reached {
            Ok(x) => sys.space.distance(&x, target),
            Err(_) => f64::INFINITY,
        }
    };

    let mut best_u = ControlVec::from(ubox.center());
    let mut best_r = f64::INFINITY;

    for restart in 0..cfg.restarts {
        if evals >= cfg.max_evals || best_r < eps_connect {
            break;
        }
        let mut u: Vec<f64> = match (restart, start) {
            (0, Some(s)) => s.to_vec(),
            (0, None) | (1, Some(_)) => ubox.center(),
            _ => ubox.sample(rng),
        };
        ubox.clamp(&mut u);
        let mut r = residual(&u, &mut evals);
        let dirs = direction_set(m, n_dirs, rng);
        let mut alpha = if restart == 0 && start.is_some() { seeded_alpha0 } else { alpha0 };
        let mut probe = vec![0.0; m];
        while alpha > cfg.eps_alpha && evals < cfg.max_evals && r >= stop_below {
            let mut best_probe: Option<(f64, Vec<f64>)> = None;
            for d in &dirs {
                for i in 0..m {
                    probe[i] = u[i] + alpha * d[i];
                }
                ubox.clamp(&mut probe);
                let pr = residual(&probe, &mut evals);
                if pr < r && best_probe.as_ref().map_or(true, |(b, _)| pr < *b) {
                    best_probe = Some((pr, probe.clone()));
                }
            }
            match best_probe {
                Some((pr, next)) => {
                    // Hooke-Jeeves pattern move along the accepted step.
                    let mut ext: Vec<f64> = next.iter().zip(&u).map(|(n, o)| 2.0 * n - o).collect();
                    ubox.clamp(&mut ext);
                    let er = residual(&ext, &mut evals);
                    if er < pr {
                        u = ext;
                        r = er;
                    } else {
                        u = next;
                        r = pr;
                    }
                }
                None => alpha /= cfg.shrink,
            }
        }
        if r < best_r {
            best_r = r;
            best_u = ControlVec::from(u);
        }
    }
    Ok(SteerResult {
        control: best_u,
        residual: best_r,
        evals,
    })
}

/// A control connecting `from` to `target` within `eps_connect`, if found.
#[allow(clippy::too_many_arguments)]
pub fn steer<R: Rng + ?Sized>(
    sys: &SystemDef,
    integrator: &IntegratorConfig,
    cfg: &SteerConfig,
    eps_connect: f64,
    from: &[f64],
    target: &[f64],
    direction: Direction,
    rng: &mut R,
) -> Result<Option<ControlVec>> {
    let res = steer_search(sys, integrator, cfg, eps_connect, from, target, direction, None, rng)?;
    Ok((res.residual < eps_connect).then_some(res.control))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{self, SingleIntegratorConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn si() -> SystemDef {
        systems::single_integrator(&SingleIntegratorConfig {
            step_dt: 0.1,
            ..Default::default()
        })
    }

    #[test]
    fn single_integrator_exact_target() {
        let sys = si();
        let cfg = IntegratorConfig::with_step(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = steer(&sys, &cfg, &SteerConfig::default(), 1e-3, &[0.0, 0.0], &[0.05, 0.0], Direction::Forward, &mut rng)
            .unwrap()
            .expect("reachable");
        assert!((u[0] - 0.5).abs() < 1e-2 && u[1].abs() < 1e-2, "{u:?}");
        let x = step_forward(&sys, &cfg, &[0.0, 0.0], &u).unwrap();
        assert!(sys.space.distance(&x, &[0.05, 0.0]) < 1e-3);
    }

    #[test]
    fn unreachable_target_gives_none() {
        let sys = si();
        let cfg = IntegratorConfig::with_step(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // one-step reach is at most u_max·Δt·√m ≈ 0.1414
        let r = steer(&sys, &cfg, &SteerConfig::default(), 1e-3, &[0.0, 0.0], &[0.15, 0.0], Direction::Forward, &mut rng)
            .unwrap();
        assert!(r.is_none());
        let r = steer(&sys, &cfg, &SteerConfig::default(), 1e-3, &[0.0, 0.0], &[0.11, 0.11], Direction::Backward, &mut rng)
            .unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn pendulum_recovers_known_control() {
        let sys = systems::pendulum(4.0).unwrap();
        let cfg = IntegratorConfig::with_step(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (x, u_star) in [([0.5, -1.0], 2.7), ([3.0, 2.0], -3.9), ([-1.2, 0.3], 0.0)] {
            let target = step_forward(&sys, &cfg, &x, &[u_star]).unwrap();
            let u = steer(&sys, &cfg, &SteerConfig::default(), 1e-3, &x, &target, Direction::Forward, &mut rng)
                .unwrap()
                .expect("target generated by a feasible control");
            let reached = step_forward(&sys, &cfg, &x, &u).unwrap();
            assert!(sys.space.distance(&reached, &target) < 1e-3);
            assert!((u[0] - u_star).abs() < 0.05, "{u:?} vs {u_star}");
        }
    }

    #[test]
    fn backward_direction() {
        let sys = systems::pendulum(4.0).unwrap();
        let cfg = IntegratorConfig::with_step(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = [0.8, 1.0];
        let target = step_backward(&sys, &cfg, &x, &[-1.5]).unwrap();
        let u = steer(&sys, &cfg, &SteerConfig::default(), 1e-3, &x, &target, Direction::Backward, &mut rng)
            .unwrap()
            .unwrap();
        assert!((u[0] + 1.5).abs() < 0.05);
    }

    #[test]
    fn iterates_stay_in_control_box() {
        let sys = si();
        let cfg = IntegratorConfig::with_step(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let res = steer_search(
            &sys, &cfg, &SteerConfig::default(), 1e-3, &[0.0, 0.0], &[3.0, -3.0], Direction::Forward, None, &mut rng,
        )
        .unwrap();
        assert!(sys.control_bounds.contains(&res.control));
        // best effort saturates toward the target corner
        assert!((res.control[0] - 1.0).abs() < 1e-3 && (res.control[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn config_validation() {
        assert!(SteerConfig { n_directions: Some(1), ..Default::default() }.validate(1).is_err());
        assert!(SteerConfig { shrink: 1.0, ..Default::default() }.validate(1).is_err());
        assert!(SteerConfig { alpha0: Some(1e-5), ..Default::default() }.validate(1).is_err());
        SteerConfig::default().validate(2).unwrap();
    }
}

