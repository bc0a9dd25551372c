//! Affine model of the one-step reachable set, fitted to probe rollouts.
//!
//! Used to screen connection candidates before the expensive steering
//! search, and to seed that search.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{BoxBounds, ControlVec, StateSpace, StateVec};

pub(crate) struct ReachModel {
    /// `n` offsets at `u = 0`.
    a: DVector<f64>,
    /// `n × m` control sensitivity.
    b: DMatrix<f64>,
    /// Largest fit residual over the probes.
    fit_err: f64,
}

pub(crate) struct ReachEstimate {
    /// Residual of the unconstrained least-squares control under the model.
    pub residual: f64,
    /// That control, clamped into the control box.
    pub control: ControlVec,
}

impl ReachModel {
    /// Fits `endpoint − origin ≈ a + B u` over the probes. `None` when there
    /// are too few probes or the controls are degenerate.
    pub fn fit(space: &StateSpace, origin: &[f64], probes: &[(StateVec, ControlVec)]) -> Option<Self> {
        let p = probes.len();
        let n = origin.len();
        let m = probes.first()?.1.len();
        if p < m + 2 {
            return None;
        }
        let x = DMatrix::from_fn(p, m + 1, |r, c| if c == 0 { 1.0 } else { probes[r].1[c - 1] });
        let y = DMatrix::from_fn(p, n, |r, c| space.axis_diff(c, probes[r].0[c], origin[c]));
        let svd = x.clone().svd(true, true);
        if svd.rank(1e-9) < m + 1 {
            return None;
        }
        let beta = svd.solve(&y, 1e-12).ok()?;
        let fitted = &x * &beta;
        let fit_err = (0..p)
            .map(|r| (fitted.row(r) - y.row(r)).norm())
            .fold(0.0, f64::max);
        Some(Self {
            a: beta.row(0).transpose(),
            b: beta.rows(1, m).transpose(),
            fit_err,
        })
    }

    pub fn fit_err(&self) -> f64 {
        self.fit_err
    }

    /// Best control toward `target` under the model, ignoring control bounds
    /// for the residual (so the residual is optimistic).
    pub fn estimate(&self, space: &StateSpace, origin: &[f64], target: &[f64], ubox: &BoxBounds) -> ReachEstimate {
        let n = origin.len();
        let want = DVector::from_fn(n, |i, _| space.axis_diff(i, target[i], origin[i])) - &self.a;
        let svd = self.b.clone().svd(true, true);
        let u = svd
            .solve(&want, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(self.b.ncols()));
        let residual = (&self.b * &u - &want).norm();
        let mut control: Vec<f64> = u.iter().copied().collect();
        ubox.clamp(&mut control);
        ReachEstimate {
            residual,
            control: ControlVec::from(control),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane() -> StateSpace {
        StateSpace {
            bounds: BoxBounds::symmetric(2, 5.0),
            wrap: vec![false, false],
        }
    }

    #[test]
    fn exact_for_affine_maps() {
        let space = plane();
        let origin = [1.0, 2.0];
        let probes: Vec<(StateVec, ControlVec)> = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-0.5, 0.7]]
            .iter()
            .map(|u| {
                let x = StateVec::from([origin[0] + 0.3 + 0.1 * u[0], origin[1] - 0.2 + 0.1 * u[1]]);
                (x, ControlVec::from(*u))
            })
            .collect();
        let model = ReachModel::fit(&space, &origin, &probes).unwrap();
        assert!(model.fit_err() < 1e-12);
        let est = model.estimate(&space, &origin, &[1.35, 1.85], &BoxBounds::symmetric(2, 1.0));
        assert!(est.residual < 1e-12);
        assert!((est.control[0] - 0.5).abs() < 1e-9 && (est.control[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_controls_give_none() {
        let space = plane();
        let probes: Vec<(StateVec, ControlVec)> = (0..5)
            .map(|_| (StateVec::from([0.0, 0.0]), ControlVec::from([0.3, 0.3])))
            .collect();
        assert!(ReachModel::fit(&space, &[0.0, 0.0], &probes).is_none());
    }

    #[test]
    fn off_curve_target_has_residual() {
        // one control, two states: the reachable set is a line
        let space = plane();
        let probes: Vec<(StateVec, ControlVec)> = [-1.0, -0.2, 0.4, 1.0]
            .iter()
            .map(|&u| (StateVec::from([0.1, 0.1 * u]), ControlVec::from([u])))
            .collect();
        let model = ReachModel::fit(&space, &[0.0, 0.0], &probes).unwrap();
        let est = model.estimate(&space, &[0.0, 0.0], &[0.3, 0.05], &BoxBounds::symmetric(1, 1.0));
        assert!((est.residual - 0.2).abs() < 1e-9);
        assert!((est.control[0] - 0.5).abs() < 1e-9);
    }
}
