//! Human-driving kinematic prior and 1-D Wasserstein distance.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::kinematics::ControlProfile;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Axis-independent Gaussians over acceleration and jerk, plus the jerk
/// weight of the realism objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicPrior {
    pub accel_mean: [f64; 2],
    pub accel_var: [f64; 2],
    pub jerk_mean: [f64; 2],
    pub jerk_var: [f64; 2],
    pub lambda: f64,
}

impl Default for KinematicPrior {
    fn default() -> Self {
        Self {
            accel_mean: [0.0; 2],
            accel_var: [1.0; 2],
            jerk_mean: [0.0; 2],
            jerk_var: [1.0; 2],
            lambda: 1.0,
        }
    }
}

fn gaussian_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (TAU * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

impl KinematicPrior {
    pub fn validate(&self) -> Result<()> {
        let vars = self.accel_var.iter().chain(self.jerk_var.iter());
        if vars
            .clone()
            .any(|v| !(v.is_finite() && *v >= VARIANCE_FLOOR))
        {
            return Err(Error::InvalidInput(format!(
                "prior variances must be >= {VARIANCE_FLOOR}"
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidInput("prior lambda must be >= 0".into()));
        }
        Ok(())
    }

    pub fn log_density(&self, a: Vec2, j: Vec2) -> f64 {
        let la = gaussian_log_pdf(a.x, self.accel_mean[0], self.accel_var[0])
            + gaussian_log_pdf(a.y, self.accel_mean[1], self.accel_var[1]);
        let lj = gaussian_log_pdf(j.x, self.jerk_mean[0], self.jerk_var[0])
            + gaussian_log_pdf(j.y, self.jerk_mean[1], self.jerk_var[1]);
        la + self.lambda * lj
    }

    /// Mean log-density of a profile: acceleration of each state after the
    /// first paired with the jerk that produced it.
    pub fn profile_objective(&self, profile: &ControlProfile) -> f64 {
        let n = profile.steps();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = (1..=n)
            .map(|t| self.log_density(profile.a[t], profile.j[t - 1]))
            .sum();
        total / n as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prior serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(VARIANCE_FLOOR))
}

/// Per-axis sample mean and variance of every acceleration and jerk entry.
pub fn fit_prior(profiles: &[ControlProfile], lambda: f64) -> Result<KinematicPrior> {
    let usable: Vec<&ControlProfile> = profiles.iter().filter(|p| p.steps() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::Empty(
            "fit_prior needs at least one profile with two or more steps",
        ));
    }
    // Sorting makes the floating-point sums independent of profile order.
    let mut acc: Vec<Vec2> = usable.iter().flat_map(|p| p.a.iter().copied()).collect();
    let mut jerk: Vec<Vec2> = usable.iter().flat_map(|p| p.j.iter().copied()).collect();
    let key = |a: &Vec2, b: &Vec2| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y));
    acc.sort_by(key);
    jerk.sort_by(key);
    let (ax, vax) = mean_var(acc.iter().map(|a| a.x));
    let (ay, vay) = mean_var(acc.iter().map(|a| a.y));
    let (jx, vjx) = mean_var(jerk.iter().map(|j| j.x));
    let (jy, vjy) = mean_var(jerk.iter().map(|j| j.y));
    let prior = KinematicPrior {
        accel_mean: [ax, ay],
        accel_var: [vax, vay],
        jerk_mean: [jx, jy],
        jerk_var: [vjx, vjy],
        lambda,
    };
    prior.validate()?;
    Ok(prior)
}

/// Scalar kinematic samples (acceleration or jerk magnitudes).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmpiricalSamples(pub Vec<f64>);

impl EmpiricalSamples {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn extend(&mut self, other: &EmpiricalSamples) {
        self.0.extend_from_slice(&other.0);
    }
}

/// Exact W1 between two empirical distributions by integrating the absolute
/// difference of their quantile functions.
pub fn wasserstein1(a: &EmpiricalSamples, b: &EmpiricalSamples) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein1 needs two non-empty sample sets"));
    }
    let mut xs = a.0.clone();
    let mut ys = b.0.clone();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    // Walk the merged quantile breakpoints i/n and k/m with integer
    // arithmetic over the common denominator n*m.
    let (mut i, mut k) = (0usize, 0usize);
    let (mut ui, mut uk) = (0usize, 0usize); // cumulative mass * n * m
    let mut total = 0.0;
    let mut cursor = 0usize;
    while i < n && k < m {
        let next_i = ui + m;
        let next_k = uk + n;
        let next = next_i.min(next_k);
        total += (next - cursor) as f64 * (xs[i] - ys[k]).abs();
        cursor = next;
        if next_i == next {
            ui = next_i;
            i += 1;
        }
        if next_k == next {
            uk = next_k;
            k += 1;
        }
    }
    Ok(total / (n * m) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{propagate, InitialState};
    use proptest::prelude::*;

    fn samples(v: &[f64]) -> EmpiricalSamples {
        EmpiricalSamples::new(v.to_vec())
    }

    #[test]
    fn w1_point_masses() {
        assert_eq!(
            wasserstein1(&samples(&[0.0]), &samples(&[1.0])).unwrap(),
            1.0
        );
    }

    #[test]
    fn w1_identical_is_zero() {
        let s = samples(&[0.3, 1.7, -2.0, 0.3]);
        assert_eq!(wasserstein1(&s, &s.clone()).unwrap(), 0.0);
    }

    #[test]
    fn w1_four_atoms() {
        // Optimal transport moves a single quarter of mass from 0 to 1.
        let d = wasserstein1(
            &samples(&[0.0, 0.0, 1.0, 1.0]),
            &samples(&[0.0, 1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn w1_unequal_sizes() {
        // CDF difference integral: F_a jumps to 1 at 0, F_b is 1/2 on [0, 2).
        let d = wasserstein1(&samples(&[0.0]), &samples(&[0.0, 2.0])).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w1_empty_is_error() {
        assert!(wasserstein1(&samples(&[]), &samples(&[1.0])).is_err());
    }

    #[test]
    fn standard_normal_at_mode() {
        let prior = KinematicPrior {
            lambda: 0.0,
            ..Default::default()
        };
        let v = prior.log_density(Vec2::zeros(), Vec2::new(3.0, -1.0));
        assert!((v + (TAU).ln()).abs() < 1e-14);
    }

    #[test]
    fn closed_form_at_means() {
        let prior = KinematicPrior {
            accel_mean: [0.5, -0.2],
            accel_var: [0.25, 0.36],
            jerk_mean: [0.1, 0.0],
            jerk_var: [4.0, 1.0],
            lambda: 1.0,
        };
        let v = prior.log_density(Vec2::new(0.5, -0.2), Vec2::new(0.1, 0.0));
        let expected = -(TAU * 0.5 * 0.6f64).ln() - (TAU * 2.0 * 1.0f64).ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn fit_zero_profiles() {
        let prof = propagate(
            &InitialState::at_rest(Vec2::zeros(), 0.0),
            &[Vec2::zeros(); 5],
            0.1,
        );
        let prior = fit_prior(&[prof], 1.0).unwrap();
        assert_eq!(prior.accel_mean, [0.0, 0.0]);
        assert_eq!(prior.accel_var, [VARIANCE_FLOOR; 2]);
        assert_eq!(prior.jerk_var, [VARIANCE_FLOOR; 2]);
    }

    #[test]
    fn fit_constant_acceleration() {
        let init = InitialState {
            a: Vec2::new(1.0, 0.0),
            ..InitialState::at_rest(Vec2::zeros(), 0.0)
        };
        let prof = propagate(&init, &[Vec2::zeros(); 4], 0.1);
        let prior = fit_prior(&[prof], 1.0).unwrap();
        assert!((prior.accel_mean[0] - 1.0).abs() < 1e-15);
        assert_eq!(prior.accel_mean[1], 0.0);
        assert_eq!(prior.accel_var, [VARIANCE_FLOOR; 2]);
    }

    #[test]
    fn fit_empty_is_error() {
        assert!(fit_prior(&[], 1.0).is_err());
    }

    fn vec2() -> impl Strategy<Value = Vec2> {
        (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y)| Vec2::new(x, y))
    }

    fn profile() -> impl Strategy<Value = ControlProfile> {
        (vec2(), vec2(), proptest::collection::vec(vec2(), 2..12)).prop_map(|(v, a, j)| {
            propagate(
                &InitialState {
                    p: Vec2::zeros(),
                    v,
                    a,
                    heading: 0.0,
                },
                &j,
                0.1,
            )
        })
    }

    proptest! {
        #[test]
        fn fit_matches_two_pass(profiles in proptest::collection::vec(profile(), 1..5)) {
            let prior = fit_prior(&profiles, 0.7).unwrap();
            let accs: Vec<Vec2> = profiles.iter().flat_map(|p| p.a.clone()).collect();
            let jerks: Vec<Vec2> = profiles.iter().flat_map(|p| p.j.clone()).collect();
            for axis in 0..2 {
                let xs: Vec<f64> = accs.iter().map(|v| v[axis]).collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).max(VARIANCE_FLOOR);
                prop_assert!((prior.accel_mean[axis] - m).abs() < 1e-10);
                prop_assert!((prior.accel_var[axis] - var).abs() < 1e-10);
                let xs: Vec<f64> = jerks.iter().map(|v| v[axis]).collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).max(VARIANCE_FLOOR);
                prop_assert!((prior.jerk_mean[axis] - m).abs() < 1e-10);
                prop_assert!((prior.jerk_var[axis] - var).abs() < 1e-10);
            }
        }

        #[test]
        fn fit_order_invariant(mut profiles in proptest::collection::vec(profile(), 2..5)) {
            let a = fit_prior(&profiles, 1.0).unwrap();
            profiles.reverse();
            let b = fit_prior(&profiles, 1.0).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn log_density_matches_direct(a in vec2(), j in vec2(), lambda in 0.0..3.0f64) {
            let prior = KinematicPrior { accel_mean: [0.2, -0.1], accel_var: [0.5, 2.0],
                                         jerk_mean: [0.0, 0.3], jerk_var: [1.5, 0.8], lambda };
            let pdf = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (TAU * v).sqrt();
            let direct = (pdf(a.x, 0.2, 0.5) * pdf(a.y, -0.1, 2.0)).ln()
                + lambda * (pdf(j.x, 0.0, 1.5) * pdf(j.y, 0.3, 0.8)).ln();
            prop_assert!((prior.log_density(a, j) - direct).abs() < 1e-12);
        }

        #[test]
        fn log_density_peaks_at_means(a in vec2(), j in vec2()) {
            let prior = KinematicPrior { accel_mean: [0.2, -0.1], accel_var: [0.5, 2.0],
                                         jerk_mean: [0.0, 0.3], jerk_var: [1.5, 0.8], lambda: 0.9 };
            let peak = prior.log_density(Vec2::new(0.2, -0.1), Vec2::new(0.0, 0.3));
            prop_assert!(prior.log_density(a, j) <= peak);
        }

        #[test]
        fn w1_metric_axioms(x in proptest::collection::vec(-10.0..10.0f64, 1..20),
                            y in proptest::collection::vec(-10.0..10.0f64, 1..20),
                            z in proptest::collection::vec(-10.0..10.0f64, 1..20)) {
            let (x, y, z) = (samples(&x), samples(&y), samples(&z));
            let xy = wasserstein1(&x, &y).unwrap();
            let yx = wasserstein1(&y, &x).unwrap();
            let xz = wasserstein1(&x, &z).unwrap();
            let zy = wasserstein1(&z, &y).unwrap();
            prop_assert!(xy >= 0.0);
            prop_assert!((xy - yx).abs() < 1e-9);
            prop_assert!(xy <= xz + zy + 1e-9);
        }
    }
}
