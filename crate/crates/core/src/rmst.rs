//! Differences in restricted mean survival time between arms, their
//! influence-function covariance across looks with look-specific restriction
//! times, and estimated mean directions.

use crate::error::{Error, Result};
use crate::indinc::DirectionVector;
use crate::matrix::SymMatrix;
use crate::survdata::{km_estimator, nelson_aalen, Group, InterimView};
use crate::wilcoxon::Target;
use serde::{Deserialize, Serialize};

/// Arm-specific Kaplan-Meier curve tabulated at its own event times, with the
/// running area `cum[k] = integral of S over [0, times[k]]`.
#[derive(Debug, Clone)]
struct ArmCurve {
    times: Vec<f64>,
    events: Vec<f64>,
    at_risk: Vec<f64>,
    /// Survival just after `times[k]`.
    surv: Vec<f64>,
    cum: Vec<f64>,
}

impl ArmCurve {
    fn new(view: &InterimView, arm: u8) -> Self {
        let group = Group::Arm(arm);
        let points: Vec<_> = view
            .event_points()
            .iter()
            .filter(|p| p.events[arm as usize] > 0)
            .collect();
        let mut curve = ArmCurve {
            times: Vec::with_capacity(points.len()),
            events: Vec::with_capacity(points.len()),
            at_risk: Vec::with_capacity(points.len()),
            surv: Vec::with_capacity(points.len()),
            cum: Vec::with_capacity(points.len()),
        };
        let (mut s, mut area, mut last) = (1.0, 0.0, 0.0);
        for p in points {
            area += s * (p.time - last);
            let w = p.at_risk_in(group);
            let d = p.events_in(group);
            s *= 1.0 - d / w;
            last = p.time;
            curve.times.push(p.time);
            curve.events.push(d);
            curve.at_risk.push(w);
            curve.surv.push(s);
            curve.cum.push(area);
        }
        curve
    }

    /// Exact area under the curve on `[0, l]`.
    fn area(&self, l: f64) -> f64 {
        match self.times.partition_point(|t| *t <= l) {
            0 => l,
            k => self.cum[k - 1] + self.surv[k - 1] * (l - self.times[k - 1]),
        }
    }

    /// `sum_{u <= l_short, W > 1} d A(u, l_short) A(u, l_long) / (W (W - 1))`.
    fn if_sum(&self, l_short: f64, l_long: f64) -> f64 {
        let (r_short, r_long) = (self.area(l_short), self.area(l_long));
        let mut sum = 0.0;
        for k in 0..self.times.len() {
            if self.times[k] > l_short {
                break;
            }
            let w = self.at_risk[k];
            if w <= 1.0 {
                continue;
            }
            let a_short = r_short - self.cum[k];
            let a_long = r_long - self.cum[k];
            sum += self.events[k] * a_short * a_long / (w * (w - 1.0));
        }
        sum
    }
}

fn check_restriction(view: &InterimView, l: f64) -> Result<()> {
    if l > view.analysis_time() {
        return Err(Error::RestrictionExceedsFollowup {
            restriction: l,
            analysis_time: view.analysis_time(),
        });
    }
    Ok(())
}

/// `R_z(t, L)`: area under the arm-`z` Kaplan-Meier curve on `[0, L]`.
pub fn rmst_estimate(view: &InterimView, arm: u8, l: f64) -> Result<f64> {
    check_restriction(view, l)?;
    Ok(km_estimator(view, Group::Arm(arm)).integral(0.0, l))
}

/// `R_1(t, L) - R_0(t, L)`.
pub fn theta_hat(view: &InterimView, l: f64) -> Result<f64> {
    check_restriction(view, l)?;
    let enrolled = view.enrolled();
    for arm in 0..2u8 {
        if enrolled[arm as usize] == 0 {
            return Err(Error::ArmMissing { arm });
        }
    }
    Ok(rmst_estimate(view, 1, l)? - rmst_estimate(view, 0, l)?)
}

/// `n_z sum_{arm-z events u <= L} A(u,L)^2 / (W (W - 1))`, skipping events
/// with `W <= 1`.
pub fn rmst_if_variance(view: &InterimView, arm: u8, l: f64) -> Result<f64> {
    check_restriction(view, l)?;
    let n_z = view.potential()[arm as usize] as f64;
    Ok(n_z * ArmCurve::new(view, arm).if_sum(l, l))
}

/// Covariance between restriction times `l_j <= l_k`, with every quantity
/// estimated from the later look `view_k`.
pub fn rmst_if_covariance(view_k: &InterimView, arm: u8, l_j: f64, l_k: f64) -> Result<f64> {
    if l_j > l_k {
        return Err(Error::LookOrder {
            earlier: l_j,
            later: l_k,
        });
    }
    check_restriction(view_k, l_k)?;
    let n_z = view_k.potential()[arm as usize] as f64;
    Ok(n_z * ArmCurve::new(view_k, arm).if_sum(l_j, l_k))
}

/// Covariance of `n^{1/2} theta` from arm-wise influence-function terms.
pub fn theta_cov_entry(arm0: f64, arm1: f64, pi_hat: f64) -> Result<f64> {
    if !(pi_hat > 0.0 && pi_hat < 1.0) {
        return Err(Error::DegenerateArm { pi_hat });
    }
    Ok(arm1 / pi_hat + arm0 / (1.0 - pi_hat))
}

/// `integral_0^L S(1 - S)` for the pooled Kaplan-Meier curve.
pub fn rmst_mean_logodds(view: &InterimView, l: f64) -> f64 {
    let km = km_estimator(view, Group::Pooled);
    let mut area = 0.0;
    let mut left = 0.0;
    let mut s = km.initial;
    for (t, v) in km.times.iter().zip(&km.values) {
        if *t >= l {
            break;
        }
        area += s * (1.0 - s) * (t - left);
        left = *t;
        s = *v;
    }
    area + s * (1.0 - s) * (l - left).max(0.0)
}

/// `integral_{t_delay}^L S(u) {Lambda(u) - Lambda(t_delay)} du` with pooled
/// Kaplan-Meier and Nelson-Aalen estimates.
pub fn rmst_mean_delayed(view: &InterimView, l: f64, t_delay: f64) -> f64 {
    if t_delay >= l {
        return 0.0;
    }
    let km = km_estimator(view, Group::Pooled);
    let na = nelson_aalen(view, Group::Pooled);
    let base = na.eval(t_delay);
    // KM and Nelson-Aalen jump at the same pooled event times.
    let mut area = 0.0;
    let mut left = t_delay;
    let (mut s, mut h) = (km.eval(t_delay), base);
    let start = km.times.partition_point(|t| *t <= t_delay);
    for k in start..km.times.len() {
        let t = km.times[k];
        if t >= l {
            break;
        }
        area += s * (h - base) * (t - left);
        left = t;
        s = km.values[k];
        h = na.values[k];
    }
    area + s * (h - base) * (l - left)
}

/// Frozen per-look RMST quantities; `var` holds the arm-wise variance terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmstLook {
    pub t: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub theta_hat: f64,
    pub rmst: [f64; 2],
    pub var: [f64; 2],
}

/// Sequential RMST statistics `X_j = n^{1/2} theta_j` with their combined
/// covariance, frozen look by look.
#[derive(Debug, Clone, PartialEq)]
pub struct RmstPath {
    capacity: usize,
    looks: Vec<RmstLook>,
    cov: SymMatrix,
    targets: Vec<Target>,
    means: Vec<Vec<f64>>,
}

impl RmstPath {
    pub fn new(capacity: usize, targets: Vec<Target>) -> Self {
        let means = vec![Vec::with_capacity(capacity); targets.len()];
        Self {
            capacity,
            looks: Vec::with_capacity(capacity),
            cov: SymMatrix::zeros(capacity),
            targets,
            means,
        }
    }

    /// Adds the look at `view` with restriction time `l`.
    pub fn add_look(&mut self, view: &InterimView, l: f64) -> Result<()> {
        let j = self.looks.len();
        if j >= self.capacity {
            return Err(Error::LookOutOfRange {
                look: j + 1,
                max: self.capacity,
            });
        }
        if !(l > 0.0) {
            return Err(Error::InvalidSpec(format!("restriction time must be positive, got {l}")));
        }
        check_restriction(view, l)?;
        if let Some(prev) = self.looks.last() {
            if prev.l > l {
                return Err(Error::LookOrder {
                    earlier: prev.l,
                    later: l,
                });
            }
        }
        let theta = theta_hat(view, l)?;
        let potential = view.potential();
        let n = (potential[0] + potential[1]) as f64;
        let pi = potential[1] as f64 / n;
        let curves = [ArmCurve::new(view, 0), ArmCurve::new(view, 1)];
        let arm_term = |z: usize, a: f64, b: f64| potential[z] as f64 * curves[z].if_sum(a, b);
        for (i, earlier) in self.looks.iter().enumerate() {
            let c = theta_cov_entry(arm_term(0, earlier.l, l), arm_term(1, earlier.l, l), pi)?;
            self.cov.set(i, j, c);
        }
        let var = [arm_term(0, l, l), arm_term(1, l, l)];
        self.cov.set(j, j, theta_cov_entry(var[0], var[1], pi)?);
        for (target, means) in self.targets.iter().zip(self.means.iter_mut()) {
            means.push(match *target {
                Target::LogOdds => rmst_mean_logodds(view, l),
                Target::Delayed { t_delay } => rmst_mean_delayed(view, l, t_delay),
            });
        }
        self.looks.push(RmstLook {
            t: view.analysis_time(),
            l,
            theta_hat: theta,
            rmst: [curves[0].area(l), curves[1].area(l)],
            var,
        });
        Ok(())
    }

    pub fn looks(&self) -> &[RmstLook] {
        &self.looks
    }

    /// `X_j = n^{1/2} theta_j` with `n` the potential sample size.
    pub fn statistics(&self, n: f64) -> Vec<f64> {
        self.looks.iter().map(|l| n.sqrt() * l.theta_hat).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.looks.len()).map(|j| self.cov.get(j, j)).collect()
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn direction(&self, target: Target) -> Option<DirectionVector> {
        let i = self.targets.iter().position(|t| *t == target)?;
        Some(DirectionVector::new(self.means[i].clone()))
    }
}
