//! Gehan's Wilcoxon statistic written as a weighted logrank statistic, the
//! plain logrank comparator, their influence-function (co)variance
//! estimators, and estimated mean directions for targeted alternatives.
//!
//! All statistics are normalized by the configured potential sample size
//! `n`: `G_n(t) = n^{-1/2} sum over events of (W/n)(Z - Zbar)`. The choice of
//! `n` cancels from every standardized quantity.
//!
//! Mean directions drop the unknown `-tau` factor; two-sided tests are
//! invariant to the overall sign and scale of the direction.

use crate::error::{Error, Result};
use crate::indinc::DirectionVector;
use crate::matrix::SymMatrix;
use crate::survdata::{km_estimator, Group, InterimView};
use serde::{Deserialize, Serialize};

/// Event weight of a weighted logrank statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weight {
    /// `W_n(u,t)/n`, giving Gehan's Wilcoxon.
    Gehan,
    /// Unit weight, giving the logrank statistic.
    Logrank,
}

impl Weight {
    #[inline]
    fn at(self, at_risk: f64, n: f64) -> f64 {
        match self {
            Weight::Gehan => at_risk / n,
            Weight::Logrank => 1.0,
        }
    }
}

/// `n^{-1/2} sum_events K(u) {Z - Zbar(u)}` with `Zbar` on the exact risk set.
pub fn weighted_statistic(view: &InterimView, n: f64, weight: Weight) -> f64 {
    let sum: f64 = view
        .event_points()
        .iter()
        .map(|p| {
            let w = p.at_risk_in(Group::Pooled);
            let zbar = p.at_risk[1] as f64 / w;
            let d = p.events_in(Group::Pooled);
            weight.at(w, n) * (p.events[1] as f64 - d * zbar)
        })
        .sum();
    sum / n.sqrt()
}

/// Influence-function variance estimate,
/// `pi(1-pi) sum_events K(u)^2 (W/n) / W`.
pub fn weighted_variance(view: &InterimView, n: f64, weight: Weight) -> f64 {
    let pi = view.pi_hat();
    let sum: f64 = view
        .event_points()
        .iter()
        .map(|p| {
            let w = p.at_risk_in(Group::Pooled);
            let k = weight.at(w, n);
            k * k * p.events_in(Group::Pooled) / n
        })
        .sum();
    pi * (1.0 - pi) * sum
}

/// Influence-function covariance estimate between looks at `s <= t`, using
/// events observed by `t` up to `s` and risk sets from both looks.
pub fn weighted_covariance(
    view_s: &InterimView,
    view_t: &InterimView,
    n: f64,
    weight: Weight,
) -> Result<f64> {
    let (s, t) = (view_s.analysis_time(), view_t.analysis_time());
    if s > t {
        return Err(Error::LookOrder {
            earlier: s,
            later: t,
        });
    }
    let pi = view_t.pi_hat();
    let mut sum = 0.0;
    for p in view_t.event_points() {
        if p.time > s {
            break;
        }
        let w_t = p.at_risk_in(Group::Pooled);
        let w_s = view_s.at_risk_at(p.time, Group::Pooled) as f64;
        let d = p.events_in(Group::Pooled);
        sum += weight.at(w_s, n) * weight.at(w_t, n) * (w_s / w_t) * d / n;
    }
    Ok(pi * (1.0 - pi) * sum)
}

/// Gehan's Wilcoxon statistic `G_n(t)`.
pub fn gehan_statistic(view: &InterimView, n: f64) -> f64 {
    weighted_statistic(view, n, Weight::Gehan)
}

/// Logrank statistic on the same normalization.
pub fn logrank_statistic(view: &InterimView, n: f64) -> f64 {
    weighted_statistic(view, n, Weight::Logrank)
}

/// `pi(1-pi) sum_events W^2/n^3`.
pub fn if_variance(view: &InterimView, n: f64) -> f64 {
    weighted_variance(view, n, Weight::Gehan)
}

/// `pi(t)(1-pi(t)) sum_{events of view_t, u <= s} W(u,s)^2/n^3`.
pub fn if_covariance(view_s: &InterimView, view_t: &InterimView, n: f64) -> Result<f64> {
    weighted_covariance(view_s, view_t, n, Weight::Gehan)
}

/// Mean direction for log-odds alternatives,
/// `pi(1-pi) sum_events W/n^2 S(u-)`, with `S` the pooled Kaplan-Meier curve.
pub fn mean_logodds(view: &InterimView, n: f64) -> f64 {
    let pi = view.pi_hat();
    let km = km_estimator(view, Group::Pooled);
    let sum: f64 = view
        .event_points()
        .iter()
        .map(|p| {
            let w = p.at_risk_in(Group::Pooled);
            w / (n * n) * km.left_limit(p.time) * p.events_in(Group::Pooled)
        })
        .sum();
    pi * (1.0 - pi) * sum
}

/// Mean direction for hazards that become proportional after `t_delay`,
/// `pi(1-pi) sum_{events u > t_delay} W/n^2`. `t_delay = 0` targets
/// proportional hazards.
pub fn mean_delayed(view: &InterimView, n: f64, t_delay: f64) -> f64 {
    let pi = view.pi_hat();
    let sum: f64 = view
        .event_points()
        .iter()
        .filter(|p| p.time > t_delay)
        .map(|p| p.at_risk_in(Group::Pooled) / (n * n) * p.events_in(Group::Pooled))
        .sum();
    pi * (1.0 - pi) * sum
}

/// Direction proportional to the variances, as if the statistics were
/// efficient.
pub fn adhoc_direction(variances: &[f64]) -> DirectionVector {
    DirectionVector::new(variances.to_vec())
}

/// Alternative targeted by a mean direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Target {
    LogOdds,
    Delayed { t_delay: f64 },
}

/// Frozen per-look quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonLook {
    pub t: f64,
    pub g: f64,
    pub pi_hat: f64,
    pub var_hat: f64,
    pub n_ref: f64,
}

/// Sequentially accumulated weighted-logrank statistics. Entry `(l, m)` of
/// the covariance, `l <= m`, and every per-look quantity are computed when
/// look `m` is added and never revised.
#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonPath {
    weight: Weight,
    n: f64,
    capacity: usize,
    looks: Vec<WilcoxonLook>,
    cov: SymMatrix,
    targets: Vec<Target>,
    means: Vec<Vec<f64>>,
}

impl WilcoxonPath {
    pub fn new(weight: Weight, n: f64, capacity: usize, targets: Vec<Target>) -> Self {
        let means = vec![Vec::with_capacity(capacity); targets.len()];
        Self {
            weight,
            n,
            capacity,
            looks: Vec::with_capacity(capacity),
            cov: SymMatrix::zeros(capacity),
            targets,
            means,
        }
    }

    /// Adds the next look; `views` holds the snapshots for every look so far,
    /// the last one being the new look.
    pub fn add_look(&mut self, views: &[&InterimView]) -> Result<()> {
        let j = self.looks.len();
        if views.len() != j + 1 || j >= self.capacity {
            return Err(Error::LookOutOfRange {
                look: views.len(),
                max: self.capacity,
            });
        }
        let view = views[j];
        let var_hat = weighted_variance(view, self.n, self.weight);
        for (l, earlier) in views[..j].iter().enumerate() {
            let c = weighted_covariance(earlier, view, self.n, self.weight)?;
            self.cov.set(l, j, c);
        }
        self.cov.set(j, j, var_hat);
        for (target, means) in self.targets.iter().zip(self.means.iter_mut()) {
            means.push(match *target {
                Target::LogOdds => mean_logodds(view, self.n),
                Target::Delayed { t_delay } => mean_delayed(view, self.n, t_delay),
            });
        }
        self.looks.push(WilcoxonLook {
            t: view.analysis_time(),
            g: weighted_statistic(view, self.n, self.weight),
            pi_hat: view.pi_hat(),
            var_hat,
            n_ref: self.n,
        });
        Ok(())
    }

    pub fn weight(&self) -> Weight {
        self.weight
    }

    pub fn looks(&self) -> &[WilcoxonLook] {
        &self.looks
    }

    pub fn statistics(&self) -> Vec<f64> {
        self.looks.iter().map(|l| l.g).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.looks.iter().map(|l| l.var_hat).collect()
    }

    /// Full-capacity covariance; only the leading block for the looks
    /// added so far is filled.
    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    /// Estimated mean direction for `target` over the looks so far.
    pub fn direction(&self, target: Target) -> Option<DirectionVector> {
        let i = self.targets.iter().position(|t| *t == target)?;
        Some(DirectionVector::new(self.means[i].clone()))
    }

    pub fn adhoc_direction(&self) -> DirectionVector {
        adhoc_direction(&self.variances())
    }
}
