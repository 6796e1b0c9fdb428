//! Two-sided group sequential stopping boundaries from a cumulative
//! alpha-spending plan.
//!
//! Two solvers share the same sequential contract: boundaries are produced
//! one look at a time, and the boundary at look `j` depends only on looks
//! `1..=j`. [`IndincSolver`] handles statistics with independent increments
//! by propagating the sub-density of the score process on a quadrature grid.
//! [`MvnSolver`] handles an arbitrary correlation structure with randomized
//! lattice rules over a sequential conditioning of the multivariate normal.
//!
//! Each look spends the gap between the planned cumulative level and what
//! has actually been spent, so a skipped or capped look passes its unused
//! level on to the next look.

mod mvn;
mod recursion;

pub use mvn::{mvn_boundaries, mvn_rectangle, MvnConfig, MvnEstimate, MvnSolver};
pub use recursion::{indinc_boundaries, IndincSolver};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest boundary value; a boundary here means rejection is effectively
/// impossible at that look.
pub const BOUNDARY_CAP: f64 = 8.0;

/// Absolute tolerance on spent probability for the root-finders.
pub const SPEND_TOLERANCE: f64 = 1e-10;

/// Boundary step below which a Newton iterate is accepted without another
/// evaluation.
const STEP_TOLERANCE: f64 = 1e-9;

/// Cumulative spending fractions `alpha_1 <= ... <= alpha_K = 1` of a total
/// two-sided level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpendingPlan {
    pub alpha: f64,
    pub fractions: Vec<f64>,
}

impl SpendingPlan {
    pub fn new(alpha: f64, fractions: Vec<f64>) -> Result<Self> {
        let plan = Self { alpha, fractions };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidPlan(format!(
                "total alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.fractions.is_empty() {
            return Err(Error::InvalidPlan("no looks".into()));
        }
        let mut prev = 0.0;
        for (j, &f) in self.fractions.iter().enumerate() {
            if !f.is_finite() || f < prev {
                return Err(Error::InvalidPlan(format!(
                    "fraction {f} at look {} is not a nondecreasing value in [0, 1]",
                    j + 1
                )));
            }
            prev = f;
        }
        let last = *self.fractions.last().unwrap();
        if (last - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPlan(format!(
                "final cumulative fraction must be 1, got {last}"
            )));
        }
        Ok(())
    }

    pub fn looks(&self) -> usize {
        self.fractions.len()
    }

    /// Planned cumulative level through look `j` (zero-based).
    pub fn cumulative(&self, j: usize) -> f64 {
        self.alpha * self.fractions[j]
    }

    /// Planned spend at look `j` (zero-based).
    pub fn increment(&self, j: usize) -> f64 {
        let before = if j == 0 { 0.0 } else { self.cumulative(j - 1) };
        self.cumulative(j) - before
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Indinc,
    Mvn,
}

/// How a look's boundary was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LookStatus {
    /// Root found within tolerance.
    Solved,
    /// Remaining spend too small to resolve; boundary set to the cap.
    Capped,
    /// Even a zero boundary spends less than planned.
    Floored,
    /// No usable statistic at this look; nothing spent.
    Skipped,
}

/// Boundaries produced so far together with what they actually spend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySchedule {
    pub method: Method,
    pub alpha: f64,
    pub plan: Vec<f64>,
    /// Critical values for `|Z_j|`; `None` for skipped looks.
    pub critical: Vec<Option<f64>>,
    /// Achieved cumulative rejection probability after each look.
    pub achieved: Vec<f64>,
    pub status: Vec<LookStatus>,
    /// Solver seed for the randomized lattice, when one is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Reported integration error of the achieved probabilities.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub error: Vec<f64>,
}

impl BoundarySchedule {
    fn new(method: Method, plan: &SpendingPlan, seed: Option<u64>) -> Self {
        Self {
            method,
            alpha: plan.alpha,
            plan: plan.fractions.clone(),
            critical: Vec::with_capacity(plan.looks()),
            achieved: Vec::with_capacity(plan.looks()),
            status: Vec::with_capacity(plan.looks()),
            seed,
            error: Vec::new(),
        }
    }

    pub fn looks(&self) -> usize {
        self.critical.len()
    }

    /// Whether `z` at look `j` (zero-based) crosses the boundary.
    pub fn rejects(&self, j: usize, z: f64) -> bool {
        matches!(self.critical.get(j), Some(Some(c)) if z.abs() >= *c)
    }

    fn spent(&self) -> f64 {
        self.achieved.last().copied().unwrap_or(0.0)
    }

    fn push(&mut self, c: Option<f64>, crossing: f64, status: LookStatus) {
        let total = self.spent() + crossing;
        self.critical.push(c);
        self.achieved.push(total);
        self.status.push(status);
    }
}

/// Exit probability as a function of the boundary, with its derivative.
pub(crate) trait ExitProbability {
    fn eval(&self, c: f64) -> (f64, f64);

    /// Probability of reaching this look, which is the exit probability
    /// at `c = 0`.
    fn mass(&self) -> f64 {
        self.eval(0.0).0
    }
}

/// Solves `p(c) = target` for a decreasing exit probability on
/// `[0, BOUNDARY_CAP]` with Newton steps on `ln p` kept inside a bisection
/// bracket. Returns the boundary, the probability it spends and a status.
pub(crate) fn solve_boundary<F: ExitProbability>(f: &F, target: f64) -> (f64, f64, LookStatus) {
    solve_boundary_from(f, target, None)
}

/// As [`solve_boundary`], starting the iteration at `start` when given.
pub(crate) fn solve_boundary_from<F: ExitProbability>(
    f: &F,
    target: f64,
    start: Option<f64>,
) -> (f64, f64, LookStatus) {
    // The marginal tail beyond the cap is about 1.2e-15, so only a target at
    // the tolerance level can put the root there.
    if target <= SPEND_TOLERANCE {
        return (BOUNDARY_CAP, f.eval(BOUNDARY_CAP).0, LookStatus::Capped);
    }
    let p_zero = f.mass();
    if target >= p_zero {
        return (0.0, p_zero, LookStatus::Floored);
    }
    let log_target = target.ln();
    let (mut lo, mut hi) = (0.0, BOUNDARY_CAP);
    let guess = || crate::normal::quantile(1.0 - 0.5 * (target / p_zero).min(1.0));
    let mut c = start.unwrap_or_else(guess).clamp(lo, hi);
    let mut p = p_zero;
    for _ in 0..200 {
        let (value, slope) = f.eval(c);
        p = value;
        if (p - target).abs() <= SPEND_TOLERANCE * target || hi - lo < 1e-13 {
            return (c, p, LookStatus::Solved);
        }
        if p > target {
            lo = c;
        } else {
            hi = c;
        }
        let mut next = f64::NAN;
        if p > 0.0 && slope < 0.0 {
            next = c - (p.ln() - log_target) * p / slope;
        }
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        } else if (next - c).abs() < STEP_TOLERANCE {
            // Newton is converging quadratically; the linear prediction is
            // already far inside the tolerance.
            return (next, p + slope * (next - c), LookStatus::Solved);
        }
        c = next;
    }
    (c, p, LookStatus::Solved)
}
