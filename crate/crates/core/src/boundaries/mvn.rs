use super::{solve_boundary, solve_boundary_from, BoundarySchedule, BOUNDARY_CAP, ExitProbability, LookStatus, Method, SpendingPlan};
use crate::error::{Error, Result};
use crate::matrix::{chol_decompose, SymMatrix};
use crate::normal::{cdf, pdf, quantile_fast};
use crate::stream::{stream, Purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Largest single-shift to all-shift boundary correction accepted from one
/// Newton step.
const NEWTON_TRUST: f64 = 0.05;

/// Randomized lattice rule settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MvnConfig {
    /// Number of independent random shifts.
    pub shifts: usize,
    /// Lattice points per shift.
    pub points: usize,
    pub seed: u64,
}

impl Default for MvnConfig {
    fn default() -> Self {
        Self {
            shifts: 8,
            points: 1 << 14,
            seed: 0x5EED_B0DA,
        }
    }
}

/// Integral estimate with an error bound of three standard errors across
/// shifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnEstimate {
    pub value: f64,
    pub error: f64,
}

fn primes(count: usize) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while out.len() < count {
        if out.iter().take_while(|p| *p * *p <= candidate).all(|p| candidate % p != 0) {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

/// Richtmyer lattice generators with per-dimension random shifts and the
/// tent periodization.
#[derive(Debug, Clone)]
struct Lattice {
    config: MvnConfig,
    generators: Vec<f64>,
    shifts: Vec<Vec<f64>>,
}

impl Lattice {
    fn new(config: MvnConfig) -> Self {
        Self {
            config,
            generators: Vec::new(),
            shifts: Vec::new(),
        }
    }

    fn ensure_dims(&mut self, dims: usize) {
        if self.generators.len() >= dims {
            return;
        }
        let ps = primes(dims);
        for d in self.generators.len()..dims {
            self.generators.push((ps[d] as f64).sqrt().fract());
            let mut rng = stream(self.config.seed, d as u64, Purpose::Lattice);
            self.shifts.push((0..self.config.shifts).map(|_| rng.random::<f64>()).collect());
        }
    }

    #[inline]
    fn coordinate(&self, shift: usize, k: usize, dim: usize) -> f64 {
        let x = (k as f64 * self.generators[dim] + self.shifts[dim][shift]).fract();
        1.0 - (2.0 * x - 1.0).abs()
    }

    fn total(&self) -> usize {
        self.config.shifts * self.config.points
    }
}

/// The interval `(a, b)` of a standard normal coordinate, with its
/// probability computed in whichever tail keeps it accurate.
struct Slab {
    /// Distribution function at the near end, on the reflected scale when
    /// `reflected`.
    base: f64,
    mass: f64,
    reflected: bool,
}

impl Slab {
    #[inline]
    fn new(a: f64, b: f64) -> Self {
        if a > 0.0 {
            let base = cdf(-b);
            Slab {
                base,
                mass: cdf(-a) - base,
                reflected: true,
            }
        } else {
            let base = cdf(a);
            Slab {
                base,
                mass: cdf(b) - base,
                reflected: false,
            }
        }
    }

    /// Inverse-distribution draw restricted to the interval at `u`.
    #[inline]
    fn draw(&self, u: f64) -> f64 {
        const EDGE: f64 = 1e-300;
        let p = (self.base + u * self.mass).clamp(EDGE, 1.0 - f64::EPSILON);
        let y = quantile_fast(p);
        if self.reflected {
            -y
        } else {
            y
        }
    }
}

fn check_correlation(corr: &SymMatrix) -> Result<()> {
    for (i, d) in corr.diagonal().into_iter().enumerate() {
        if (d - 1.0).abs() > 1e-8 {
            return Err(Error::NotPositiveDefinite { index: i, pivot: d });
        }
    }
    Ok(())
}

/// `P(lower < Z < upper)` for `Z ~ N(0, corr)`, by sequential conditioning
/// on the Cholesky factor with the last coordinate integrated exactly.
pub fn mvn_rectangle(
    lower: &[f64],
    upper: &[f64],
    corr: &SymMatrix,
    config: &MvnConfig,
) -> Result<MvnEstimate> {
    let d = corr.dim();
    for len in [lower.len(), upper.len()] {
        if len != d {
            return Err(Error::DimensionMismatch { expected: d, got: len });
        }
    }
    check_correlation(corr)?;
    let chol = chol_decompose(corr)?;
    if lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
        return Ok(MvnEstimate { value: 0.0, error: 0.0 });
    }
    if d == 1 {
        return Ok(MvnEstimate {
            value: Slab::new(lower[0], upper[0]).mass,
            error: 0.0,
        });
    }
    let rows = chol.lower_rows();
    let mut lattice = Lattice::new(*config);
    lattice.ensure_dims(d - 1);
    let mut y = vec![0.0; d];
    let mut per_shift = Vec::with_capacity(config.shifts);
    for s in 0..config.shifts {
        let mut sum = 0.0;
        for k in 0..config.points {
            let mut w = 1.0;
            for i in 0..d {
                let row = &rows[i];
                let m: f64 = row[..i].iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
                let slab = Slab::new((lower[i] - m) / row[i], (upper[i] - m) / row[i]);
                w *= slab.mass;
                if w == 0.0 {
                    break;
                }
                if i + 1 < d {
                    y[i] = slab.draw(lattice.coordinate(s, k, i));
                }
            }
            sum += w;
        }
        per_shift.push(sum / config.points as f64);
    }
    Ok(summarize(&per_shift))
}

fn summarize(per_shift: &[f64]) -> MvnEstimate {
    let s = per_shift.len() as f64;
    let mean = per_shift.iter().sum::<f64>() / s;
    let error = if per_shift.len() > 1 {
        let var = per_shift.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0);
        3.0 * (var / s).sqrt()
    } else {
        0.0
    };
    MvnEstimate { value: mean, error }
}

struct Exit<'a> {
    weights: &'a [f64],
    means: &'a [f64],
    sd: f64,
    scale: f64,
}

impl ExitProbability for Exit<'_> {
    fn eval(&self, c: f64) -> (f64, f64) {
        let (mut p, mut dp) = (0.0, 0.0);
        for (w, m) in self.weights.iter().zip(self.means) {
            if *w == 0.0 {
                continue;
            }
            let lo = (-c - m) / self.sd;
            let hi = (-c + m) / self.sd;
            p += w * (cdf(lo) + cdf(hi));
            dp += w * (pdf(lo) + pdf(hi));
        }
        (p * self.scale, -dp * self.scale / self.sd)
    }

    fn mass(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.scale
    }
}

/// Sequential boundary solver for an arbitrary correlation structure.
///
/// Each lattice point carries the probability of continuing through the
/// looks so far and its sampled conditioning variables. Adding a look needs
/// only the new row of correlations, because the Cholesky factor of a
/// leading block is the leading block of the factor.
#[derive(Debug, Clone)]
pub struct MvnSolver {
    plan: SpendingPlan,
    schedule: BoundarySchedule,
    lattice: Lattice,
    /// Cholesky rows of the active looks, diagonal last.
    rows: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// Sampled conditioning variable per active look, point-major within look.
    draws: Vec<Vec<f64>>,
}

impl MvnSolver {
    pub fn new(plan: SpendingPlan, config: MvnConfig) -> Result<Self> {
        plan.validate()?;
        if config.shifts == 0 || config.points == 0 {
            return Err(Error::InvalidPlan("lattice needs at least one shift and one point".into()));
        }
        let schedule = BoundarySchedule::new(Method::Mvn, &plan, Some(config.seed));
        let lattice = Lattice::new(config);
        let weights = vec![1.0; lattice.total()];
        Ok(Self {
            plan,
            schedule,
            lattice,
            rows: Vec::new(),
            weights,
            draws: Vec::new(),
        })
    }

    pub fn schedule(&self) -> &BoundarySchedule {
        &self.schedule
    }

    pub fn into_schedule(self) -> BoundarySchedule {
        self.schedule
    }

    /// Number of looks that entered the integration.
    pub fn active_looks(&self) -> usize {
        self.rows.len()
    }

    fn check_room(&self) -> Result<usize> {
        let j = self.schedule.looks();
        if j >= self.plan.looks() {
            return Err(Error::LookOutOfRange {
                look: j + 1,
                max: self.plan.looks(),
            });
        }
        Ok(j)
    }

    pub fn skip_look(&mut self) -> Result<()> {
        self.check_room()?;
        self.schedule.push(None, 0.0, LookStatus::Skipped);
        self.schedule.error.push(0.0);
        Ok(())
    }

    /// Boundary for the next look given its correlations with every earlier
    /// active (non-skipped) look, in order.
    pub fn next_look(&mut self, corr_with_active: &[f64]) -> Result<f64> {
        let j = self.check_room()?;
        let a = self.rows.len();
        if corr_with_active.len() != a {
            return Err(Error::DimensionMismatch {
                expected: a,
                got: corr_with_active.len(),
            });
        }
        let mut row = Vec::with_capacity(a + 1);
        for (i, r) in corr_with_active.iter().enumerate() {
            let prev = &self.rows[i];
            let partial: f64 = prev[..i].iter().zip(&row).map(|(l, v)| l * v).sum();
            row.push((r - partial) / prev[i]);
        }
        let pivot = 1.0 - row.iter().map(|v| v * v).sum::<f64>();
        if !(pivot > 1e-10) {
            return Err(Error::NotPositiveDefinite { index: a, pivot });
        }
        let sd = pivot.sqrt();
        row.push(sd);

        let total = self.lattice.total();
        let means: Vec<f64> = (0..total)
            .map(|p| row[..a].iter().zip(&self.draws).map(|(l, y)| l * y[p]).sum())
            .collect();
        let target = (self.plan.cumulative(j) - self.schedule.spent()).max(0.0);
        let points = self.lattice.config.points;
        // Locate the root on the first shift, then take one Newton step on
        // all points; the pass below reports what is actually spent.
        let first = Exit {
            weights: &self.weights[..points],
            means: &means[..points],
            sd,
            scale: 1.0 / points as f64,
        };
        let exit = Exit {
            weights: &self.weights,
            means: &means,
            sd,
            scale: 1.0 / total as f64,
        };
        let (c0, _, status) = solve_boundary(&first, target);
        let c = match status {
            LookStatus::Solved => {
                let (p, slope) = exit.eval(c0);
                let next = c0 - (p - target) / slope;
                if slope < 0.0 && (next - c0).abs() < NEWTON_TRUST && next > 0.0 && next < BOUNDARY_CAP {
                    next
                } else {
                    solve_boundary_from(&exit, target, Some(c0)).0
                }
            }
            _ => c0,
        };

        // One pass at the chosen boundary: spent probability per shift, and
        // the continuation weights and draws for the next look.
        let sample = j + 1 < self.plan.looks();
        if sample {
            self.lattice.ensure_dims(a + 1);
        }
        let mut draws = if sample { vec![0.0; total] } else { Vec::new() };
        let mut per_shift = vec![0.0; self.lattice.config.shifts];
        for p in 0..total {
            let w = self.weights[p];
            if w == 0.0 {
                continue;
            }
            let slab = Slab::new((-c - means[p]) / sd, (c - means[p]) / sd);
            let (shift, k) = (p / points, p % points);
            per_shift[shift] += w * (1.0 - slab.mass);
            if sample {
                self.weights[p] = w * slab.mass;
                if slab.mass > 0.0 {
                    draws[p] = slab.draw(self.lattice.coordinate(shift, k, a));
                }
            }
        }
        for v in per_shift.iter_mut() {
            *v /= points as f64;
        }
        let estimate = summarize(&per_shift);
        self.schedule.push(Some(c), estimate.value, status);
        self.schedule.error.push(estimate.error);
        if sample {
            self.draws.push(draws);
        }
        self.rows.push(row);
        Ok(c)
    }
}

/// Boundaries for every look of a full correlation matrix.
pub fn mvn_boundaries(corr: &SymMatrix, plan: &SpendingPlan, config: &MvnConfig) -> Result<BoundarySchedule> {
    if corr.dim() > plan.looks() {
        return Err(Error::DimensionMismatch {
            expected: plan.looks(),
            got: corr.dim(),
        });
    }
    check_correlation(corr)?;
    let mut solver = MvnSolver::new(plan.clone(), *config)?;
    for j in 0..corr.dim() {
        let row: Vec<f64> = (0..j).map(|i| corr.get(i, j)).collect();
        solver.next_look(&row)?;
    }
    Ok(solver.into_schedule())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundaries::indinc_boundaries;

    fn small() -> MvnConfig {
        MvnConfig {
            shifts: 8,
            points: 1 << 12,
            seed: 11,
        }
    }

    #[test]
    fn independent_box() {
        let c = 1.959_963_984_540_054;
        let est = mvn_rectangle(&[-c; 3], &[c; 3], &SymMatrix::identity(3), &MvnConfig::default()).unwrap();
        assert!((est.value - 0.857_375).abs() < 5e-5, "{est:?}");
        assert!(est.error < 5e-5);
    }

    #[test]
    fn near_perfect_correlation() {
        let rho = 1.0 - 1e-9;
        let corr = SymMatrix::from_fn(3, |i, j| if i == j { 1.0 } else { rho });
        let c = 1.5;
        let est = mvn_rectangle(&[-c; 3], &[c; 3], &corr, &MvnConfig::default()).unwrap();
        let uni = cdf(c) - cdf(-c);
        assert!((est.value - uni).abs() < 1e-3, "{est:?} vs {uni}");
    }

    #[test]
    fn infinite_bounds_and_empty_box() {
        let corr = SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 0.5 });
        let inf = f64::INFINITY;
        let est = mvn_rectangle(&[-inf, -inf], &[inf, inf], &corr, &small()).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
        // orthant probability 1/4 + asin(rho)/(2 pi)
        let est = mvn_rectangle(&[0.0, 0.0], &[inf, inf], &corr, &small()).unwrap();
        let exact = 0.25 + 0.5_f64.asin() / (2.0 * std::f64::consts::PI);
        assert!((est.value - exact).abs() < 1e-4, "{est:?}");
        let est = mvn_rectangle(&[1.0, 0.0], &[1.0, 1.0], &corr, &small()).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 1.5 });
        assert!(matches!(
            mvn_rectangle(&[-1.0; 2], &[1.0; 2], &bad, &small()),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(matches!(
            mvn_rectangle(&[-1.0; 3], &[1.0; 2], &SymMatrix::identity(2), &small()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn first_look_is_quantile() {
        let plan = SpendingPlan::new(0.05, vec![1.0]).unwrap();
        let s = mvn_boundaries(&SymMatrix::identity(1), &plan, &small()).unwrap();
        assert!((s.critical[0].unwrap() - 1.959_964).abs() < 1e-6);
        assert_eq!(s.seed, Some(11));
    }

    #[test]
    fn agrees_with_recursion_on_brownian_structure() {
        let v: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
        let corr = SymMatrix::from_fn(5, |i, j| (v[i.min(j)] / v[i.max(j)]).sqrt());
        let plan = SpendingPlan::new(0.05, vec![0.05, 0.1, 0.4, 0.7, 1.0]).unwrap();
        let a = indinc_boundaries(&v, &plan).unwrap();
        let b = mvn_boundaries(&corr, &plan, &MvnConfig::default()).unwrap();
        for j in 0..5 {
            let (x, y) = (a.critical[j].unwrap(), b.critical[j].unwrap());
            assert!((x - y).abs() < 2e-3, "look {j}: {x} vs {y}");
        }
    }

    #[test]
    fn skipped_look_is_left_out() {
        let plan = SpendingPlan::new(0.05, vec![0.2, 0.5, 1.0]).unwrap();
        let mut solver = MvnSolver::new(plan.clone(), small()).unwrap();
        solver.next_look(&[]).unwrap();
        solver.skip_look().unwrap();
        solver.next_look(&[0.6]).unwrap();
        let s = solver.schedule();
        assert_eq!(s.critical[1], None);
        assert!((s.achieved[2] - 0.05).abs() < 1e-6);
        assert_eq!(solver.active_looks(), 2);
        let mut fresh = MvnSolver::new(plan, small()).unwrap();
        assert!(matches!(fresh.next_look(&[0.3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn deterministic_given_seed() {
        let corr = SymMatrix::from_fn(4, |i, j| if i == j { 1.0 } else { 0.4 + 0.1 * (i + j) as f64 / 6.0 });
        let plan = SpendingPlan::new(0.05, vec![0.1, 0.3, 0.6, 1.0]).unwrap();
        let a = mvn_boundaries(&corr, &plan, &small()).unwrap();
        let b = mvn_boundaries(&corr, &plan, &small()).unwrap();
        assert_eq!(a, b);
    }
}
