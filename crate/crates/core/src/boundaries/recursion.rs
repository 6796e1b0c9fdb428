use super::{solve_boundary, BoundarySchedule, ExitProbability, LookStatus, Method, SpendingPlan};
use crate::error::{Error, Result};
use crate::normal::{cdf, pdf};

/// Minimum number of quadrature points across a continuation region.
const BASE_POINTS: usize = 601;
/// Upper bound on grid size when increments are tiny relative to the region.
const MAX_POINTS: usize = 100_001;
/// Grid spacing is kept at or below this fraction of the conditional
/// standard deviation of the next increment.
const KERNEL_RESOLUTION: f64 = 1.0 / 3.0;
/// Relative information increment treated as zero.
const MIN_RELATIVE_INCREMENT: f64 = 1e-12;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Sub-density of `S_j = Z_j sqrt(v_j)` restricted to continuation, on a
/// uniform grid with an odd number of points, stored premultiplied by the
/// Simpson weights.
#[derive(Debug, Clone)]
struct Grid {
    lo: f64,
    h: f64,
    density: Vec<f64>,
    weighted: Vec<f64>,
}

impl Grid {
    fn new(lo: f64, h: f64, density: Vec<f64>) -> Self {
        let n = density.len();
        let weighted = density
            .iter()
            .enumerate()
            .map(|(k, d)| d * simpson_weight(k, n) * h / 3.0)
            .collect();
        Self {
            lo,
            h,
            density,
            weighted,
        }
    }

    fn x(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.h
    }

    fn len(&self) -> usize {
        self.density.len()
    }

    /// Resamples onto a finer grid over the same interval with four-point
    /// Lagrange interpolation.
    fn refined(&self, spacing: f64) -> Grid {
        let width = self.h * (self.len() - 1) as f64;
        let n = odd_points(width, spacing);
        if n <= self.len() {
            return self.clone();
        }
        let h = width / (n - 1) as f64;
        let last = self.len() - 1;
        let density = symmetric(n, |i| {
                let s = i as f64 * h / self.h;
                let base = (s.floor() as usize).saturating_sub(1).min(last.saturating_sub(3));
                let mut value = 0.0;
                for a in 0..4.min(self.len()) {
                    let mut w = 1.0;
                    for b in 0..4.min(self.len()) {
                        if a != b {
                            w *= (s - (base + b) as f64) / (a as f64 - b as f64);
                        }
                    }
                    value += w * self.density[base + a];
                }
                value.max(0.0)
            });
        Grid::new(self.lo, h, density)
    }
}

/// Values on a grid symmetric about zero, computing the lower half only.
fn symmetric(n: usize, mut f: impl FnMut(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..=n / 2 {
        let v = f(i);
        out[i] = v;
        out[n - 1 - i] = v;
    }
    out
}

fn simpson_weight(k: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else if k == 0 || k == n - 1 {
        1.0
    } else if k % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Odd point count giving spacing at most `spacing` over `width`, and at
/// least [`BASE_POINTS`].
fn odd_points(width: f64, spacing: f64) -> usize {
    let needed = if spacing > 0.0 {
        (width / spacing).ceil() as usize + 1
    } else {
        MAX_POINTS
    };
    let n = needed.clamp(BASE_POINTS, MAX_POINTS);
    n | 1
}

#[derive(Debug, Clone)]
enum State {
    /// No look yet: the score process starts at zero.
    Origin,
    Grid(Grid),
    /// Continuation region is empty; nothing is left to spend.
    Exhausted,
}

struct Exit<'a> {
    state: &'a State,
    /// `sqrt(v_j)`
    scale: f64,
    /// Conditional standard deviation of the increment.
    sigma: f64,
}

impl ExitProbability for Exit<'_> {
    fn eval(&self, c: f64) -> (f64, f64) {
        let b = c * self.scale;
        match self.state {
            State::Origin => {
                let u = b / self.sigma;
                (2.0 * cdf(-u), -2.0 * pdf(u) * self.scale / self.sigma)
            }
            State::Exhausted => (0.0, 0.0),
            State::Grid(g) => {
                // The density is even, so the lower exit mirrors the upper.
                let (mut p, mut dp) = (0.0, 0.0);
                for (k, w) in g.weighted.iter().enumerate() {
                    let up = (g.x(k) - b) / self.sigma;
                    if *w == 0.0 || up < -KERNEL_REACH {
                        continue;
                    }
                    p += w * cdf(up);
                    dp += w * pdf(up);
                }
                (2.0 * p, -2.0 * dp * self.scale / self.sigma)
            }
        }
    }

    fn mass(&self) -> f64 {
        match self.state {
            State::Origin => 1.0,
            State::Exhausted => 0.0,
            State::Grid(g) => g.weighted.iter().sum(),
        }
    }
}

/// Sequential boundary solver for statistics with independent increments,
/// `corr(Z_l, Z_m) = sqrt(v_l / v_m)` for `l <= m`.
#[derive(Debug, Clone)]
pub struct IndincSolver {
    plan: SpendingPlan,
    schedule: BoundarySchedule,
    v_last: f64,
    state: State,
}

impl IndincSolver {
    pub fn new(plan: SpendingPlan) -> Result<Self> {
        plan.validate()?;
        let schedule = BoundarySchedule::new(Method::Indinc, &plan, None);
        Ok(Self {
            plan,
            schedule,
            v_last: 0.0,
            state: State::Origin,
        })
    }

    pub fn schedule(&self) -> &BoundarySchedule {
        &self.schedule
    }

    pub fn into_schedule(self) -> BoundarySchedule {
        self.schedule
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

    /// Records a look at which no statistic is available.
    pub fn skip_look(&mut self) -> Result<()> {
        self.check_room()?;
        self.schedule.push(None, 0.0, LookStatus::Skipped);
        Ok(())
    }

    /// Boundary for the next look given its statistic-scale variance `v`.
    pub fn next_look(&mut self, v: f64) -> Result<f64> {
        let j = self.check_room()?;
        if !(v.is_finite() && v > self.v_last * (1.0 + MIN_RELATIVE_INCREMENT) && v > 0.0) {
            return Err(Error::NonMonotoneInformation { look: j + 1 });
        }
        let sigma = (v - self.v_last).sqrt();
        if let State::Grid(g) = &self.state {
            if g.h > KERNEL_RESOLUTION * sigma {
                self.state = State::Grid(g.refined(KERNEL_RESOLUTION * sigma));
            }
        }
        let target = self.plan.cumulative(j) - self.schedule.spent();
        let exit = Exit {
            state: &self.state,
            scale: v.sqrt(),
            sigma,
        };
        let (c, crossing, status) = solve_boundary(&exit, target.max(0.0));
        self.schedule.push(Some(c), crossing, status);
        if j + 1 < self.plan.looks() {
            self.state = self.propagate(c * v.sqrt(), sigma);
        }
        self.v_last = v;
        Ok(c)
    }

    fn propagate(&self, bound: f64, sigma: f64) -> State {
        if bound <= 0.0 {
            return State::Exhausted;
        }
        let width = 2.0 * bound;
        let n = odd_points(width, (width / (BASE_POINTS - 1) as f64).min(KERNEL_RESOLUTION * sigma));
        let h = width / (n - 1) as f64;
        let lo = -bound;
        let density: Vec<f64> = match &self.state {
            State::Exhausted => return State::Exhausted,
            State::Origin => symmetric(n, |i| pdf((lo + i as f64 * h) / sigma) / sigma),
            State::Grid(g) => {
                let half = n / 2 + 1;
                let mut values = Vec::with_capacity(half + 3);
                for block in (0..half).step_by(4) {
                    let ys: Vec<f64> = (block..(block + 4).min(half)).map(|i| lo + i as f64 * h).collect();
                    values.extend_from_slice(&convolve4(g, &ys, sigma)[..ys.len()]);
                }
                symmetric(n, |i| values[i])
            }
        };
        State::Grid(Grid::new(lo, h, density))
    }
}

/// Half-width of the kernel window in conditional standard deviations.
const KERNEL_REACH: f64 = 9.5;

/// `sum_k weighted_k phi((y - x_k)/sigma) / sigma` for up to four `y` values
/// at once. The Gaussian kernel is advanced along the grid by a
/// multiplicative recurrence, starting where it is about `1e-20` of its
/// peak; the four independent recurrences share one pass.
fn convolve4(g: &Grid, ys: &[f64], sigma: f64) -> [f64; 4] {
    const LANES: usize = 4;
    let n = g.len();
    let delta = g.h / sigma;
    let q = (-delta * delta).exp();
    let reach = KERNEL_REACH * sigma;
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = ((y_min - reach - g.lo) / g.h).ceil().max(0.0);
    let end = ((y_max + reach - g.lo) / g.h).floor().min((n - 1) as f64);
    let mut out = [0.0; LANES];
    if start > end {
        return out;
    }
    let (start, end) = (start as usize, end as usize);
    let x0 = g.x(start);
    let mut e = [0.0; LANES];
    let mut r = [1.0; LANES];
    for l in 0..ys.len() {
        let d = (x0 - ys[l]) / sigma;
        e[l] = (-0.5 * d * d).exp();
        r[l] = (-d * delta - 0.5 * delta * delta).exp();
    }
    let mut sum = [0.0; LANES];
    for w in &g.weighted[start..=end] {
        for l in 0..LANES {
            sum[l] += w * e[l];
            e[l] *= r[l];
            r[l] *= q;
        }
    }
    for l in 0..ys.len() {
        out[l] = sum[l] * INV_SQRT_2PI / sigma;
    }
    out
}

/// Boundaries for a full sequence of statistic-scale variances.
pub fn indinc_boundaries(variances: &[f64], plan: &SpendingPlan) -> Result<BoundarySchedule> {
    if variances.len() > plan.looks() {
        return Err(Error::DimensionMismatch {
            expected: plan.looks(),
            got: variances.len(),
        });
    }
    let mut solver = IndincSolver::new(plan.clone())?;
    for v in variances {
        solver.next_look(*v)?;
    }
    Ok(solver.into_schedule())
}
