use super::{Design, TestFamily, TestSpec, TrialOutcome};
use crate::boundaries::{IndincSolver, MvnConfig, MvnSolver};
use crate::error::{Error, Result};
use crate::indinc::{combine, DirectionVector, StatPath};
use crate::matrix::SymMatrix;
use crate::rmst::RmstPath;
use crate::stream::{stream, Purpose};
use crate::survdata::{interim_view, sample_scenario, Family, InterimView, ScenarioSpec, Subject};
use crate::wilcoxon::{Target, Weight, WilcoxonPath};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Per-trial settings shared by every trial of a study.
#[derive(Debug, Clone, Default)]
pub struct TrialSettings {
    pub complete_paths: bool,
    pub mvn: MvnConfig,
    /// Covariances and directions to use in place of per-trial estimates.
    pub fixed: Option<Arc<FixedModel>>,
}

/// Covariance over all looks plus mean directions for one statistic family.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackModel {
    pub cov: SymMatrix,
    pub means: Vec<(Target, Vec<f64>)>,
}

/// Pilot-averaged models for the three statistic families.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FixedModel {
    pub gehan: Option<TrackModel>,
    pub logrank: Option<TrackModel>,
    pub rmst: Option<TrackModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Gehan,
    Logrank,
    Rmst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rule {
    /// `X_j / sqrt(V_jj)` against independent-increments boundaries.
    Plain,
    /// `X_j / sqrt(V_jj)` against boundaries from the estimated correlation.
    Correlated,
    /// Combination along the estimated variances.
    AdHoc,
    /// Combination along an estimated mean direction.
    Targeted(Target),
}

fn source_of(family: TestFamily) -> Source {
    use TestFamily::*;
    match family {
        WilcoxonUnadjusted | WilcoxonAdjusted | WilcoxonI | WilcoxonII | WilcoxonIII | WilcoxonIV => Source::Gehan,
        Logrank => Source::Logrank,
        Rmst | RmstI | RmstII | RmstIII => Source::Rmst,
    }
}

fn rule_of(test: &TestSpec) -> Rule {
    use TestFamily::*;
    match test.family {
        WilcoxonUnadjusted | Logrank => Rule::Plain,
        WilcoxonAdjusted | Rmst => Rule::Correlated,
        WilcoxonI => Rule::AdHoc,
        _ => Rule::Targeted(test.target().expect("modified tests have a target")),
    }
}

/// Look-indexed statistics of one family. Looks without a usable statistic
/// hold `NaN` and are left out of `active`.
#[derive(Debug, Clone)]
struct Track {
    values: Vec<f64>,
    cov: SymMatrix,
    means: Vec<(Target, Vec<f64>)>,
    active: Vec<usize>,
}

impl Track {
    fn new(looks: usize, targets: &[Target]) -> Self {
        Self {
            values: Vec::with_capacity(looks),
            cov: SymMatrix::zeros(looks),
            means: targets.iter().map(|t| (*t, Vec::with_capacity(looks))).collect(),
            active: Vec::with_capacity(looks),
        }
    }

    fn push_inactive(&mut self) {
        self.values.push(f64::NAN);
        for (_, m) in &mut self.means {
            m.push(f64::NAN);
        }
    }

    /// Adds look `j = values.len()` given covariances with the active looks
    /// `cov(l)` and the means by target.
    fn push_active(&mut self, value: f64, cov: impl Fn(usize) -> f64, var: f64, mean: impl Fn(Target) -> f64) {
        let j = self.values.len();
        for &l in &self.active {
            self.cov.set(l, j, cov(l));
        }
        self.cov.set(j, j, var);
        for (t, m) in &mut self.means {
            m.push(mean(*t));
        }
        self.values.push(value);
        self.active.push(j);
    }

    fn is_active(&self, j: usize) -> bool {
        self.active.last() == Some(&j)
    }

    fn mean(&self, target: Target) -> Option<&[f64]> {
        self.means.iter().find(|(t, _)| *t == target).map(|(_, m)| m.as_slice())
    }

    fn model(&self) -> TrackModel {
        TrackModel {
            cov: self.cov.clone(),
            means: self.means.clone(),
        }
    }
}

fn usable(var: f64) -> bool {
    var.is_finite() && var > 0.0
}

struct WilcoxonSource {
    path: WilcoxonPath,
    track: Track,
}

struct RmstSource {
    path: RmstPath,
    /// Path index of each look's entry, if it was added.
    index: Vec<Option<usize>>,
    track: Track,
}

/// Statistic families kept up to date look by look for one dataset.
struct Sources<'a> {
    subjects: Vec<Subject>,
    n: f64,
    views: Vec<InterimView>,
    gehan: Option<WilcoxonSource>,
    logrank: Option<WilcoxonSource>,
    rmst: Option<RmstSource>,
    fixed: Option<&'a FixedModel>,
}

fn targets_for(tests: &[TestSpec], source: Source) -> Vec<Target> {
    let mut out: Vec<Target> = Vec::new();
    for t in tests.iter().filter(|t| source_of(t.family) == source) {
        if let Some(target) = t.target() {
            if !out.contains(&target) {
                out.push(target);
            }
        }
    }
    out
}

impl<'a> Sources<'a> {
    fn new(subjects: Vec<Subject>, looks: usize, tests: &[TestSpec], fixed: Option<&'a FixedModel>) -> Self {
        let n = subjects.len() as f64;
        let uses = |s: Source| tests.iter().any(|t| source_of(t.family) == s);
        let wilcoxon = |weight: Weight, source: Source| {
            uses(source).then(|| {
                let targets = targets_for(tests, source);
                WilcoxonSource {
                    path: WilcoxonPath::new(weight, n, looks, targets.clone()),
                    track: Track::new(looks, &targets),
                }
            })
        };
        let rmst = uses(Source::Rmst).then(|| {
            let targets = targets_for(tests, Source::Rmst);
            RmstSource {
                path: RmstPath::new(looks, targets.clone()),
                index: Vec::with_capacity(looks),
                track: Track::new(looks, &targets),
            }
        });
        Self {
            gehan: wilcoxon(Weight::Gehan, Source::Gehan),
            logrank: wilcoxon(Weight::Logrank, Source::Logrank),
            rmst,
            subjects,
            n,
            views: Vec::with_capacity(looks),
            fixed,
        }
    }

    fn track(&self, source: Source) -> Option<&Track> {
        match source {
            Source::Gehan => self.gehan.as_ref().map(|s| &s.track),
            Source::Logrank => self.logrank.as_ref().map(|s| &s.track),
            Source::Rmst => self.rmst.as_ref().map(|s| &s.track),
        }
    }

    /// Drops families no longer needed so later looks skip their work.
    fn retain(&mut self, needed: impl Fn(Source) -> bool) {
        if !needed(Source::Gehan) {
            self.gehan = None;
        }
        if !needed(Source::Logrank) {
            self.logrank = None;
        }
        if !needed(Source::Rmst) {
            self.rmst = None;
        }
    }

    fn advance(&mut self, design: &Design) {
        let j = self.views.len();
        let view = interim_view(&self.subjects, design.times[j]);
        self.views.push(view);
        let refs: Vec<&InterimView> = self.views.iter().collect();
        let fixed = self.fixed;
        if let Some(src) = self.gehan.as_mut() {
            advance_wilcoxon(src, &refs, fixed.and_then(|f| f.gehan.as_ref()));
        }
        if let Some(src) = self.logrank.as_mut() {
            advance_wilcoxon(src, &refs, fixed.and_then(|f| f.logrank.as_ref()));
        }
        if let Some(src) = self.rmst.as_mut() {
            let view = &self.views[j];
            advance_rmst(src, view, design.restriction(j), self.n, fixed.and_then(|f| f.rmst.as_ref()));
        }
    }
}

fn advance_wilcoxon(src: &mut WilcoxonSource, views: &[&InterimView], fixed: Option<&TrackModel>) {
    let j = views.len() - 1;
    if src.path.add_look(views).is_err() {
        src.track.push_inactive();
        return;
    }
    let look = src.path.looks()[j];
    if !usable(look.var_hat) {
        src.track.push_inactive();
        return;
    }
    match fixed {
        Some(m) => src.track.push_active(look.g, |l| m.cov.get(l, j), m.cov.get(j, j), |t| fixed_mean(m, t, j)),
        None => {
            let cov = src.path.cov();
            let means: Vec<(Target, f64)> = src
                .path
                .targets()
                .iter()
                .map(|t| (*t, src.path.direction(*t).expect("registered target").values()[j]))
                .collect();
            src.track
                .push_active(look.g, |l| cov.get(l, j), look.var_hat, |t| lookup(&means, t));
        }
    }
}

fn advance_rmst(src: &mut RmstSource, view: &InterimView, l: f64, n: f64, fixed: Option<&TrackModel>) {
    let j = src.index.len();
    if src.path.add_look(view, l).is_err() {
        src.index.push(None);
        src.track.push_inactive();
        return;
    }
    let p = src.path.looks().len() - 1;
    src.index.push(Some(p));
    let var = src.path.cov().get(p, p);
    if !usable(var) {
        src.track.push_inactive();
        return;
    }
    let value = n.sqrt() * src.path.looks()[p].theta_hat;
    match fixed {
        Some(m) => src.track.push_active(value, |l| m.cov.get(l, j), m.cov.get(j, j), |t| fixed_mean(m, t, j)),
        None => {
            let cov = src.path.cov();
            let index = &src.index;
            let means: Vec<(Target, f64)> = src
                .track
                .means
                .iter()
                .filter_map(|(t, _)| src.path.direction(*t).map(|d| (*t, d.values()[p])))
                .collect();
            src.track.push_active(
                value,
                |l| cov.get(index[l].expect("active looks are on the path"), p),
                var,
                |t| lookup(&means, t),
            );
        }
    }
}

fn lookup(means: &[(Target, f64)], target: Target) -> f64 {
    means.iter().find(|(t, _)| *t == target).map_or(f64::NAN, |(_, v)| *v)
}

fn fixed_mean(model: &TrackModel, target: Target, j: usize) -> f64 {
    model
        .means
        .iter()
        .find(|(t, _)| *t == target)
        .map_or(f64::NAN, |(_, m)| m[j])
}

enum Solver {
    Indinc(IndincSolver),
    Mvn(MvnSolver),
}

impl Solver {
    fn skip(&mut self) -> Result<()> {
        match self {
            Solver::Indinc(s) => s.skip_look(),
            Solver::Mvn(s) => s.skip_look(),
        }
    }
}

/// Standardized statistic, unstandardized statistic and boundary at a look.
struct Step {
    z: f64,
    statistic: f64,
    boundary: f64,
}

struct Monitor {
    source: Source,
    rule: Rule,
    solver: Solver,
    /// Looks that entered the correlated solver.
    entered: Vec<usize>,
    outcome: TrialOutcome,
    done: bool,
}

impl Monitor {
    fn new(test: &TestSpec, design: &Design, mvn: MvnConfig) -> Result<Self> {
        let rule = rule_of(test);
        let solver = match rule {
            Rule::Correlated => Solver::Mvn(MvnSolver::new(design.plan.clone(), mvn)?),
            _ => Solver::Indinc(IndincSolver::new(design.plan.clone())?),
        };
        Ok(Self {
            source: source_of(test.family),
            rule,
            solver,
            entered: Vec::new(),
            outcome: TrialOutcome::new(),
            done: false,
        })
    }

    fn record(&mut self, step: Option<Step>) {
        let o = &mut self.outcome;
        let j = o.z.len();
        o.z.push(step.as_ref().map(|s| s.z));
        o.statistic.push(step.as_ref().map(|s| s.statistic));
        o.boundary.push(step.as_ref().map(|s| s.boundary).filter(|c| c.is_finite()));
        if let Some(s) = step {
            if !o.rejected && s.z.abs() >= s.boundary {
                o.rejected = true;
                o.stop_look = Some(j + 1);
            }
        }
    }

    fn observe(&mut self, j: usize, track: Option<&Track>, complete: bool) {
        let result = match track.filter(|t| t.is_active(j)) {
            Some(track) => self.step(j, track),
            None => self.solver.skip().map(|_| None),
        };
        match result {
            Ok(step) => self.record(step),
            Err(e) => {
                self.record(None);
                self.outcome.flag = Some(e.to_string());
                self.outcome.rejected = false;
                self.outcome.stop_look = None;
                self.done = true;
            }
        }
        if self.outcome.rejected && !complete {
            self.done = true;
        }
    }

    /// Statistic and boundary at active look `j`; `Ok(None)` when the look
    /// carries no usable statistic for this test.
    fn step(&mut self, j: usize, track: &Track) -> Result<Option<Step>> {
        let x = track.values[j];
        let v = track.cov.get(j, j);
        match (self.rule, &mut self.solver) {
            (Rule::Plain, Solver::Indinc(s)) => match s.next_look(v) {
                Ok(c) => Ok(Some(Step {
                    z: x / v.sqrt(),
                    statistic: x,
                    boundary: c,
                })),
                Err(Error::NonMonotoneInformation { .. }) => s.skip_look().map(|_| None),
                Err(e) => Err(e),
            },
            (Rule::Correlated, Solver::Mvn(s)) => {
                let corr: Vec<f64> = self
                    .entered
                    .iter()
                    .map(|&l| track.cov.get(l, j) / (track.cov.get(l, l) * v).sqrt())
                    .collect();
                let c = s.next_look(&corr)?;
                self.entered.push(j);
                Ok(Some(Step {
                    z: x / v.sqrt(),
                    statistic: x,
                    boundary: c,
                }))
            }
            (rule, Solver::Indinc(s)) => {
                let active = &track.active;
                let b: Vec<f64> = match rule {
                    Rule::AdHoc => active.iter().map(|&l| track.cov.get(l, l)).collect(),
                    Rule::Targeted(t) => {
                        let m = track.mean(t).expect("registered target");
                        active.iter().map(|&l| m[l]).collect()
                    }
                    _ => unreachable!("plain and correlated rules handled above"),
                };
                let values: Vec<f64> = active.iter().map(|&l| track.values[l]).collect();
                let cov = SymMatrix::from_fn(active.len(), |a, b| track.cov.get(active[a], active[b]));
                let combined = match combine(&StatPath::new(values, cov)?, &DirectionVector::new(b)) {
                    Ok(c) => c,
                    Err(Error::DegenerateDirection { .. }) => {
                        s.skip_look()?;
                        return Ok(Some(Step {
                            z: 0.0,
                            statistic: 0.0,
                            boundary: f64::INFINITY,
                        }));
                    }
                    Err(e) => return Err(e),
                };
                match s.next_look(combined.variance) {
                    Ok(c) => Ok(Some(Step {
                        z: combined.z,
                        statistic: combined.y,
                        boundary: c,
                    })),
                    Err(Error::NonMonotoneInformation { .. }) => s.skip_look().map(|_| None),
                    Err(e) => Err(e),
                }
            }
            _ => unreachable!("solver kind follows the rule"),
        }
    }
}

/// Simulates one dataset and monitors every test on it. Numeric failures
/// are recorded in the affected test's outcome; only invalid inputs are
/// returned as errors.
pub fn run_trial<R: Rng + ?Sized>(
    scenario: &ScenarioSpec,
    design: &Design,
    tests: &[TestSpec],
    settings: &TrialSettings,
    rng: &mut R,
) -> Result<Vec<TrialOutcome>> {
    design.validate()?;
    let tests = tests
        .iter()
        .map(|t| t.resolve(design.t_delay))
        .collect::<Result<Vec<_>>>()?;
    let subjects = sample_scenario(scenario, rng)?;
    let mut monitors = tests
        .iter()
        .map(|t| Monitor::new(t, design, settings.mvn))
        .collect::<Result<Vec<_>>>()?;
    let mut sources = Sources::new(subjects, design.looks(), &tests, settings.fixed.as_deref());
    for j in 0..design.looks() {
        sources.retain(|s| monitors.iter().any(|m| m.source == s && !m.done));
        if monitors.iter().all(|m| m.done) {
            break;
        }
        sources.advance(design);
        for m in monitors.iter_mut().filter(|m| !m.done) {
            m.observe(j, sources.track(m.source), settings.complete_paths);
        }
    }
    Ok(monitors.into_iter().map(|m| m.outcome).collect())
}

/// Averages covariances and mean directions over `reps` null trials with
/// every look usable, for use as [`TrialSettings::fixed`].
pub fn pilot_model(
    scenario: &ScenarioSpec,
    design: &Design,
    tests: &[TestSpec],
    reps: usize,
    seed: u64,
) -> Result<FixedModel> {
    design.validate()?;
    let null = ScenarioSpec {
        family: Family::Null,
        delta: 0.0,
        ..scenario.clone()
    };
    null.validate()?;
    let tests = tests
        .iter()
        .map(|t| t.resolve(design.t_delay))
        .collect::<Result<Vec<_>>>()?;
    let k = design.looks();
    let models = (0..reps as u64)
        .into_par_iter()
        .map(|i| -> Result<[Option<TrackModel>; 3]> {
            let subjects = sample_scenario(&null, &mut stream(seed, i, Purpose::Pilot))?;
            let mut sources = Sources::new(subjects, k, &tests, None);
            for _ in 0..k {
                sources.advance(design);
            }
            let full = |s: Source| {
                sources
                    .track(s)
                    .filter(|t| t.active.len() == k)
                    .map(Track::model)
            };
            Ok([full(Source::Gehan), full(Source::Logrank), full(Source::Rmst)])
        })
        .collect::<Result<Vec<_>>>()?;
    let average = |slot: usize, source: Source| -> Result<Option<TrackModel>> {
        if !tests.iter().any(|t| source_of(t.family) == source) {
            return Ok(None);
        }
        let usable: Vec<&TrackModel> = models.iter().filter_map(|m| m[slot].as_ref()).collect();
        if usable.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no pilot trial had a usable statistic at every look for {source:?}"
            )));
        }
        let count = usable.len() as f64;
        let cov = SymMatrix::from_fn(k, |a, b| usable.iter().map(|m| m.cov.get(a, b)).sum::<f64>() / count);
        let means = usable[0]
            .means
            .iter()
            .enumerate()
            .map(|(i, (t, _))| {
                let avg = (0..k)
                    .map(|j| usable.iter().map(|m| m.means[i].1[j]).sum::<f64>() / count)
                    .collect();
                (*t, avg)
            })
            .collect();
        Ok(Some(TrackModel { cov, means }))
    };
    Ok(FixedModel {
        gehan: average(0, Source::Gehan)?,
        logrank: average(1, Source::Logrank)?,
        rmst: average(2, Source::Rmst)?,
    })
}

/// Frozen quantities and decision at one look of a monitored dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookReport {
    pub look: usize,
    pub t: f64,
    /// Unstandardized statistic of the family at this look (`X_j`).
    pub raw: Option<f64>,
    /// Covariance entries `V(l, j)` for `l = 1..=j`, frozen at this look.
    pub cov: Vec<Option<f64>>,
    /// This look's entry of the combination direction, for combined tests.
    pub direction: Option<f64>,
    /// Statistic the test standardizes (`X_j` or the combination `Y_j`).
    pub statistic: Option<f64>,
    pub z: Option<f64>,
    pub boundary: Option<f64>,
    pub reject: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

/// Monitors `test` on an observed dataset through look `looks`, treating
/// every subject as randomized. Every look is reported; `reject` marks the
/// looks whose statistic reaches the boundary.
pub fn analyze_dataset(
    subjects: Vec<Subject>,
    design: &Design,
    test: &TestSpec,
    looks: usize,
    mvn: MvnConfig,
) -> Result<Vec<LookReport>> {
    design.validate()?;
    if looks == 0 || looks > design.looks() {
        return Err(Error::LookOutOfRange {
            look: looks,
            max: design.looks(),
        });
    }
    let test = test.resolve(design.t_delay)?;
    let tests = [test];
    let mut monitor = Monitor::new(&test, design, mvn)?;
    let mut sources = Sources::new(subjects, design.looks(), &tests, None);
    let mut out = Vec::with_capacity(looks);
    for j in 0..looks {
        sources.advance(design);
        let track = sources.track(monitor.source).expect("source in use");
        let active = track.is_active(j);
        let done = monitor.done;
        if !done {
            monitor.observe(j, Some(track), true);
        }
        let o = &monitor.outcome;
        let cov = (0..=j)
            .map(|l| (active && track.values[l].is_finite()).then(|| track.cov.get(l, j)))
            .collect();
        let direction = match monitor.rule {
            _ if !active => None,
            Rule::AdHoc => Some(track.cov.get(j, j)),
            Rule::Targeted(t) => track.mean(t).map(|m| m[j]),
            _ => None,
        };
        let at = |v: &[Option<f64>]| if done { None } else { v.get(j).copied().flatten() };
        let z = if done { None } else { Some(at(&o.z).unwrap_or(0.0)) };
        let boundary = at(&o.boundary);
        out.push(LookReport {
            look: j + 1,
            t: design.times[j],
            raw: active.then(|| track.values[j]),
            cov,
            direction,
            statistic: at(&o.statistic),
            z,
            boundary,
            reject: matches!((z, boundary), (Some(z), Some(c)) if z.abs() >= c),
            flag: o.flag.clone(),
        });
    }
    Ok(out)
}
