//! Staggered-entry trial data under administrative censoring.
//!
//! A [`Subject`] carries its latent entry time, time-to-event measured from
//! entry, and arm. An [`InterimView`] is what an analysis at study time `t`
//! sees: subjects with `entry <= t`, follow-up `min(T, t - E)` and an event
//! flag. Product-limit and cumulative-hazard estimators are evaluated on a
//! view; ties at an event time are aggregated, and subjects censored at an
//! event time count as at risk for it.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Read;

/// Latent data for one randomized subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    /// Study time of entry.
    pub entry: f64,
    /// Event time measured from entry.
    pub event: f64,
    /// Treatment indicator, 0 or 1.
    pub arm: u8,
}

/// Which subjects an estimator should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Arm(u8),
    Pooled,
}

impl Group {
    #[inline]
    fn includes(self, arm: u8) -> bool {
        match self {
            Group::Arm(a) => a == arm,
            Group::Pooled => true,
        }
    }
}

/// One included subject as seen at an analysis time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub followup: f64,
    pub event: bool,
    pub arm: u8,
}

/// Aggregated counts at one distinct event time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventPoint {
    pub time: f64,
    /// Number at risk just before `time`, by arm.
    pub at_risk: [u32; 2],
    /// Number of events at `time`, by arm.
    pub events: [u32; 2],
}

impl EventPoint {
    #[inline]
    pub fn at_risk_in(&self, group: Group) -> f64 {
        match group {
            Group::Arm(a) => self.at_risk[a as usize] as f64,
            Group::Pooled => (self.at_risk[0] + self.at_risk[1]) as f64,
        }
    }

    #[inline]
    pub fn events_in(&self, group: Group) -> f64 {
        match group {
            Group::Arm(a) => self.events[a as usize] as f64,
            Group::Pooled => (self.events[0] + self.events[1]) as f64,
        }
    }
}

/// Administratively censored snapshot of the trial at `analysis_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterimView {
    analysis_time: f64,
    /// Sorted by follow-up, ascending.
    records: Vec<Record>,
    /// Follow-up times by arm, ascending.
    followups: [Vec<f64>; 2],
    /// Potential (randomized) sample size by arm, including subjects not yet
    /// enrolled.
    potential: [usize; 2],
    events: Vec<EventPoint>,
}

/// Snapshot of `subjects` at study time `t`.
pub fn interim_view(subjects: &[Subject], t: f64) -> InterimView {
    let mut potential = [0usize; 2];
    let mut records: Vec<Record> = Vec::with_capacity(subjects.len());
    for s in subjects {
        potential[s.arm as usize] += 1;
        if s.entry <= t {
            let window = t - s.entry;
            let event = s.event <= window;
            records.push(Record {
                followup: if event { s.event } else { window },
                event,
                arm: s.arm,
            });
        }
    }
    // Events sort ahead of censorings at the same time.
    records.sort_unstable_by(|a, b| {
        a.followup
            .total_cmp(&b.followup)
            .then_with(|| b.event.cmp(&a.event))
    });
    let mut followups = [Vec::new(), Vec::new()];
    for r in &records {
        followups[r.arm as usize].push(r.followup);
    }
    let events = tabulate_events(&records);
    InterimView {
        analysis_time: t,
        records,
        followups,
        potential,
        events,
    }
}

fn tabulate_events(records: &[Record]) -> Vec<EventPoint> {
    let mut at_risk = [0u32; 2];
    for r in records {
        at_risk[r.arm as usize] += 1;
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let time = records[i].followup;
        let mut events = [0u32; 2];
        let mut leaving = [0u32; 2];
        let mut j = i;
        while j < records.len() && records[j].followup == time {
            let r = &records[j];
            leaving[r.arm as usize] += 1;
            if r.event {
                events[r.arm as usize] += 1;
            }
            j += 1;
        }
        if events[0] + events[1] > 0 {
            out.push(EventPoint {
                time,
                at_risk,
                events,
            });
        }
        at_risk[0] -= leaving[0];
        at_risk[1] -= leaving[1];
        i = j;
    }
    out
}

impl InterimView {
    pub fn analysis_time(&self) -> f64 {
        self.analysis_time
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of enrolled subjects by arm.
    pub fn enrolled(&self) -> [usize; 2] {
        [self.followups[0].len(), self.followups[1].len()]
    }

    /// Randomized sample size by arm, enrolled or not.
    pub fn potential(&self) -> [usize; 2] {
        self.potential
    }

    /// Distinct event times with their risk-set and event counts.
    pub fn event_points(&self) -> &[EventPoint] {
        &self.events
    }

    /// Fraction of enrolled subjects on arm 1; zero for an empty view.
    pub fn pi_hat(&self) -> f64 {
        let [n0, n1] = self.enrolled();
        if n0 + n1 == 0 {
            0.0
        } else {
            n1 as f64 / (n0 + n1) as f64
        }
    }

    /// `#{U_i >= u}` among subjects in `group`.
    pub fn at_risk_at(&self, u: f64, group: Group) -> usize {
        let count = |f: &Vec<f64>| f.len() - f.partition_point(|x| *x < u);
        match group {
            Group::Arm(a) => count(&self.followups[a as usize]),
            Group::Pooled => count(&self.followups[0]) + count(&self.followups[1]),
        }
    }
}

/// Right-continuous step function: `initial` before the first jump, then
/// `values[i]` on `[times[i], times[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFn {
    pub initial: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFn {
    pub fn constant(value: f64) -> Self {
        Self {
            initial: value,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Right-continuous value at `u`.
    pub fn eval(&self, u: f64) -> f64 {
        match self.times.partition_point(|t| *t <= u) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }

    /// Left limit at `u`.
    pub fn left_limit(&self, u: f64) -> f64 {
        match self.times.partition_point(|t| *t < u) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }

    /// Exact area under the function on `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut area = 0.0;
        let mut left = a;
        let mut value = self.eval(a);
        let start = self.times.partition_point(|t| *t <= a);
        for (t, v) in self.times[start..].iter().zip(&self.values[start..]) {
            if *t >= b {
                break;
            }
            area += value * (t - left);
            left = *t;
            value = *v;
        }
        area + value * (b - left)
    }
}

/// Risk-set size as a step function. `eval(u)` gives `#{U > u}`; the
/// at-risk count `W(u) = #{U >= u}` is `left_limit(u)`.
pub fn risk_count(view: &InterimView, group: Group) -> StepFn {
    let mut remaining = view
        .records
        .iter()
        .filter(|r| group.includes(r.arm))
        .count() as f64;
    let initial = remaining;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for r in view.records.iter().filter(|r| group.includes(r.arm)) {
        remaining -= 1.0;
        if times.last() == Some(&r.followup) {
            *values.last_mut().unwrap() = remaining;
        } else {
            times.push(r.followup);
            values.push(remaining);
        }
    }
    StepFn {
        initial,
        times,
        values,
    }
}

/// Kaplan-Meier product-limit estimator.
pub fn km_estimator(view: &InterimView, group: Group) -> StepFn {
    let mut s = 1.0;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for p in &view.events {
        let d = p.events_in(group);
        if d > 0.0 {
            s *= 1.0 - d / p.at_risk_in(group);
            times.push(p.time);
            values.push(s);
        }
    }
    StepFn {
        initial: 1.0,
        times,
        values,
    }
}

/// Nelson-Aalen cumulative hazard estimator.
pub fn nelson_aalen(view: &InterimView, group: Group) -> StepFn {
    let mut h = 0.0;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for p in &view.events {
        let d = p.events_in(group);
        if d > 0.0 {
            h += d / p.at_risk_in(group);
            times.push(p.time);
            values.push(h);
        }
    }
    StepFn {
        initial: 0.0,
        times,
        values,
    }
}

/// Survival law for arm 1 relative to an exponential control arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Null,
    Proportional,
    LogOdds,
    Delayed,
}

/// Generative model for one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n: usize,
    #[serde(default = "default_pi")]
    pub pi: f64,
    #[serde(default = "default_entry_max")]
    pub entry_max: f64,
    #[serde(default = "default_baseline_rate")]
    pub baseline_rate: f64,
    pub family: Family,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub t_delay: f64,
}

fn default_pi() -> f64 {
    0.5
}

fn default_entry_max() -> f64 {
    2.0
}

fn default_baseline_rate() -> f64 {
    1.0
}

impl ScenarioSpec {
    pub fn new(n: usize, family: Family, delta: f64, t_delay: f64) -> Self {
        Self {
            n,
            pi: default_pi(),
            entry_max: default_entry_max(),
            baseline_rate: default_baseline_rate(),
            family,
            delta,
            t_delay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return bad("pi must lie in (0, 1)");
        }
        if !(self.entry_max > 0.0 && self.entry_max.is_finite()) {
            return bad("entry_max must be positive");
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate.is_finite()) {
            return bad("baseline_rate must be positive");
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite");
        }
        if !(self.t_delay >= 0.0 && self.t_delay.is_finite()) {
            return bad("t_delay must be nonnegative");
        }
        Ok(())
    }

    /// Survival function of arm `arm` at time `u` from entry.
    pub fn survival(&self, arm: u8, u: f64) -> f64 {
        let h0 = self.baseline_rate * u;
        if arm == 0 {
            return (-h0).exp();
        }
        let e = self.delta.exp();
        match self.family {
            Family::Null => (-h0).exp(),
            Family::Proportional => (-h0 * e).exp(),
            Family::LogOdds => {
                let s0 = (-h0).exp();
                s0 * e / (1.0 + s0 * (e - 1.0))
            }
            Family::Delayed => {
                let hd = self.baseline_rate * self.t_delay;
                if h0 < hd {
                    (-h0).exp()
                } else {
                    (-(hd + (h0 - hd) * e)).exp()
                }
            }
        }
    }

    /// Inverse of [`survival`](Self::survival): the time at which arm `arm`
    /// has survival probability `s` in `(0, 1]`.
    pub fn inverse_survival(&self, arm: u8, s: f64) -> f64 {
        let rate = self.baseline_rate;
        let hazard = -s.ln();
        if arm == 0 {
            return hazard / rate;
        }
        let e = self.delta.exp();
        match self.family {
            Family::Null => hazard / rate,
            Family::Proportional => hazard / (rate * e),
            Family::LogOdds => {
                let s0 = s / (e * (1.0 - s) + s);
                -s0.ln() / rate
            }
            Family::Delayed => {
                let hd = rate * self.t_delay;
                if hazard < hd {
                    hazard / rate
                } else {
                    self.t_delay + (hazard - hd) / (rate * e)
                }
            }
        }
    }
}

/// Draws `spec.n` subjects. Each subject consumes exactly three uniforms
/// (entry, arm, survival) in that order.
pub fn sample_scenario<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Vec<Subject>> {
    spec.validate()?;
    Ok((0..spec.n)
        .map(|_| {
            let entry = spec.entry_max * rng.random::<f64>();
            let arm = u8::from(rng.random::<f64>() < spec.pi);
            let s = 1.0 - rng.random::<f64>();
            Subject {
                entry,
                event: spec.inverse_survival(arm, s),
                arm,
            }
        })
        .collect())
}

/// Reads the `entry_time,event_time,arm` dataset format.
pub fn read_subjects_csv<R: Read>(reader: R) -> Result<Vec<Subject>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .clone();
    let expected = ["entry_time", "event_time", "arm"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Schema(format!(
            "expected header entry_time,event_time,arm, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Schema(e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|_| {
                Error::Schema(format!("row {}: cannot parse {:?} as a number", line + 2, &row[i]))
            })
        };
        let entry = field(0)?;
        let event = field(1)?;
        let arm = match &row[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Schema(format!(
                    "row {}: arm must be 0 or 1, found {other:?}",
                    line + 2
                )))
            }
        };
        if !(entry >= 0.0 && entry.is_finite()) || !(event > 0.0 && event.is_finite()) {
            return Err(Error::Schema(format!(
                "row {}: entry must be >= 0 and event > 0",
                line + 2
            )));
        }
        out.push(Subject { entry, event, arm });
    }
    Ok(out)
}

/// Writes subjects in the dataset format with full round-trip precision.
pub fn write_subjects_csv<W: std::io::Write>(subjects: &[Subject], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Schema(e.to_string());
    w.write_record(["entry_time", "event_time", "arm"]).map_err(io)?;
    for s in subjects {
        w.write_record([
            format!("{:e}", s.entry),
            format!("{:e}", s.event),
            s.arm.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn subject(entry: f64, event: f64, arm: u8) -> Subject {
        Subject { entry, event, arm }
    }

    fn events_at(times: &[f64]) -> InterimView {
        let subjects: Vec<_> = times.iter().map(|t| subject(0.0, *t, 0)).collect();
        interim_view(&subjects, 100.0)
    }

    #[test]
    fn view_before_any_entry_is_empty() {
        let v = interim_view(&[subject(0.5, 1.0, 0), subject(0.8, 1.0, 1)], 0.3);
        assert!(v.is_empty());
        assert_eq!(v.potential(), [1, 1]);
    }

    #[test]
    fn view_censoring_rules() {
        let v = interim_view(&[subject(0.5, 0.3, 0), subject(0.5, 0.8, 1)], 1.0);
        let r = v.records();
        assert_eq!((r[0].followup, r[0].event), (0.3, true));
        assert_eq!((r[1].followup, r[1].event), (0.5, false));
    }

    #[test]
    fn risk_count_examples() {
        let v = interim_view(&[subject(0.5, 0.3, 0), subject(0.5, 0.8, 1)], 1.0);
        let w = risk_count(&v, Group::Pooled);
        assert_eq!(w.left_limit(0.0), 2.0);
        assert_eq!(w.left_limit(0.4), 1.0);
        assert_eq!(w.left_limit(0.5), 1.0);
        assert_eq!(w.left_limit(0.51), 0.0);
        assert_eq!(v.at_risk_at(0.4, Group::Pooled), 1);
        assert_eq!(v.at_risk_at(0.3, Group::Arm(0)), 1);
    }

    #[test]
    fn km_examples() {
        let none = interim_view(&[subject(0.0, 5.0, 0)], 0.7);
        let s = km_estimator(&none, Group::Pooled);
        assert_eq!(s.eval(0.7), 1.0);
        assert_eq!(s.eval(0.0), 1.0);

        let s = km_estimator(&events_at(&[1.0, 2.0]), Group::Pooled);
        assert_eq!(s.eval(0.5), 1.0);
        assert_eq!(s.eval(1.0), 0.5);
        assert_eq!(s.eval(1.9), 0.5);
        assert_eq!(s.eval(2.0), 0.0);
        assert_eq!(s.eval(7.0), 0.0);
    }

    #[test]
    fn km_aggregates_ties() {
        let s = km_estimator(&events_at(&[1.0, 1.0, 2.0, 3.0]), Group::Pooled);
        assert_eq!(s.times, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.eval(1.0), 0.5);
        assert_eq!(s.eval(2.0), 0.25);
    }

    #[test]
    fn censoring_at_event_time_stays_at_risk() {
        // subject censored at 1.0 is at risk for the event at 1.0
        let subjects = [subject(0.0, 1.0, 0), subject(1.0, 5.0, 0), subject(0.0, 4.0, 1)];
        let v = interim_view(&subjects, 2.0);
        let p = v.event_points()[0];
        assert_eq!(p.time, 1.0);
        assert_eq!(p.at_risk_in(Group::Pooled), 3.0);
    }

    #[test]
    fn nelson_aalen_examples() {
        let none = interim_view(&[subject(0.0, 5.0, 0)], 1.0);
        assert_eq!(nelson_aalen(&none, Group::Pooled).eval(1.0), 0.0);
        let h = nelson_aalen(&events_at(&[1.0, 2.0]), Group::Pooled);
        assert_eq!(h.eval(1.0), 0.5);
        assert_eq!(h.eval(2.0), 1.5);
    }

    #[test]
    fn step_integral() {
        let s = km_estimator(&events_at(&[1.0, 2.0]), Group::Pooled);
        assert!((s.integral(0.0, 2.0) - 1.5).abs() < 1e-15);
        assert!((s.integral(0.5, 1.5) - 0.75).abs() < 1e-15);
        assert_eq!(s.integral(0.0, 0.0), 0.0);
        assert!((s.integral(0.0, 5.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_delta_log_odds_matches_null() {
        let lo = ScenarioSpec::new(50, Family::LogOdds, 0.0, 0.0);
        let null = ScenarioSpec::new(50, Family::Null, 0.0, 0.0);
        let a = sample_scenario(&lo, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_scenario(&null, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.entry, y.entry);
            assert_eq!(x.arm, y.arm);
            assert!((x.event - y.event).abs() < 1e-12 * y.event.max(1.0));
        }
    }

    #[test]
    fn inverse_survival_round_trips() {
        for family in [Family::Null, Family::Proportional, Family::LogOdds, Family::Delayed] {
            let spec = ScenarioSpec::new(1, family, 0.47, 0.6);
            for arm in [0, 1] {
                for &s in &[0.99, 0.7, 0.5, 0.2, 0.01] {
                    let t = spec.inverse_survival(arm, s);
                    assert!((spec.survival(arm, t) - s).abs() < 1e-12, "{family:?} {arm} {s}");
                }
            }
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = ScenarioSpec::new(10, Family::Null, 0.0, 0.0);
        spec.pi = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_scenario(&spec, &mut rng), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn csv_round_trip() {
        let subjects = vec![subject(0.25, 1.5, 0), subject(1.0 / 3.0, 0.1, 1)];
        let mut buf = Vec::new();
        write_subjects_csv(&subjects, &mut buf).unwrap();
        assert_eq!(read_subjects_csv(&buf[..]).unwrap(), subjects);
    }

    #[test]
    fn csv_schema_errors() {
        assert!(matches!(
            read_subjects_csv("entry,event,arm\n0,1,0\n".as_bytes()),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            read_subjects_csv("entry_time,event_time,arm\n0,1,2\n".as_bytes()),
            Err(Error::Schema(_))
        ));
        assert!(read_subjects_csv("entry_time,event_time,arm\n".as_bytes())
            .unwrap()
            .is_empty());
    }
}
