//! Maximum-likelihood fitting of the per-behavior slope distributions.
//!
//! Each user contributes a Gaussian log-density of the observed duration
//! around the estimated one, with standard deviation `alpha * observed`.
//! The 16 free coordinates are the eight means and eight log-variances;
//! `alpha` and `t_max` stay fixed.

pub mod bfgs;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{Behavior, GaussianParams, ParameterSet};
use crate::engine::{duration_of_sections, Method};
use crate::error::{Error, Result};
use crate::timeline::{InteractionSession, Section};

pub use bfgs::IterationRecord;

// Crossing times scale like 1/|mean|, so means move by at most half their
// magnitude per trial step and cannot jump across zero in one go.
const MEAN_RELATIVE_MOVE: f64 = 0.5;
const MEAN_MOVE_FLOOR: f64 = 2e-3;
const LOG_VARIANCE_MOVE: f64 = 1.0;

/// Number of optimized coordinates: a mean and a log-variance per behavior.
pub const DIMENSION: usize = 2 * Behavior::COUNT;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_iterations: usize,
    /// Relative half-width of the central-difference gradient stencil.
    pub gradient_step: f64,
    /// Relative objective decrease that ends the run.
    pub convergence_tolerance: f64,
    pub mean_bounds: (f64, f64),
    pub log_variance_bounds: (f64, f64),
    pub dependence_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            gradient_step: 1e-4,
            convergence_tolerance: 1e-10,
            mean_bounds: (-1.0, 1.0),
            log_variance_bounds: (1e-8_f64.ln(), 10.0_f64.ln()),
            dependence_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn method(&self) -> Method {
        Method::from_dependence(self.dependence_enabled)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidParameter {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if self.max_iterations == 0 {
            return bad("max_iterations", "must be at least 1");
        }
        if !(self.gradient_step > 0.0) {
            return bad("gradient_step", "must be positive");
        }
        if !(self.convergence_tolerance > 0.0) {
            return bad("convergence_tolerance", "must be positive");
        }
        if !(self.mean_bounds.0 < self.mean_bounds.1) {
            return bad("mean_bounds", "lower bound must be below upper bound");
        }
        if !(self.log_variance_bounds.0 < self.log_variance_bounds.1) {
            return bad("log_variance_bounds", "lower bound must be below upper bound");
        }
        Ok(())
    }

    fn bounds(&self) -> bfgs::Bounds {
        let mut lower = vec![self.mean_bounds.0; Behavior::COUNT];
        lower.extend([self.log_variance_bounds.0; Behavior::COUNT]);
        let mut upper = vec![self.mean_bounds.1; Behavior::COUNT];
        upper.extend([self.log_variance_bounds.1; Behavior::COUNT]);
        bfgs::Bounds { lower, upper }
    }
}

struct PreparedUser {
    user: usize,
    arrival: f64,
    observed: f64,
    sections: Vec<Section>,
}

struct PreparedSession {
    index: usize,
    users: Vec<PreparedUser>,
}

/// The training objective over a fixed dataset with sections precomputed.
pub struct Objective<'a> {
    dataset: &'a [InteractionSession],
    sessions: Vec<PreparedSession>,
    method: Method,
    template: ParameterSet,
}

fn user_term(t_hat: f64, observed: f64, alpha: f64) -> f64 {
    let sigma = alpha * observed;
    let r = t_hat - observed;
    r * r / (2.0 * sigma * sigma) + sigma.ln() + 0.5 * (2.0 * PI).ln()
}

impl<'a> Objective<'a> {
    /// Segments every user once. `template` supplies `alpha` and `t_max`.
    pub fn new(dataset: &'a [InteractionSession], template: &ParameterSet, method: Method) -> Result<Self> {
        let sessions = dataset
            .iter()
            .enumerate()
            .map(|(index, session)| {
                session.ensure_valid()?;
                let users = session
                    .users
                    .iter()
                    .enumerate()
                    .map(|(u, record)| {
                        if !(record.observed_duration > 0.0) {
                            return Err(Error::ZeroDuration {
                                session: session.session_id.clone(),
                                user: record.user_id.clone(),
                                duration: record.observed_duration,
                            });
                        }
                        Ok(PreparedUser {
                            user: u,
                            arrival: record.arrival(),
                            observed: record.observed_duration,
                            sections: session.segment_user(u),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PreparedSession { index, users })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset,
            sessions,
            method,
            template: template.clone(),
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    fn session_terms(&self, session: &PreparedSession, params: &ParameterSet) -> f64 {
        session
            .users
            .iter()
            .map(|u| {
                let (t_hat, _) = duration_of_sections(u.arrival, &u.sections, params, self.method);
                user_term(t_hat, u.observed, params.alpha())
            })
            .sum()
    }

    /// Negative log-likelihood; sessions are evaluated in parallel and summed
    /// in dataset order.
    pub fn evaluate(&self, params: &ParameterSet) -> f64 {
        let per_session: Vec<f64> = self
            .sessions
            .par_iter()
            .map(|s| self.session_terms(s, params))
            .collect();
        per_session.iter().sum()
    }

    pub fn evaluate_vector(&self, x: &[f64]) -> f64 {
        self.evaluate(&self.from_vector(x))
    }

    /// Locates the first user whose likelihood term is not finite.
    fn find_non_finite(&self, params: &ParameterSet) -> Option<Error> {
        for session in &self.sessions {
            for u in &session.users {
                let (t_hat, _) = duration_of_sections(u.arrival, &u.sections, params, self.method);
                if !user_term(t_hat, u.observed, params.alpha()).is_finite() {
                    let record = &self.dataset[session.index];
                    return Some(Error::NonFiniteObjective {
                        session: record.session_id.clone(),
                        user: record.users[u.user].user_id.clone(),
                        section: u.sections.last().map_or(0, |s| s.index),
                    });
                }
            }
        }
        None
    }

    pub fn to_vector(params: &ParameterSet) -> Vec<f64> {
        let mut x: Vec<f64> = params.iter().map(|(_, g)| g.mean()).collect();
        x.extend(params.iter().map(|(_, g)| g.variance().ln()));
        x
    }

    pub fn from_vector(&self, x: &[f64]) -> ParameterSet {
        let mut params = self.template.clone();
        for b in Behavior::ALL {
            let i = b.index();
            params = params.with(b, GaussianParams::new_unchecked(x[i], x[Behavior::COUNT + i].exp()));
        }
        params
    }

    /// Central-difference gradient as used by the optimizer.
    pub fn gradient(&self, x: &[f64], config: &TrainConfig) -> Vec<f64> {
        bfgs::central_gradient(&|v: &[f64]| self.evaluate_vector(v), x, &config.bounds(), config.gradient_step)
    }
}

/// Negative log-likelihood of the dataset. An empty dataset scores 0.
pub fn negative_log_likelihood(
    dataset: &[InteractionSession],
    params: &ParameterSet,
    dependence_enabled: bool,
) -> Result<f64> {
    let objective = Objective::new(dataset, params, Method::from_dependence(dependence_enabled))?;
    Ok(objective.evaluate(params))
}

/// Number of annotated intervals per behavior across all users.
pub fn occurrence_counts(dataset: &[InteractionSession]) -> BTreeMap<Behavior, usize> {
    let mut counts: BTreeMap<Behavior, usize> = Behavior::ALL.iter().map(|&b| (b, 0)).collect();
    for interval in dataset.iter().flat_map(|s| &s.users).flat_map(|u| &u.intervals) {
        *counts.entry(interval.behavior).or_default() += 1;
    }
    counts
}

const SHARED_MEAN_GRID: usize = 160;
const SHARED_MEAN_SMALLEST: f64 = 1e-4;
const GOLDEN_ITERATIONS: usize = 60;

/// Best single negative mean for all occurring behaviors: a log-spaced scan
/// of the magnitude refined by golden-section search. Returns `None` when no
/// negative mean fits inside the bounds.
fn shared_mean_start(objective: &Objective, x0: &[f64], occurring: &[bool], bounds: (f64, f64)) -> Option<Vec<f64>> {
    let hi = (-bounds.0).min(1.0);
    let lo = SHARED_MEAN_SMALLEST.max(-bounds.1);
    if !(lo < hi) {
        return None;
    }
    let at = |log_magnitude: f64| {
        let mut x = x0.to_vec();
        for (i, _) in occurring.iter().enumerate().filter(|(_, &o)| o) {
            x[i] = -log_magnitude.exp();
        }
        x
    };
    let f = |log_magnitude: f64| objective.evaluate_vector(&at(log_magnitude));
    let (a, b) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..=SHARED_MEAN_GRID)
        .map(|k| a + (b - a) * k as f64 / SHARED_MEAN_GRID as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&g| f(g)).collect();
    let best = (0..grid.len()).min_by(|&i, &j| values[i].total_cmp(&values[j]))?;
    let (mut left, mut right) = (grid[best.saturating_sub(1)], grid[(best + 1).min(SHARED_MEAN_GRID)]);
    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (right - ratio * (right - left), left + ratio * (right - left));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if fc < fd {
            right = d;
            (d, fd) = (c, fc);
            c = right - ratio * (right - left);
            fc = f(c);
        } else {
            left = c;
            (c, fc) = (d, fd);
            d = left + ratio * (right - left);
            fd = f(d);
        }
    }
    let refined = if fc < fd { (c, fc) } else { (d, fd) };
    let chosen = if refined.1 < values[best] { refined.0 } else { grid[best] };
    Some(at(chosen))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ParameterSet,
    pub method: Method,
    /// Objective at the start, at the warm start when one was used, then the
    /// value after every accepted step.
    pub objective_trajectory: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    /// Number of warm-start points in the trajectory ahead of the steps.
    pub warm_starts: usize,
    pub occurrences: BTreeMap<Behavior, usize>,
    pub converged: bool,
}

impl TrainReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trajectory.last().expect("trajectory holds the initial value")
    }

    pub fn to_toml_string(&self) -> String {
        let file = ReportFile {
            dependence_enabled: self.method.dependence_enabled(),
            converged: self.converged,
            iterations: self.iterations.len(),
            warm_starts: self.warm_starts,
            final_objective: self.final_objective(),
            objective_trajectory: self.objective_trajectory.clone(),
            occurrences: self.occurrences.clone(),
            parameters: self.params.clone(),
        };
        toml::to_string(&file).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    dependence_enabled: bool,
    converged: bool,
    iterations: usize,
    warm_starts: usize,
    final_objective: f64,
    objective_trajectory: Vec<f64>,
    occurrences: BTreeMap<Behavior, usize>,
    parameters: ParameterSet,
}

pub fn train(dataset: &[InteractionSession], init: &ParameterSet, config: &TrainConfig) -> Result<TrainReport> {
    train_with(dataset, init, config, |_| {})
}

/// Like [`train`], calling `observer` after every accepted step.
pub fn train_with(
    dataset: &[InteractionSession],
    init: &ParameterSet,
    config: &TrainConfig,
    observer: impl FnMut(&IterationRecord),
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let objective = Objective::new(dataset, init, config.method())?;
    let bounds = config.bounds();
    let mut x0 = Objective::to_vector(init);
    bounds.clamp(&mut x0);
    let start = objective.from_vector(&x0);
    if !objective.evaluate(&start).is_finite() {
        return Err(objective
            .find_non_finite(&start)
            .expect("a non-finite sum has a non-finite term"));
    }

    let options = bfgs::Options {
        max_iterations: config.max_iterations,
        tolerance: config.convergence_tolerance,
        gradient_step: config.gradient_step,
        move_limits: [(MEAN_RELATIVE_MOVE, MEAN_MOVE_FLOOR); Behavior::COUNT]
            .into_iter()
            .chain([(0.0, LOG_VARIANCE_MOVE); Behavior::COUNT])
            .collect(),
    };
    let initial_objective = objective.evaluate_vector(&x0);
    let mut objective_trajectory = vec![initial_objective];

    // Far from the optimum the landscape is full of kinks, so the quasi-Newton
    // run starts from the best of a chain of cheaper fits: one shared mean for
    // every occurring behavior, then (for the coupled model) the independent
    // model. Each warm start is kept only if it lowers the objective.
    let mut start_x = x0.clone();
    let mut start_objective = initial_objective;
    let mut warm_starts = 0;
    let occurring: Vec<bool> = occurrence_counts(dataset).values().map(|&n| n > 0).collect();
    let mut candidates = vec![shared_mean_start(&objective, &x0, &occurring, config.mean_bounds)];
    if config.method() == Method::Coupled {
        candidates.push(None);
    }
    for candidate in candidates {
        let x = match candidate {
            Some(x) => x,
            None => {
                let independent = Objective::new(dataset, init, Method::Independent)?;
                bfgs::minimize(|x| independent.evaluate_vector(x), &start_x, &bounds, &options, |_| {}).x
            }
        };
        let value = objective.evaluate_vector(&x);
        if value < start_objective {
            start_x = x;
            start_objective = value;
            warm_starts += 1;
            objective_trajectory.push(value);
        }
    }
    let outcome = bfgs::minimize(|x| objective.evaluate_vector(x), &start_x, &bounds, &options, observer);
    objective_trajectory.extend(outcome.iterations.iter().map(|r| r.objective));

    // Coordinates the optimizer never moved keep their exact initial value
    // instead of a log/exp round trip.
    let mut params = init.clone();
    let fitted = objective.from_vector(&outcome.x);
    for b in Behavior::ALL {
        let i = b.index();
        let old = init.get(b);
        let mean = if outcome.x[i] == x0[i] { old.mean() } else { fitted.get(b).mean() };
        let variance = if outcome.x[Behavior::COUNT + i] == x0[Behavior::COUNT + i] {
            old.variance()
        } else {
            fitted.get(b).variance()
        };
        params = params.with(b, GaussianParams::new_unchecked(mean, variance));
    }

    Ok(TrainReport {
        params,
        method: config.method(),
        objective_trajectory,
        iterations: outcome.iterations,
        warm_starts,
        occurrences: occurrence_counts(dataset),
        converged: outcome.converged,
    })
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<InteractionSession>,
    pub validation: Vec<InteractionSession>,
    /// Share of users that landed in the training part.
    pub train_user_fraction: f64,
}

/// Seeded split by whole sessions so co-present users never straddle the
/// two parts. Both parts keep the input order.
pub fn split_dataset(sessions: &[InteractionSession], train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter {
            field: "train_fraction".into(),
            reason: format!("must lie strictly between 0 and 1, got {train_fraction}"),
        });
    }
    let n = sessions.len();
    if n < 2 {
        return Err(Error::TooFewSessions { sessions: n });
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (session, &t) in sessions.iter().zip(&in_train) {
        if t {
            train.push(session.clone());
        } else {
            validation.push(session.clone());
        }
    }
    let users = |s: &[InteractionSession]| s.iter().map(|x| x.users.len()).sum::<usize>();
    let total = users(sessions);
    Ok(DatasetSplit {
        train_user_fraction: if total == 0 { 0.0 } else { users(&train) as f64 / total as f64 },
        train,
        validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::UserRecord;
    use Behavior::*;

    fn solo(id: &str, dwells: &[(Behavior, f64)]) -> InteractionSession {
        InteractionSession::new(id, vec![UserRecord::from_dwells("a", 0.0, dwells)])
    }

    fn gaze_only(mean: f64) -> ParameterSet {
        ParameterSet::initial().with(Gaze, GaussianParams::new(mean, 0.1).unwrap())
    }

    #[test]
    fn matched_user_scores_log_sigma() {
        let data = vec![solo("s", &[(Gaze, 100.0)])];
        let nll = negative_log_likelihood(&data, &gaze_only(-0.01), true).unwrap();
        let expected = 10.0_f64.ln() + 0.5 * (2.0 * PI).ln();
        assert!((nll - expected).abs() < 1e-12);
        assert!((nll - 3.2215).abs() < 1e-4);
    }

    #[test]
    fn ten_second_miss_costs_half_a_nat() {
        let data = vec![solo("s", &[(Gaze, 100.0)])];
        let matched = negative_log_likelihood(&data, &gaze_only(-0.01), true).unwrap();
        let missed = negative_log_likelihood(&data, &gaze_only(-1.0 / 110.0), true).unwrap();
        assert!((missed - matched - 0.5).abs() < 1e-9, "{}", missed - matched);
    }

    #[test]
    fn empty_dataset_scores_zero() {
        assert_eq!(negative_log_likelihood(&[], &ParameterSet::initial(), true).unwrap(), 0.0);
        assert!(matches!(train(&[], &ParameterSet::initial(), &TrainConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn zero_duration_is_rejected() {
        let mut s = solo("s", &[(Gaze, 10.0)]);
        s.users[0].observed_duration = 0.0;
        s.users[0].intervals[0].end = 0.0;
        assert!(negative_log_likelihood(&[s], &ParameterSet::initial(), true).is_err());
    }

    #[test]
    fn gaze_only_training_recovers_inverse_duration() {
        let data: Vec<_> = (0..6).map(|i| solo(&format!("s{i}"), &[(Gaze, 100.0)])).collect();
        let report = train(&data, &ParameterSet::initial(), &TrainConfig::default()).unwrap();
        let mean = report.params.get(Gaze).mean();
        assert!((mean + 0.01).abs() < 1e-3, "{mean}");
        for b in Behavior::ALL.into_iter().filter(|&b| b != Gaze) {
            assert_eq!(report.params.get(b), ParameterSet::initial().get(b));
        }
        assert!(report.objective_trajectory.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bad_config_is_rejected() {
        let data = vec![solo("s", &[(Gaze, 100.0)])];
        let config = TrainConfig {
            gradient_step: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&data, &ParameterSet::initial(), &config).is_err());
        let config = TrainConfig {
            mean_bounds: (1.0, -1.0),
            ..TrainConfig::default()
        };
        assert!(train(&data, &ParameterSet::initial(), &config).is_err());
    }

    #[test]
    fn split_is_deterministic_and_by_session() {
        let data: Vec<_> = (0..10).map(|i| solo(&format!("s{i}"), &[(Gaze, 50.0)])).collect();
        let a = split_dataset(&data, 0.8, 11).unwrap();
        let b = split_dataset(&data, 0.8, 11).unwrap();
        assert_eq!((a.train.len(), a.validation.len()), (8, 2));
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.train_user_fraction, 0.8);
        let ids: Vec<_> = a.train.iter().chain(&a.validation).map(|s| s.session_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }

    #[test]
    fn split_rejects_degenerate_input() {
        let one = vec![solo("s", &[(Gaze, 50.0)])];
        assert!(matches!(split_dataset(&one, 0.5, 0), Err(Error::TooFewSessions { .. })));
        let two = vec![solo("a", &[(Gaze, 5.0)]), solo("b", &[(Gaze, 5.0)])];
        assert!(split_dataset(&two, 1.0, 0).is_err());
        assert!(split_dataset(&two, 0.0, 0).is_err());
    }

    #[test]
    fn report_serializes() {
        let data = vec![solo("s", &[(Gaze, 100.0), (Touch, 10.0)])];
        let report = train(&data, &ParameterSet::initial(), &TrainConfig::default()).unwrap();
        let text = report.to_toml_string();
        assert!(text.contains("[parameters.behaviors.Gaze]"), "{text}");
        assert!(text.contains("[occurrences]"), "{text}");
        let file: ReportFile = toml::from_str(&text).unwrap();
        assert_eq!(file.parameters, report.params);
    }
}
