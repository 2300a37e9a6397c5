//! Piecewise-linear engagement trajectories.
//!
//! Engagement starts at 1 on arrival and changes linearly within each
//! section at that section's slope. The estimated interaction duration is the
//! first time engagement reaches 0, capped at the parameter set's `t_max`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::behavior::{Behavior, GaussianParams, ParameterSet};
use crate::error::{Error, Result};
use crate::timeline::{InteractionSession, Section};

/// Whether dependent behaviors are coupled to co-present users' behaviors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Every behavior uses its own slope distribution ("method 1").
    Independent,
    /// Dependent behaviors multiply in co-users' distributions ("method 2").
    Coupled,
}

impl Method {
    pub fn from_dependence(enabled: bool) -> Self {
        if enabled {
            Method::Coupled
        } else {
            Method::Independent
        }
    }

    pub fn dependence_enabled(self) -> bool {
        self == Method::Coupled
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Independent => "method 1",
            Method::Coupled => "method 2",
        }
    }
}

/// How the applied slope of each section is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeMode {
    /// Use the mean of the effective distribution.
    Mean,
    /// Draw from the effective distribution with a seeded generator.
    Sampled { seed: u64 },
}

/// Normalized product of Gaussian densities: precisions add and the mean is
/// the precision-weighted average of the factor means.
pub fn gaussian_product(factors: &[GaussianParams]) -> Result<GaussianParams> {
    if factors.is_empty() {
        return Err(Error::EmptyProduct);
    }
    if let [single] = factors {
        return Ok(*single);
    }
    let (precision, weighted) = factors.iter().fold((0.0, 0.0), |(p, w), g| {
        let pi = g.precision();
        (p + pi, w + pi * g.mean())
    });
    Ok(GaussianParams::new_unchecked(weighted / precision, 1.0 / precision))
}

/// Slope distribution of `target` while co-present users perform `co_behaviors`.
///
/// Independent behaviors, and dependent ones without company, keep their own
/// distribution.
pub fn effective_slope(target: Behavior, co_behaviors: &[Behavior], params: &ParameterSet) -> GaussianParams {
    let own = params.get(target);
    if !target.is_dependent() || co_behaviors.is_empty() {
        return own;
    }
    let mut factors = Vec::with_capacity(co_behaviors.len() + 1);
    factors.push(own);
    factors.extend(co_behaviors.iter().map(|&b| params.get(b)));
    gaussian_product(&factors).expect("factor list is non-empty")
}

pub(crate) fn section_slope(section: &Section, params: &ParameterSet, method: Method) -> GaussianParams {
    match method {
        Method::Independent => params.get(section.target_behavior),
        Method::Coupled => effective_slope(section.target_behavior, &section.co_behaviors, params),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakpoint {
    pub time: f64,
    pub engagement: f64,
    /// Section the path leaves this point in; the final point carries the
    /// section it closes.
    pub section: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionSlope {
    pub section: Section,
    pub effective: GaussianParams,
    /// Slope actually applied in the section.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngagementTrace {
    pub breakpoints: Vec<Breakpoint>,
    pub sections: Vec<SectionSlope>,
    /// Seconds from arrival to the first zero of engagement, or `t_max`.
    pub estimated_duration: f64,
    pub capped: bool,
}

impl EngagementTrace {
    pub fn arrival(&self) -> f64 {
        self.breakpoints[0].time
    }

    /// Engagement at absolute time `t`, interpolated from the breakpoints.
    /// `None` outside the traced span.
    pub fn engagement_at(&self, t: f64) -> Option<f64> {
        let idx = self.breakpoints.partition_point(|b| b.time <= t);
        if idx == 0 {
            return None;
        }
        let left = self.breakpoints[idx - 1];
        if idx == self.breakpoints.len() {
            return (t == left.time).then_some(left.engagement);
        }
        let slope = self.slope_of(left.section);
        Some(left.engagement + slope * (t - left.time))
    }

    fn slope_of(&self, section: usize) -> f64 {
        self.sections
            .iter()
            .find(|s| s.section.index == section)
            .map_or(0.0, |s| s.slope)
    }

    pub fn to_csv_string(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for bp in &self.breakpoints {
            let sec = self
                .sections
                .iter()
                .find(|s| s.section.index == bp.section)
                .expect("breakpoints reference traced sections");
            writer
                .serialize(TraceRow {
                    time: bp.time,
                    engagement: bp.engagement,
                    section: bp.section,
                    behavior: sec.section.target_behavior,
                    slope_mean: sec.effective.mean(),
                    slope_variance: sec.effective.variance(),
                    slope: sec.slope,
                })
                .expect("in-memory csv write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// One row of the breakpoint export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub engagement: f64,
    pub section: usize,
    pub behavior: Behavior,
    pub slope_mean: f64,
    pub slope_variance: f64,
    pub slope: f64,
}

/// Walks the sections from engagement 1 and stops at the first zero or at the
/// cap. `slope_of` supplies each section's applied slope; `visit` receives
/// every breakpoint as `(offset from arrival, engagement, section position)`.
/// Returns `(duration, capped)`.
fn integrate(
    arrival: f64,
    t_max: f64,
    sections: &[Section],
    mut slope_of: impl FnMut(usize, &Section) -> f64,
    mut visit: impl FnMut(f64, f64, usize),
) -> (f64, bool) {
    let mut el = 1.0;
    let last = sections.len().saturating_sub(1);
    for (k, section) in sections.iter().enumerate() {
        let slope = slope_of(k, section);
        let start = section.start - arrival;
        let end = if section.open_ended || k == last {
            f64::INFINITY
        } else {
            section.end - arrival
        };
        if slope < 0.0 {
            let crossing = start + el / -slope;
            if crossing <= end && crossing <= t_max {
                visit(crossing, 0.0, k);
                return (crossing, false);
            }
        }
        if end >= t_max {
            visit(t_max, el + slope * (t_max - start), k);
            return (t_max, true);
        }
        el += slope * (end - start);
        visit(end, el, k + 1);
    }
    (t_max, true)
}

/// Duration estimate from pre-segmented sections using mean slopes.
pub(crate) fn duration_of_sections(
    arrival: f64,
    sections: &[Section],
    params: &ParameterSet,
    method: Method,
) -> (f64, bool) {
    integrate(
        arrival,
        params.t_max(),
        sections,
        |_, s| section_slope(s, params, method).mean(),
        |_, _, _| {},
    )
}

/// Full engagement trace over already segmented sections.
pub fn trace_sections(
    arrival: f64,
    sections: &[Section],
    params: &ParameterSet,
    method: Method,
    mode: SlopeMode,
) -> EngagementTrace {
    let mut rng = match mode {
        SlopeMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        SlopeMode::Mean => None,
    };
    let mut slopes = Vec::with_capacity(sections.len());
    let mut points = vec![(0.0, 1.0, 0usize)];
    let (estimated_duration, capped) = integrate(
        arrival,
        params.t_max(),
        sections,
        |_, section| {
            let effective = section_slope(section, params, method);
            let slope = match rng.as_mut() {
                Some(rng) => Normal::new(effective.mean(), effective.std_dev())
                    .expect("validated variance")
                    .sample(rng),
                None => effective.mean(),
            };
            slopes.push(SectionSlope {
                section: section.clone(),
                effective,
                slope,
            });
            slope
        },
        |offset, engagement, k| points.push((offset, engagement, k)),
    );
    // Section-end points name the following section, which is never traced
    // when the path stops exactly there.
    let traced = slopes.len().max(1);
    let breakpoints = points
        .into_iter()
        .map(|(offset, engagement, k)| Breakpoint {
            time: arrival + offset,
            engagement,
            section: sections.get(k.min(traced - 1)).map_or(1, |s| s.index),
        })
        .collect();
    EngagementTrace {
        breakpoints,
        sections: slopes,
        estimated_duration,
        capped,
    }
}

/// Engagement trace of one user in a session.
pub fn trajectory(
    session: &InteractionSession,
    target: &str,
    params: &ParameterSet,
    method: Method,
    mode: SlopeMode,
) -> Result<EngagementTrace> {
    let sections = session.segment(target)?;
    let arrival = session.user(target).expect("segment checked the user").arrival();
    Ok(trace_sections(arrival, &sections, params, method, mode))
}

/// Deterministic duration estimate for one user.
pub fn estimate_duration(
    session: &InteractionSession,
    target: &str,
    params: &ParameterSet,
    method: Method,
) -> Result<f64> {
    let sections = session.segment(target)?;
    let arrival = session.user(target).expect("segment checked the user").arrival();
    Ok(duration_of_sections(arrival, &sections, params, method).0)
}
