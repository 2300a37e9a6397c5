//! Strategies and independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod analytic;
pub mod oracle;

use engage_core::{Behavior, GaussianParams, InteractionSession, ParameterSet, UserRecord};
use proptest::prelude::*;

pub fn behavior() -> impl Strategy<Value = Behavior> {
    (0..Behavior::COUNT).prop_map(|i| Behavior::ALL[i])
}

/// One user's (arrival, dwells) with dwell times on a quarter-second grid.
pub fn user_plan(max_intervals: usize) -> impl Strategy<Value = (f64, Vec<(Behavior, f64)>)> {
    (
        (0u32..80).prop_map(|q| f64::from(q) / 4.0),
        prop::collection::vec((behavior(), (4u32..160).prop_map(|q| f64::from(q) / 4.0)), 1..=max_intervals),
    )
}

pub fn session(max_users: usize, max_intervals: usize) -> impl Strategy<Value = InteractionSession> {
    prop::collection::vec(user_plan(max_intervals), 1..=max_users).prop_map(|plans| {
        let users = plans
            .iter()
            .enumerate()
            .map(|(u, (arrival, dwells))| UserRecord::from_dwells(format!("u{u}"), *arrival, dwells))
            .collect();
        InteractionSession::new("s", users)
    })
}

/// Parameter sets with every mean negative so crossings exist.
pub fn declining_params() -> impl Strategy<Value = ParameterSet> {
    prop::collection::vec((-0.08f64..-0.004, -9.0f64..-2.0), Behavior::COUNT).prop_map(|rows| {
        rows.iter().zip(Behavior::ALL).fold(ParameterSet::initial(), |p, (&(m, lv), b)| {
            p.with(b, GaussianParams::new(m, lv.exp()).unwrap())
        })
    })
}

pub fn gaussian(mean: f64, variance: f64) -> GaussianParams {
    GaussianParams::new(mean, variance).unwrap()
}
