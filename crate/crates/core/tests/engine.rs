mod common;

use common::{declining_params, gaussian, oracle, session};
use engage_core::{
    effective_slope, estimate_duration, gaussian_product, trajectory, Behavior, BehaviorInterval, InteractionSession,
    Method, ParameterSet, SlopeMode, UserRecord,
};
use proptest::prelude::*;

fn factor() -> impl Strategy<Value = (f64, f64)> {
    (-1.0f64..1.0, -6.0f64..0.0).prop_map(|(m, e)| (m, 10f64.powf(e)))
}

fn assert_matches_integration(factors: &[(f64, f64)]) {
    let params: Vec<_> = factors.iter().map(|&(m, v)| gaussian(m, v)).collect();
    let product = gaussian_product(&params).unwrap();
    let (mean, variance) = oracle::product_moments(factors, product.mean(), product.std_dev());
    let scale = product.mean().abs().max(product.std_dev());
    assert!(
        (mean - product.mean()).abs() <= 1e-6 * scale,
        "mean {} vs integrated {mean} for {factors:?}",
        product.mean()
    );
    assert!(
        (variance - product.variance()).abs() <= 1e-6 * product.variance(),
        "variance {} vs integrated {variance} for {factors:?}",
        product.variance()
    );
}

#[test]
fn product_of_two_opposed_factors() {
    let p = gaussian_product(&[gaussian(-0.02, 1e-4), gaussian(0.0, 1e-4)]).unwrap();
    assert!((p.mean() + 0.01).abs() < 1e-15);
    assert!((p.variance() - 5e-5).abs() < 1e-18);
    let (mean, variance) = oracle::product_moments(&[(-0.02, 1e-4), (0.0, 1e-4)], -0.01, 5e-5f64.sqrt());
    assert!((mean + 0.01).abs() < 1e-8);
    assert!((variance - 5e-5).abs() < 1e-8);
}

#[test]
fn empty_product_is_an_error() {
    assert!(gaussian_product(&[]).is_err());
}

fn session_of(users: Vec<UserRecord>) -> InteractionSession {
    InteractionSession::new("s", users)
}

#[test]
fn crossing_of_a_single_section() {
    for slope in [-0.01, -0.008, -0.0123, -0.5, -1e-3] {
        let params = ParameterSet::initial().with(Behavior::Touch, gaussian(slope, 1e-4));
        let s = session_of(vec![UserRecord::from_dwells("a", 3.0, &[(Behavior::Touch, 20.0)])]);
        let d = estimate_duration(&s, "a", &params, Method::Coupled).unwrap();
        assert!((d - (-1.0 / slope)).abs() <= 1e-12 * d.max(1.0), "{slope}: {d}");
    }
}

#[test]
fn dependent_slope_is_pulled_by_company() {
    let params = ParameterSet::initial()
        .with(Behavior::LookAround, gaussian(-0.02, 1e-4))
        .with(Behavior::TalkToRobot, gaussian(0.0, 1e-4));
    let e = effective_slope(Behavior::LookAround, &[Behavior::TalkToRobot], &params);
    assert!((e.mean() + 0.01).abs() < 1e-15);
    assert!((e.variance() - 5e-5).abs() < 1e-18);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn product_matches_numerical_integration(factors in prop::collection::vec(factor(), 1..=5)) {
        assert_matches_integration(&factors);
    }

    #[test]
    fn trace_is_continuous_and_affine(s in session(4, 6), params in declining_params(), method_on: bool) {
        let method = Method::from_dependence(method_on);
        for user in &s.users {
            let trace = trajectory(&s, &user.user_id, &params, method, SlopeMode::Mean).unwrap();
            let arrival = user.arrival();
            prop_assert_eq!(trace.breakpoints[0].time, arrival);
            prop_assert_eq!(trace.breakpoints[0].engagement, 1.0);
            let pieces: Vec<(f64, f64, f64)> = trace
                .sections
                .iter()
                .map(|ss| {
                    let end = if ss.section.open_ended { f64::INFINITY } else { ss.section.end - arrival };
                    (ss.section.start - arrival, end, ss.slope)
                })
                .collect();
            // every breakpoint sits on the directly evaluated path
            for b in &trace.breakpoints {
                let direct = oracle::engagement_direct(&pieces, b.time - arrival);
                prop_assert!((b.engagement - direct).abs() <= 1e-12, "{} vs {}", b.engagement, direct);
            }
            for k in 0..1000 {
                let t = arrival + trace.estimated_duration * (k as f64 + 0.5) / 1000.0;
                let interpolated = trace.engagement_at(t).unwrap();
                let direct = oracle::engagement_direct(&pieces, t - arrival);
                prop_assert!((interpolated - direct).abs() <= 1e-12, "t={}: {} vs {}", t, interpolated, direct);
            }
            if !trace.capped {
                prop_assert!(trace.breakpoints.last().unwrap().engagement.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn independent_targets_ignore_company(
        target in prop::sample::select(vec![Behavior::Gaze, Behavior::Pointing, Behavior::TalkToRobot, Behavior::Touch, Behavior::WaveHands]),
        co in prop::collection::vec(common::behavior(), 0..5),
        params in declining_params(),
    ) {
        prop_assert_eq!(effective_slope(target, &co, &params), params.get(target));
    }

    #[test]
    fn splitting_an_interval_changes_nothing(s in session(3, 5), params in declining_params(), pick: prop::sample::Index, frac in 0.05f64..0.95) {
        let u = pick.index(s.users.len());
        let user = &s.users[u];
        let i = pick.index(user.intervals.len());
        let iv = user.intervals[i];
        let cut = iv.start + (iv.end - iv.start) * frac;
        let mut intervals = user.intervals.clone();
        intervals.splice(i..=i, [BehaviorInterval::new(iv.behavior, iv.start, cut), BehaviorInterval::new(iv.behavior, cut, iv.end)]);
        let mut refined = s.clone();
        refined.users[u] = UserRecord::new(user.user_id.clone(), intervals);
        for method in [Method::Independent, Method::Coupled] {
            for target in &s.users {
                let a = estimate_duration(&s, &target.user_id, &params, method).unwrap();
                let b = estimate_duration(&refined, &target.user_id, &params, method).unwrap();
                prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn deterministic_and_seeded_traces_repeat(s in session(3, 4), params in declining_params(), seed: u64) {
        let id = &s.users[0].user_id;
        let a = trajectory(&s, id, &params, Method::Coupled, SlopeMode::Mean).unwrap();
        let b = trajectory(&s, id, &params, Method::Coupled, SlopeMode::Mean).unwrap();
        prop_assert_eq!(a, b);
        let c = trajectory(&s, id, &params, Method::Coupled, SlopeMode::Sampled { seed }).unwrap();
        let d = trajectory(&s, id, &params, Method::Coupled, SlopeMode::Sampled { seed }).unwrap();
        prop_assert_eq!(c, d);
    }
}
