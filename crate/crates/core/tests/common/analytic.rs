//! Chain-rule gradient of the negative log-likelihood with respect to the
//! behavior means, built from traces rather than finite differences.

use engage_core::{trajectory, Behavior, InteractionSession, Method, ParameterSet, SlopeMode};

/// d(NLL)/d(mean) per behavior, in table order. Users whose estimate is
/// capped contribute nothing (their estimate is locally constant).
pub fn mean_gradient(dataset: &[InteractionSession], params: &ParameterSet, method: Method) -> [f64; Behavior::COUNT] {
    let mut grad = [0.0; Behavior::COUNT];
    for session in dataset {
        for user in &session.users {
            let trace = trajectory(session, &user.user_id, params, method, SlopeMode::Mean).unwrap();
            if trace.capped {
                continue;
            }
            let observed = user.observed_duration;
            let sigma = params.alpha() * observed;
            let residual = trace.estimated_duration - observed;
            let crossing = user.arrival() + trace.estimated_duration;
            let crossing_slope = trace.sections.last().unwrap().slope;
            let n = trace.sections.len();
            // EL(crossing) = 0 with EL linear in every applied slope
            for (k, s) in trace.sections.iter().enumerate() {
                let end = if k + 1 == n { crossing } else { s.section.end };
                let dt_da = -(end - s.section.start) / crossing_slope;
                // slope as a precision-weighted mean of its factors
                let coupled = method == Method::Coupled
                    && s.section.target_behavior.is_dependent()
                    && !s.section.co_behaviors.is_empty();
                let factors: Vec<Behavior> = if coupled {
                    std::iter::once(s.section.target_behavior).chain(s.section.co_behaviors.iter().copied()).collect()
                } else {
                    vec![s.section.target_behavior]
                };
                let total: f64 = factors.iter().map(|&b| 1.0 / params.get(b).variance()).sum();
                for &b in &factors {
                    let da_dmean = (1.0 / params.get(b).variance()) / total;
                    grad[b.index()] += residual / (sigma * sigma) * dt_da * da_dmean;
                }
            }
        }
    }
    grad
}
