//! Browser demo: runs allocation scenarios and map profiles in wasm and
//! hands JSON to a static page for plotting.
//!
//! Three entry points, all driven by the same config text the CLI reads:
//! [`run_scenario_json`] executes every `[protocol]` block and returns the
//! trajectories, [`oracle_json`] reports the centralized solution plus the
//! spectral/rate information, and [`map_profile_json`] samples a
//! nonlinearity with its classification for the map explorer.

use lapgrad::nonlinearity::{NonlinearMap, OperatingRange};
use lapgrad::protocol::{step_bound, Stepping};
use lapgrad::scenario::{self, parse_scenario, ScenarioInstance};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct RunOut {
    label: String,
    rate_note: String,
    time: Vec<f64>,
    residual: Vec<Option<f64>>,
    dispersion: Vec<f64>,
    sum_drift: Vec<f64>,
    states: Option<Vec<Vec<f64>>>,
    steps: u64,
    final_residual: Option<f64>,
    steady_state_residual: Option<f64>,
    chattering_amplitude: f64,
    max_sum_drift: f64,
    time_to_dispersion_threshold: Option<f64>,
}

#[derive(Serialize)]
struct CheckOut {
    name: String,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct OracleOut {
    psi_star: f64,
    f_star: f64,
    residual_kkt: f64,
    method: String,
    x_star: Vec<f64>,
    reserves: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ScenarioOut {
    name: String,
    n: usize,
    k: f64,
    phases: usize,
    oracle: OracleOut,
    runs: Vec<RunOut>,
    checks: Vec<CheckOut>,
}

fn oracle_out(instance: &ScenarioInstance) -> OracleOut {
    let oracle = &instance.oracle;
    let (x_star, reserves) = match &instance.stacked {
        Some(stacked) => {
            let (x, r) = stacked.split_solution(&oracle.x_star);
            (x, Some(r))
        }
        None => (oracle.x_star.clone(), None),
    };
    OracleOut {
        psi_star: oracle.psi_star,
        f_star: oracle.f_star,
        residual_kkt: oracle.residual_kkt,
        method: format!("{:?}", oracle.method),
        x_star,
        reserves,
    }
}

fn build(config: &str) -> Result<ScenarioInstance, JsError> {
    let spec = parse_scenario(config).map_err(|e| JsError::new(&e.to_string()))?;
    spec.build().map_err(|e| JsError::new(&e.to_string()))
}

/// Run every `[protocol]` block of a scenario config; returns the recorded
/// trajectories and summaries as JSON.
#[wasm_bindgen]
pub fn run_scenario_json(config: &str) -> Result<String, JsError> {
    let instance = build(config)?;
    let outcome = match instance.kind {
        scenario::ScenarioKind::Cpu => scenario::run_cpu_scenario(&instance),
        scenario::ScenarioKind::Dispatch => scenario::run_dispatch_scenario(&instance),
        scenario::ScenarioKind::Generic => scenario::run_scenario(&instance),
    }
    .map_err(|e| JsError::new(&e.to_string()))?;

    let runs = outcome
        .artifacts
        .iter()
        .map(|a| {
            let s = &a.record.summary;
            let states = a
                .record
                .samples
                .first()
                .and_then(|smp| smp.states.as_ref())
                .map(|_| {
                    a.record
                        .samples
                        .iter()
                        .filter_map(|smp| smp.states.clone())
                        .collect()
                });
            RunOut {
                label: a.label.clone(),
                rate_note: a.rate_note.clone(),
                time: a.record.samples.iter().map(|smp| smp.time).collect(),
                residual: a
                    .record
                    .samples
                    .iter()
                    .map(|smp| a.record.f_star.map(|f| smp.cost - f))
                    .collect(),
                dispersion: a
                    .record
                    .samples
                    .iter()
                    .map(|smp| smp.grad_dispersion)
                    .collect(),
                sum_drift: a.record.samples.iter().map(|smp| smp.sum_drift).collect(),
                states,
                steps: s.steps,
                final_residual: s.final_residual,
                steady_state_residual: s.steady_state_residual,
                chattering_amplitude: s.chattering_amplitude,
                max_sum_drift: s.max_sum_drift,
                time_to_dispersion_threshold: s.time_to_dispersion_threshold,
            }
        })
        .collect();
    let out = ScenarioOut {
        name: instance.name.clone(),
        n: instance.n(),
        k: instance.k,
        phases: instance.schedule.phases().len(),
        oracle: oracle_out(&instance),
        runs,
        checks: outcome
            .checks
            .iter()
            .map(|c| CheckOut {
                name: c.name.clone(),
                passed: c.passed,
                detail: c.detail.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[derive(Serialize)]
struct SpectralOut {
    lambda2: f64,
    lambda_n: f64,
    connected: bool,
}

#[derive(Serialize)]
struct RateOut {
    eta_max: f64,
    v: f64,
    u: f64,
    alpha_lo: f64,
    alpha_hi: f64,
    contraction_at_gain: Option<f64>,
    note: Option<String>,
}

#[derive(Serialize)]
struct OracleReport {
    name: String,
    n: usize,
    k: f64,
    oracle: OracleOut,
    union_spectrum: SpectralOut,
    rate: RateOut,
}

/// Centralized solution plus the union-graph spectrum and the step bound
/// for the first protocol block's active map.
#[wasm_bindgen]
pub fn oracle_json(config: &str) -> Result<String, JsError> {
    let instance = build(config)?;
    let union = instance
        .schedule
        .union_all()
        .map_err(|e| JsError::new(&e.to_string()))?;
    let spectrum = union
        .spectral_summary()
        .map_err(|e| JsError::new(&e.to_string()))?;
    let block = &instance.protocols[0];
    let active = if block.config.variant.uses_communication() {
        &block.config.communication
    } else {
        &block.config.actuation
    };
    let range = OperatingRange::symmetric(10.0).expect("valid range");
    let class = active.classify(&range);
    let center = instance.k / instance.n() as f64;
    let rate = match step_bound(
        &instance.costs,
        (center - 10.0, center + 10.0),
        &union,
        &class,
    ) {
        Ok(b) => {
            let gain = match block.config.stepping {
                Stepping::Discrete { gain, .. } => Some(gain),
                Stepping::Continuous { .. } => None,
            };
            RateOut {
                eta_max: b.eta_max,
                v: b.v,
                u: b.u,
                alpha_lo: b.alpha_lo,
                alpha_hi: b.alpha_hi,
                contraction_at_gain: gain.map(|g| b.contraction(g.min(b.eta_max))),
                note: None,
            }
        }
        Err(e) => RateOut {
            eta_max: f64::NAN,
            v: f64::NAN,
            u: f64::NAN,
            alpha_lo: f64::NAN,
            alpha_hi: f64::NAN,
            contraction_at_gain: None,
            note: Some(e.to_string()),
        },
    };
    let out = OracleReport {
        name: instance.name.clone(),
        n: instance.n(),
        k: instance.k,
        oracle: oracle_out(&instance),
        union_spectrum: SpectralOut {
            lambda2: spectrum.lambda2,
            lambda_n: spectrum.lambda_n,
            connected: union.is_connected(),
        },
        rate,
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[derive(Serialize)]
struct MapProfile {
    spec: String,
    z: Vec<f64>,
    h: Vec<f64>,
    odd: bool,
    sign_preserving: bool,
    strongly_sign_preserving: bool,
    lipschitz: bool,
    sector_lower: Option<f64>,
    sector_upper: Option<f64>,
}

/// Sample `h(z)` on `[-z_max, z_max]` with its classification, for drawing
/// the map against its sector cone.
#[wasm_bindgen]
pub fn map_profile_json(map_spec: &str, z_max: f64, points: u32) -> Result<String, JsError> {
    let map = NonlinearMap::parse(map_spec).map_err(|e| JsError::new(&e.to_string()))?;
    let range = OperatingRange::symmetric(z_max).map_err(|e| JsError::new(&e.to_string()))?;
    let class = map.classify(&range);
    let points = points.clamp(16, 20_000) as usize;
    let mut z = Vec::with_capacity(points);
    let mut h = Vec::with_capacity(points);
    for i in 0..points {
        let zi = -z_max + 2.0 * z_max * i as f64 / (points - 1) as f64;
        z.push(zi);
        h.push(map.apply(zi));
    }
    let out = MapProfile {
        spec: map.spec_string(),
        z,
        h,
        odd: class.odd,
        sign_preserving: class.sign_preserving,
        strongly_sign_preserving: class.strongly_sign_preserving,
        lipschitz: class.lipschitz,
        sector_lower: class.sector.map(|s| s.lower),
        sector_upper: class
            .sector
            .and_then(|s| s.upper.is_finite().then_some(s.upper)),
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}
