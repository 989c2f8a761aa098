//! The solver engine: discrete-time steppers and continuous-time integrators
//! for the Laplacian-gradient allocation protocols, with per-step feasibility
//! accounting and rate-bound instrumentation.
//!
//! Discrete-time updates take the form
//!
//! ```text
//! x_i(k+1) = x_i(k) + η̄ Σ_{j∈N_i} W_ji · h_a(∂f_j − ∂f_i)        (actuation)
//! x_i(k+1) = x_i(k) + η̄ Σ_{j∈N_i} W_ji · (h_c(∂f_j) − h_c(∂f_i))  (communication)
//! ```
//!
//! with all gradients evaluated at the current state (synchronous update);
//! the continuous-time variants integrate the same right-hand side. Odd maps
//! over symmetric links make every pairwise exchange antisymmetric, so the
//! sum `Σ x_i` is conserved to rounding no matter which nonlinearity runs.

use crate::cost::{self, CostModel, CurvatureBounds};
use crate::network::{NetworkError, Topology, TopologySchedule};
use crate::nonlinearity::{MapClassification, MapError, NonlinearMap};
use crate::oracle::OracleSolution;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("variant {variant} is {kind}-time but the stepping config is not")]
    SteppingMismatch {
        variant: &'static str,
        kind: &'static str,
    },
    #[error("the {slot} map slot is unused by this variant and must be identity")]
    UnusedMapNotIdentity { slot: &'static str },
    #[error("step gain must be positive and finite, got {0}")]
    BadGain(f64),
    #[error("integrator time-step must be positive and finite, got {0}")]
    BadDt(f64),
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("state has {got} agents but the network has {expected}")]
    StateSizeMismatch { expected: usize, got: usize },
    #[error("there are {got} cost models but {expected} agents")]
    CostSizeMismatch { expected: usize, got: usize },
    #[error("infeasible initialization: Σx(0) − K = {gap:e} exceeds tolerance {tol:e}")]
    InfeasibleInitialization { gap: f64, tol: f64 },
    #[error("diverged at step {step}: agent {agent} reached {value:e}")]
    Diverged { step: u64, agent: usize, value: f64 },
    #[error("phase {phase} dwell {dwell} is not a whole multiple of the step unit {unit}")]
    DwellNotMultiple { phase: usize, dwell: f64, unit: f64 },
    #[error("time-step {dt} exceeds phase {phase} dwell {dwell}")]
    DtExceedsDwell { phase: usize, dwell: f64, dt: f64 },
    #[error("horizon of {horizon_steps} steps runs past the non-cyclic schedule ({available} steps)")]
    HorizonBeyondSchedule { horizon_steps: u64, available: u64 },
    #[error("no convergence-rate guarantee applies: {0}")]
    NoRateGuarantee(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Cost(#[from] crate::cost::CostError),
}

/// Which dynamics run. The `Linear` variants are the identity-map baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolVariant {
    DtLinear,
    DtActuation,
    DtCommunication,
    CtLinear,
    CtActuation,
    CtCommunication,
}

impl ProtocolVariant {
    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            Self::DtLinear | Self::DtActuation | Self::DtCommunication
        )
    }

    pub fn uses_actuation(&self) -> bool {
        matches!(self, Self::DtActuation | Self::CtActuation)
    }

    pub fn uses_communication(&self) -> bool {
        matches!(self, Self::DtCommunication | Self::CtCommunication)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::DtLinear => "dt-linear",
            Self::DtActuation => "dt-actuation",
            Self::DtCommunication => "dt-communication",
            Self::CtLinear => "ct-linear",
            Self::CtActuation => "ct-actuation",
            Self::CtCommunication => "ct-communication",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "dt-linear" => Self::DtLinear,
            "dt-actuation" => Self::DtActuation,
            "dt-communication" => Self::DtCommunication,
            "ct-linear" => Self::CtLinear,
            "ct-actuation" => Self::CtActuation,
            "ct-communication" => Self::CtCommunication,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    /// Explicit Euler; with step `dt` it reproduces the discrete protocol at
    /// `η̄ = η·dt` bit for bit. Preferred for discontinuous (μ = 0) fields.
    Euler,
    /// Classic fourth-order Runge–Kutta; the topology is held fixed within
    /// each step (sampled at the step start).
    Rk4,
}

/// Step-size and horizon: `η̄`/steps for discrete time, `η`/`dt`/final time
/// for continuous time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepping {
    Discrete {
        gain: f64,
        steps: u64,
    },
    Continuous {
        gain: f64,
        dt: f64,
        t_final: f64,
        integrator: Integrator,
    },
}

impl Stepping {
    pub fn gain(&self) -> f64 {
        match self {
            Self::Discrete { gain, .. } | Self::Continuous { gain, .. } => *gain,
        }
    }
}

/// What the runner records.
#[derive(Debug, Clone, Copy)]
pub struct RecordingOptions {
    /// Keep every `stride`-th sample (the final state is always kept).
    pub stride: u64,
    /// Include per-agent states in the samples.
    pub states: bool,
}

impl Default for RecordingOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            states: false,
        }
    }
}

/// Convergence bookkeeping thresholds; both are configurable per scenario.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    /// Relative residual threshold: converged when
    /// `F(x) − F* < residual·(1 + |F*|)`.
    pub residual: f64,
    /// Absolute gradient-dispersion threshold.
    pub dispersion: f64,
    /// Stop the run early once the residual threshold is met (needs an
    /// oracle solution).
    pub stop_on_residual: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            residual: 1e-6,
            dispersion: 1e-3,
            stop_on_residual: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub variant: ProtocolVariant,
    pub stepping: Stepping,
    pub actuation: NonlinearMap,
    pub communication: NonlinearMap,
    pub recording: RecordingOptions,
    pub thresholds: Thresholds,
}

impl ProtocolConfig {
    /// A linear discrete-time baseline.
    pub fn dt_linear(gain: f64, steps: u64) -> Self {
        Self {
            variant: ProtocolVariant::DtLinear,
            stepping: Stepping::Discrete { gain, steps },
            actuation: NonlinearMap::Identity,
            communication: NonlinearMap::Identity,
            recording: RecordingOptions::default(),
            thresholds: Thresholds::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.actuation.validate()?;
        self.communication.validate()?;
        match (&self.stepping, self.variant.is_discrete()) {
            (Stepping::Discrete { gain, steps }, true) => {
                if !gain.is_finite() || *gain <= 0.0 {
                    return Err(ProtocolError::BadGain(*gain));
                }
                if *steps == 0 {
                    return Err(ProtocolError::BadHorizon(0.0));
                }
            }
            (
                Stepping::Continuous {
                    gain, dt, t_final, ..
                },
                false,
            ) => {
                if !gain.is_finite() || *gain <= 0.0 {
                    return Err(ProtocolError::BadGain(*gain));
                }
                if !dt.is_finite() || *dt <= 0.0 {
                    return Err(ProtocolError::BadDt(*dt));
                }
                if !t_final.is_finite() || *t_final <= 0.0 {
                    return Err(ProtocolError::BadHorizon(*t_final));
                }
            }
            _ => {
                return Err(ProtocolError::SteppingMismatch {
                    variant: self.variant.name(),
                    kind: if self.variant.is_discrete() {
                        "discrete"
                    } else {
                        "continuous"
                    },
                })
            }
        }
        if !self.variant.uses_actuation() && !self.actuation.is_identity() {
            return Err(ProtocolError::UnusedMapNotIdentity { slot: "actuation" });
        }
        if !self.variant.uses_communication() && !self.communication.is_identity() {
            return Err(ProtocolError::UnusedMapNotIdentity {
                slot: "communication",
            });
        }
        Ok(())
    }
}

/// The allocation vector plus step/time bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vec<f64>,
    pub step: u64,
    pub time: f64,
}

impl AgentState {
    pub fn new(x: Vec<f64>) -> Self {
        Self {
            x,
            step: 0,
            time: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn sum(&self) -> f64 {
        self.x.iter().sum()
    }
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub step: u64,
    pub time: f64,
    pub cost: f64,
    pub sum_drift: f64,
    pub grad_dispersion: f64,
    pub states: Option<Vec<f64>>,
}

/// Post-run statistics; the window statistics cover the final 10% of the
/// horizon (at least 100 steps).
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: u64,
    pub final_time: f64,
    pub stopped_early: bool,
    /// First step with `F − F* < residual_threshold·(1+|F*|)`.
    pub steps_to_residual_threshold: Option<u64>,
    /// First instant with gradient dispersion below the threshold.
    pub time_to_dispersion_threshold: Option<f64>,
    /// Mean residual over the final window (needs `F*`).
    pub steady_state_residual: Option<f64>,
    pub steady_state_cost: f64,
    /// `max − min` of the total cost over the final window.
    pub chattering_amplitude: f64,
    pub max_sum_drift: f64,
    pub final_residual: Option<f64>,
    pub final_dispersion: f64,
    /// Largest `(F(k+T) − F*)/(F(k) − F*)` across the run for cyclic
    /// schedules with period `T` steps.
    pub windowed_rate_max: Option<f64>,
}

impl RunSummary {
    /// Structured text block, one `key: value` per line.
    pub fn to_text_block(&self) -> String {
        let fmt_opt = |v: &Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:e}"));
        let mut s = String::new();
        s.push_str(&format!("steps: {}\n", self.steps));
        s.push_str(&format!("final_time: {}\n", self.final_time));
        s.push_str(&format!("stopped_early: {}\n", self.stopped_early));
        s.push_str(&format!(
            "steps_to_residual_threshold: {}\n",
            self.steps_to_residual_threshold
                .map_or("n/a".to_string(), |v| v.to_string())
        ));
        s.push_str(&format!(
            "time_to_dispersion_threshold: {}\n",
            fmt_opt(&self.time_to_dispersion_threshold)
        ));
        s.push_str(&format!(
            "steady_state_residual: {}\n",
            fmt_opt(&self.steady_state_residual)
        ));
        s.push_str(&format!("steady_state_cost: {:e}\n", self.steady_state_cost));
        s.push_str(&format!(
            "chattering_amplitude: {:e}\n",
            self.chattering_amplitude
        ));
        s.push_str(&format!("max_sum_drift: {:e}\n", self.max_sum_drift));
        s.push_str(&format!(
            "final_residual: {}\n",
            fmt_opt(&self.final_residual)
        ));
        s.push_str(&format!("final_dispersion: {:e}\n", self.final_dispersion));
        s.push_str(&format!(
            "windowed_rate_max: {}\n",
            fmt_opt(&self.windowed_rate_max)
        ));
        s
    }
}

/// A full recorded run: thinned samples for plotting plus unthinned per-step
/// metric histories for analysis.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajectorySample>,
    pub f_star: Option<f64>,
    pub target_sum: f64,
    /// Duration of one step: `1` for discrete runs, `dt` for continuous.
    pub step_unit: f64,
    pub summary: RunSummary,
    pub cost_history: Vec<f64>,
    pub sum_drift_history: Vec<f64>,
    pub dispersion_history: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn residual(&self, step: usize) -> Option<f64> {
        self.f_star.map(|f| self.cost_history[step] - f)
    }

    /// CSV with columns `step,time,residual,sum_drift,grad_dispersion` plus
    /// one `x{i}` column per agent when states were recorded. The residual
    /// column is empty when no oracle value is available.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("step,time,residual,sum_drift,grad_dispersion");
        if let Some(s) = self.samples.first().and_then(|s| s.states.as_ref()) {
            for i in 0..s.len() {
                out.push_str(&format!(",x{i}"));
            }
        }
        out.push('\n');
        for s in &self.samples {
            let residual = self
                .f_star
                .map_or(String::new(), |f| format!("{:e}", s.cost - f));
            out.push_str(&format!(
                "{},{},{},{:e},{:e}",
                s.step, s.time, residual, s.sum_drift, s.grad_dispersion
            ));
            if let Some(states) = &s.states {
                for x in states {
                    out.push_str(&format!(",{x}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Shared right-hand side: writes `gain · Σ_j W_ji · h(...)` into `out`.
///
/// The communication form applies `h_c` to each gradient once and exchanges
/// differences of the mapped values; the actuation form maps the difference
/// itself. Neighbor sums run in ascending-j order so trajectories are
/// bit-reproducible.
fn laplacian_gradient_field(
    topology: &Topology,
    grads: &[f64],
    config: &ProtocolConfig,
    gain: f64,
    scratch: &mut Vec<f64>,
    out: &mut [f64],
) {
    let n = topology.n();
    if config.variant.uses_communication() {
        scratch.clear();
        scratch.extend(grads.iter().map(|&g| config.communication.apply(g)));
        for i in 0..n {
            let mut acc = 0.0;
            for &(j, w) in topology.neighbors(i) {
                acc += w * (scratch[j] - scratch[i]);
            }
            out[i] = gain * acc;
        }
    } else {
        // actuation form; the linear variants take this path with identity
        for i in 0..n {
            let mut acc = 0.0;
            for &(j, w) in topology.neighbors(i) {
                acc += w * config.actuation.apply(grads[j] - grads[i]);
            }
            out[i] = gain * acc;
        }
    }
}

fn check_finite(x: &[f64], step: u64) -> Result<(), ProtocolError> {
    for (agent, &v) in x.iter().enumerate() {
        if !v.is_finite() || v.abs() > 1e12 {
            return Err(ProtocolError::Diverged {
                step,
                agent,
                value: v,
            });
        }
    }
    Ok(())
}

/// One synchronous discrete-time update. Equal gradients are an exact fixed
/// point (`h(0) = 0` for every map).
pub fn dt_step(
    state: &AgentState,
    topology: &Topology,
    costs: &[CostModel],
    config: &ProtocolConfig,
) -> Result<AgentState, ProtocolError> {
    config.validate()?;
    let Stepping::Discrete { gain, .. } = config.stepping else {
        return Err(ProtocolError::SteppingMismatch {
            variant: config.variant.name(),
            kind: "discrete",
        });
    };
    let n = topology.n();
    if state.n() != n {
        return Err(ProtocolError::StateSizeMismatch {
            expected: n,
            got: state.n(),
        });
    }
    if costs.len() != n {
        return Err(ProtocolError::CostSizeMismatch {
            expected: n,
            got: costs.len(),
        });
    }
    let mut grads = Vec::with_capacity(n);
    cost::gradients(costs, &state.x, &mut grads);
    let mut delta = vec![0.0; n];
    let mut scratch = Vec::new();
    laplacian_gradient_field(topology, &grads, config, gain, &mut scratch, &mut delta);
    let x: Vec<f64> = state.x.iter().zip(&delta).map(|(xi, d)| xi + d).collect();
    check_finite(&x, state.step + 1)?;
    Ok(AgentState {
        x,
        step: state.step + 1,
        time: state.time + 1.0,
    })
}

/// Iterates the schedule one protocol step at a time, honoring per-cycle
/// phase permutations. Phase changes land exactly on step boundaries, which
/// is why dwells must be whole multiples of the step unit.
struct ScheduleCursor<'a> {
    schedule: &'a TopologySchedule,
    steps_per_phase: Vec<u64>,
    cycle: u64,
    order: Vec<usize>,
    slot: usize,
    remaining: u64,
}

impl<'a> ScheduleCursor<'a> {
    fn new(schedule: &'a TopologySchedule, unit: f64) -> Result<Self, ProtocolError> {
        let mut steps_per_phase = Vec::with_capacity(schedule.phases().len());
        for (phase, p) in schedule.phases().iter().enumerate() {
            if unit > p.dwell * (1.0 + 1e-9) {
                return Err(ProtocolError::DtExceedsDwell {
                    phase,
                    dwell: p.dwell,
                    dt: unit,
                });
            }
            let ratio = p.dwell / unit;
            let rounded = ratio.round();
            if (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) || rounded < 1.0 {
                return Err(ProtocolError::DwellNotMultiple {
                    phase,
                    dwell: p.dwell,
                    unit,
                });
            }
            steps_per_phase.push(rounded as u64);
        }
        let order = schedule.phase_order(0);
        let remaining = steps_per_phase[order[0]];
        Ok(Self {
            schedule,
            steps_per_phase,
            cycle: 0,
            order,
            slot: 0,
            remaining,
        })
    }

    fn steps_per_cycle(&self) -> u64 {
        self.steps_per_phase.iter().sum()
    }

    fn topology(&self) -> &'a Topology {
        &self.schedule.phases()[self.order[self.slot]].topology
    }

    fn advance(&mut self) {
        self.remaining -= 1;
        if self.remaining == 0 {
            self.slot += 1;
            if self.slot == self.order.len() {
                self.cycle += 1;
                self.order = self.schedule.phase_order(self.cycle);
                self.slot = 0;
            }
            self.remaining = self.steps_per_phase[self.order[self.slot]];
        }
    }
}

/// Drive a full run: steps or integrates to the horizon, records metrics,
/// and assembles the summary.
///
/// The initialization must already satisfy `Σ x_i(0) = K`; the dynamics
/// preserve feasibility but cannot create it.
pub fn run(
    initial: &AgentState,
    schedule: &TopologySchedule,
    costs: &[CostModel],
    config: &ProtocolConfig,
    target_sum: f64,
    oracle: Option<&OracleSolution>,
) -> Result<TrajectoryRecord, ProtocolError> {
    config.validate()?;
    let n = schedule.n();
    if initial.n() != n {
        return Err(ProtocolError::StateSizeMismatch {
            expected: n,
            got: initial.n(),
        });
    }
    if costs.len() != n {
        return Err(ProtocolError::CostSizeMismatch {
            expected: n,
            got: costs.len(),
        });
    }
    let feas_tol = 1e-9 * (1.0 + target_sum.abs());
    let gap = initial.sum() - target_sum;
    if gap.abs() > feas_tol {
        return Err(ProtocolError::InfeasibleInitialization { gap, tol: feas_tol });
    }

    let (unit, total_steps, integrator, gain) = match config.stepping {
        Stepping::Discrete { gain, steps } => (1.0, steps, Integrator::Euler, gain),
        Stepping::Continuous {
            gain,
            dt,
            t_final,
            integrator,
        } => {
            let steps = (t_final / dt - 1e-9).ceil().max(1.0) as u64;
            (dt, steps, integrator, gain)
        }
    };
    let mut cursor = ScheduleCursor::new(schedule, unit)?;
    if !schedule.cyclic() {
        let available = cursor.steps_per_cycle();
        if total_steps > available {
            return Err(ProtocolError::HorizonBeyondSchedule {
                horizon_steps: total_steps,
                available,
            });
        }
    }
    let f_star = oracle.map(|o| o.f_star);
    let residual_stop = if config.thresholds.stop_on_residual {
        f_star.map(|f| config.thresholds.residual * (1.0 + f.abs()))
    } else {
        None
    };

    // Euler on the shared kernel with effective gain η·dt reproduces the
    // discrete update bit for bit.
    let effective_gain = match config.stepping {
        Stepping::Discrete { gain, .. } => gain,
        Stepping::Continuous { gain, dt, .. } => gain * dt,
    };

    let steps_usize = usize::try_from(total_steps).expect("horizon fits in usize");
    let mut cost_history = Vec::with_capacity(steps_usize + 1);
    let mut sum_drift_history = Vec::with_capacity(steps_usize + 1);
    let mut dispersion_history = Vec::with_capacity(steps_usize + 1);
    let mut samples = Vec::new();

    let mut x = initial.x.clone();
    let mut grads = Vec::with_capacity(n);
    let mut scratch = Vec::new();
    let mut delta = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];

    let record_metrics =
        |x: &[f64], ch: &mut Vec<f64>, sh: &mut Vec<f64>, dh: &mut Vec<f64>| {
            ch.push(cost::total_cost(costs, x));
            sh.push(x.iter().sum::<f64>() - target_sum);
            dh.push(cost::gradient_dispersion(costs, x));
        };

    let mut stopped_early = false;
    let mut step: u64 = 0;
    record_metrics(
        &x,
        &mut cost_history,
        &mut sum_drift_history,
        &mut dispersion_history,
    );
    push_sample(
        &mut samples,
        &config.recording,
        0,
        unit,
        &x,
        &cost_history,
        &sum_drift_history,
        &dispersion_history,
    );

    while step < total_steps {
        if let (Some(stop), Some(f)) = (residual_stop, f_star) {
            if cost_history[step as usize] - f < stop {
                stopped_early = true;
                break;
            }
        }
        let topology = cursor.topology();
        match integrator {
            Integrator::Euler => {
                cost::gradients(costs, &x, &mut grads);
                laplacian_gradient_field(
                    topology,
                    &grads,
                    config,
                    effective_gain,
                    &mut scratch,
                    &mut delta,
                );
                for (xi, d) in x.iter_mut().zip(&delta) {
                    *xi += d;
                }
            }
            Integrator::Rk4 => {
                let dt = unit;
                let field = |y: &[f64],
                             out: &mut [f64],
                             grads: &mut Vec<f64>,
                             scratch: &mut Vec<f64>| {
                    cost::gradients(costs, y, grads);
                    laplacian_gradient_field(topology, grads, config, gain, scratch, out);
                };
                field(&x, &mut k1, &mut grads, &mut scratch);
                for i in 0..n {
                    stage[i] = x[i] + 0.5 * dt * k1[i];
                }
                field(&stage, &mut k2, &mut grads, &mut scratch);
                for i in 0..n {
                    stage[i] = x[i] + 0.5 * dt * k2[i];
                }
                field(&stage, &mut k3, &mut grads, &mut scratch);
                for i in 0..n {
                    stage[i] = x[i] + dt * k3[i];
                }
                field(&stage, &mut k4, &mut grads, &mut scratch);
                for i in 0..n {
                    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        step += 1;
        check_finite(&x, step)?;
        cursor.advance();
        record_metrics(
            &x,
            &mut cost_history,
            &mut sum_drift_history,
            &mut dispersion_history,
        );
        push_sample(
            &mut samples,
            &config.recording,
            step,
            unit,
            &x,
            &cost_history,
            &sum_drift_history,
            &dispersion_history,
        );
    }

    // The last state is always sampled.
    if samples.last().map(|s| s.step) != Some(step) {
        force_sample(
            &mut samples,
            &config.recording,
            step,
            unit,
            &x,
            &cost_history,
            &sum_drift_history,
            &dispersion_history,
        );
    }

    let period_steps = if schedule.cyclic() && schedule.phases().len() > 1 {
        Some(cursor.steps_per_cycle())
    } else {
        None
    };
    let summary = summarize(
        &cost_history,
        &sum_drift_history,
        &dispersion_history,
        f_star,
        unit,
        total_steps,
        stopped_early,
        &config.thresholds,
        period_steps,
    );
    Ok(TrajectoryRecord {
        samples,
        f_star,
        target_sum,
        step_unit: unit,
        summary,
        cost_history,
        sum_drift_history,
        dispersion_history,
    })
}

#[allow(clippy::too_many_arguments)]
fn push_sample(
    samples: &mut Vec<TrajectorySample>,
    recording: &RecordingOptions,
    step: u64,
    unit: f64,
    x: &[f64],
    cost_history: &[f64],
    sum_drift_history: &[f64],
    dispersion_history: &[f64],
) {
    if step % recording.stride.max(1) != 0 {
        return;
    }
    force_sample(
        samples,
        recording,
        step,
        unit,
        x,
        cost_history,
        sum_drift_history,
        dispersion_history,
    );
}

#[allow(clippy::too_many_arguments)]
fn force_sample(
    samples: &mut Vec<TrajectorySample>,
    recording: &RecordingOptions,
    step: u64,
    unit: f64,
    x: &[f64],
    cost_history: &[f64],
    sum_drift_history: &[f64],
    dispersion_history: &[f64],
) {
    let idx = step as usize;
    samples.push(TrajectorySample {
        step,
        time: step as f64 * unit,
        cost: cost_history[idx],
        sum_drift: sum_drift_history[idx],
        grad_dispersion: dispersion_history[idx],
        states: recording.states.then(|| x.to_vec()),
    });
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    cost_history: &[f64],
    sum_drift_history: &[f64],
    dispersion_history: &[f64],
    f_star: Option<f64>,
    unit: f64,
    horizon_steps: u64,
    stopped_early: bool,
    thresholds: &Thresholds,
    period_steps: Option<u64>,
) -> RunSummary {
    let steps = (cost_history.len() - 1) as u64;
    let final_time = steps as f64 * unit;
    let steps_to_residual_threshold = f_star.and_then(|f| {
        let thr = thresholds.residual * (1.0 + f.abs());
        cost_history
            .iter()
            .position(|&c| c - f < thr)
            .map(|k| k as u64)
    });
    let time_to_dispersion_threshold = dispersion_history
        .iter()
        .position(|&d| d < thresholds.dispersion)
        .map(|k| k as f64 * unit);

    // final 10% of the horizon, at least 100 steps, clamped to what ran
    let window = ((horizon_steps / 10).max(100) as usize).min(cost_history.len());
    let tail = &cost_history[cost_history.len() - window..];
    let steady_state_cost = tail.iter().sum::<f64>() / tail.len() as f64;
    let steady_state_residual = f_star.map(|f| steady_state_cost - f);
    let chattering_amplitude = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().copied().fold(f64::INFINITY, f64::min);
    let max_sum_drift = sum_drift_history
        .iter()
        .map(|d| d.abs())
        .fold(0.0, f64::max);

    let windowed_rate_max = match (f_star, period_steps) {
        (Some(f), Some(t)) => {
            let t = t as usize;
            let floor = 1e-12 * (1.0 + f.abs());
            let mut max: Option<f64> = None;
            for k in 0..cost_history.len().saturating_sub(t) {
                let r0 = cost_history[k] - f;
                let r1 = cost_history[k + t] - f;
                if r0 > floor {
                    let ratio = r1 / r0;
                    max = Some(max.map_or(ratio, |m: f64| m.max(ratio)));
                }
            }
            max
        }
        _ => None,
    };

    RunSummary {
        steps,
        final_time,
        stopped_early,
        steps_to_residual_threshold,
        time_to_dispersion_threshold,
        steady_state_residual,
        steady_state_cost,
        chattering_amplitude,
        max_sum_drift,
        final_residual: f_star.map(|f| cost_history[cost_history.len() - 1] - f),
        final_dispersion: dispersion_history[dispersion_history.len() - 1],
        windowed_rate_max,
    }
}

/// Integrate a continuous-time variant over the schedule. The target sum is
/// taken from the initial state; use [`run`] to check feasibility against an
/// external `K` and to attach oracle residuals.
pub fn ct_integrate(
    initial: &AgentState,
    schedule: &TopologySchedule,
    costs: &[CostModel],
    config: &ProtocolConfig,
) -> Result<TrajectoryRecord, ProtocolError> {
    if config.variant.is_discrete() {
        return Err(ProtocolError::SteppingMismatch {
            variant: config.variant.name(),
            kind: "continuous",
        });
    }
    run(initial, schedule, costs, config, initial.sum(), None)
}

/// The contraction-rate certificate for sector-bounded maps on a connected
/// static graph:
///
/// ```text
/// F̄(k+1)/F̄(k) ≤ 1 − η̄·v·(α̲·λ₂ − ½·u·λₙ²·ᾱ·η̄)
/// ```
///
/// positive-bracket step sizes are `η̄ < η̄_max = 2α̲λ₂/(u·λₙ²·ᾱ)`.
#[derive(Debug, Clone, Copy)]
pub struct RateBound {
    pub eta_max: f64,
    pub v: f64,
    pub u: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub lambda2: f64,
    pub lambda_n: f64,
}

impl RateBound {
    /// Predicted per-step residual contraction factor at step rate `eta`.
    pub fn contraction(&self, eta: f64) -> f64 {
        1.0 - eta
            * self.v
            * (self.alpha_lo * self.lambda2
                - 0.5 * self.u * self.lambda_n * self.lambda_n * self.alpha_hi * eta)
    }
}

/// Largest step rate with a convergence guarantee, from the map's sector,
/// the costs' curvature bounds, and the graph spectrum.
pub fn step_bound(
    costs: &[CostModel],
    interval: (f64, f64),
    topology: &Topology,
    classification: &MapClassification,
) -> Result<RateBound, ProtocolError> {
    let sector = classification.sector.ok_or_else(|| {
        ProtocolError::NoRateGuarantee(
            "map has no sector bound; in the sign-preserving-only regime the residual is \
             nonincreasing but no contraction rate applies"
                .into(),
        )
    })?;
    if !(sector.lower > 0.0) {
        return Err(ProtocolError::NoRateGuarantee(format!(
            "sector lower bound α̲ = {} is not positive",
            sector.lower
        )));
    }
    if !sector.upper.is_finite() {
        return Err(ProtocolError::NoRateGuarantee(
            "sector upper bound ᾱ is unbounded on this operating range".into(),
        ));
    }
    let CurvatureBounds {
        lower: v,
        upper: u,
        base_only,
    } = CostModel::aggregate_curvature(costs, interval)?;
    if base_only {
        return Err(ProtocolError::NoRateGuarantee(
            "exact-hinge penalty makes gradients non-Lipschitz at the box boundary".into(),
        ));
    }
    if !(v > 0.0) {
        return Err(ProtocolError::NoRateGuarantee(
            "curvature lower bound v is zero (costs not strongly convex on the interval)".into(),
        ));
    }
    if !u.is_finite() {
        return Err(ProtocolError::NoRateGuarantee(
            "curvature upper bound u is unbounded on the interval".into(),
        ));
    }
    let spectrum = topology.spectral_summary()?;
    if spectrum.lambda2 <= 1e-9 {
        return Err(ProtocolError::NoRateGuarantee(format!(
            "graph is disconnected (λ₂ = {:e})",
            spectrum.lambda2
        )));
    }
    let eta_max = 2.0 * sector.lower * spectrum.lambda2
        / (u * spectrum.lambda_n * spectrum.lambda_n * sector.upper);
    Ok(RateBound {
        eta_max,
        v,
        u,
        alpha_lo: sector.lower,
        alpha_hi: sector.upper,
        lambda2: spectrum.lambda2,
        lambda_n: spectrum.lambda_n,
    })
}

/// Outcome of checking the empirical per-step residual ratios against a
/// [`RateBound`] prediction.
#[derive(Debug, Clone, Copy)]
pub struct RateVerdict {
    pub holds: bool,
    pub checked_steps: u64,
    pub first_violation: Option<u64>,
    /// Largest `ratio − predicted` observed.
    pub max_excess: f64,
    pub predicted: f64,
}

/// Compare every per-step residual ratio against the predicted contraction.
///
/// Steps whose residual sits below `1e-12·(1+|F*|)` are skipped: down there
/// the ratio is rounding noise, not dynamics.
pub fn check_rate_bound(
    record: &TrajectoryRecord,
    bound: &RateBound,
    eta: f64,
    tol: f64,
) -> Option<RateVerdict> {
    let f = record.f_star?;
    let predicted = bound.contraction(eta);
    let floor = 1e-12 * (1.0 + f.abs());
    let mut checked = 0;
    let mut first_violation = None;
    let mut max_excess = f64::NEG_INFINITY;
    for k in 0..record.cost_history.len().saturating_sub(1) {
        let r0 = record.cost_history[k] - f;
        let r1 = record.cost_history[k + 1] - f;
        if r0 <= floor {
            continue;
        }
        let ratio = r1 / r0;
        let excess = ratio - predicted;
        checked += 1;
        if excess > max_excess {
            max_excess = excess;
        }
        if excess > tol && first_violation.is_none() {
            first_violation = Some(k as u64);
        }
    }
    Some(RateVerdict {
        holds: first_violation.is_none(),
        checked_steps: checked,
        first_violation,
        max_excess: if checked > 0 { max_excess } else { 0.0 },
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CpuCost, QuadraticCost};
    use crate::network::{generators, SchedulePhase};
    use crate::nonlinearity::OperatingRange;
    use crate::oracle::{solve_closed_form, BisectionOptions};
    use approx::assert_relative_eq;

    fn quad(gamma: f64, beta: f64) -> CostModel {
        CostModel::quadratic(QuadraticCost::new(gamma, beta, 0.0).unwrap())
    }

    fn dt_config(variant: ProtocolVariant, gain: f64, steps: u64) -> ProtocolConfig {
        ProtocolConfig {
            variant,
            stepping: Stepping::Discrete { gain, steps },
            actuation: NonlinearMap::Identity,
            communication: NonlinearMap::Identity,
            recording: RecordingOptions::default(),
            thresholds: Thresholds::default(),
        }
    }

    fn ct_config(
        variant: ProtocolVariant,
        gain: f64,
        dt: f64,
        t_final: f64,
        integrator: Integrator,
    ) -> ProtocolConfig {
        ProtocolConfig {
            variant,
            stepping: Stepping::Continuous {
                gain,
                dt,
                t_final,
                integrator,
            },
            actuation: NonlinearMap::Identity,
            communication: NonlinearMap::Identity,
            recording: RecordingOptions::default(),
            thresholds: Thresholds::default(),
        }
    }

    #[test]
    fn two_agent_hand_step() {
        // gradients (0, 2), unit edge, η̄ = 0.1: antisymmetric transfer 0.2
        let topology = generators::path(2, 1.0).unwrap();
        let costs = vec![quad(0.5, 0.0), quad(0.5, 0.0)];
        let state = AgentState::new(vec![0.0, 2.0]);
        let config = dt_config(ProtocolVariant::DtLinear, 0.1, 1);
        let next = dt_step(&state, &topology, &costs, &config).unwrap();
        assert_relative_eq!(next.x[0], 0.2, epsilon = 1e-15);
        assert_relative_eq!(next.x[1], 1.8, epsilon = 1e-15);
    }

    #[test]
    fn equal_gradients_are_a_fixed_point() {
        let topology = generators::complete(4, 1.0).unwrap();
        let costs = vec![quad(1.0, 0.0); 4];
        let state = AgentState::new(vec![2.5; 4]);
        for variant in [
            ProtocolVariant::DtLinear,
            ProtocolVariant::DtActuation,
            ProtocolVariant::DtCommunication,
        ] {
            let mut config = dt_config(variant, 0.2, 1);
            if variant.uses_actuation() {
                config.actuation = NonlinearMap::sign_power(0.5).unwrap();
            }
            if variant.uses_communication() {
                config.communication = NonlinearMap::log_quantizer(1.0).unwrap();
            }
            let next = dt_step(&state, &topology, &costs, &config).unwrap();
            assert_eq!(next.x, state.x, "{variant:?}");
        }
    }

    #[test]
    fn empty_network_leaves_state_unchanged() {
        let topology = Topology::empty(3).unwrap();
        let costs = vec![quad(1.0, 0.0), quad(1.0, 1.0), quad(1.0, 2.0)];
        let state = AgentState::new(vec![1.0, 2.0, 3.0]);
        let config = dt_config(ProtocolVariant::DtLinear, 0.5, 1);
        let next = dt_step(&state, &topology, &costs, &config).unwrap();
        assert_eq!(next.x, state.x);
    }

    #[test]
    fn unused_map_slot_must_be_identity() {
        let mut config = dt_config(ProtocolVariant::DtActuation, 0.1, 10);
        config.communication = NonlinearMap::saturation(1.0).unwrap();
        assert!(matches!(
            config.validate(),
            Err(ProtocolError::UnusedMapNotIdentity {
                slot: "communication"
            })
        ));
    }

    #[test]
    fn feasibility_preserved_under_nonlinear_maps() {
        let topology = generators::random_geometric_connected(12, 0.5, 1.0, 3, 20).unwrap();
        let schedule = TopologySchedule::single(topology);
        let costs: Vec<CostModel> = (0..12).map(|i| quad(0.3 + 0.05 * i as f64, 0.1 * i as f64)).collect();
        let k = 30.0;
        let initial = AgentState::new(vec![2.5; 12]);
        for (variant, act, comm) in [
            (
                ProtocolVariant::DtActuation,
                NonlinearMap::saturation(1.0).unwrap(),
                NonlinearMap::Identity,
            ),
            (
                ProtocolVariant::DtCommunication,
                NonlinearMap::Identity,
                NonlinearMap::uniform_quantizer(0.5).unwrap(),
            ),
            (
                ProtocolVariant::DtActuation,
                NonlinearMap::composite_sign_power(0.5, 1.5).unwrap(),
                NonlinearMap::Identity,
            ),
        ] {
            let mut config = dt_config(variant, 0.02, 1000);
            config.actuation = act;
            config.communication = comm;
            let record = run(&initial, &schedule, &costs, &config, k, None).unwrap();
            assert!(
                record.summary.max_sum_drift <= 1e-9 * (1.0 + k.abs()),
                "{variant:?}: drift {:e}",
                record.summary.max_sum_drift
            );
        }
    }

    #[test]
    fn infeasible_initialization_is_rejected_with_gap() {
        let schedule = TopologySchedule::single(generators::path(2, 1.0).unwrap());
        let costs = vec![quad(1.0, 0.0); 2];
        let initial = AgentState::new(vec![1.0, 1.0]);
        let config = dt_config(ProtocolVariant::DtLinear, 0.1, 10);
        let err = run(&initial, &schedule, &costs, &config, 2.5, None).unwrap_err();
        match err {
            ProtocolError::InfeasibleInitialization { gap, .. } => {
                assert_relative_eq!(gap, -0.5, epsilon = 1e-12)
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn starting_at_the_optimizer_stays_there() {
        let topology = generators::complete(5, 1.0).unwrap();
        let schedule = TopologySchedule::single(topology);
        let costs: Vec<CostModel> = (0..5).map(|i| quad(0.5 + 0.1 * i as f64, 0.2 * i as f64)).collect();
        let k = 10.0;
        let oracle = solve_closed_form(&costs, k).unwrap();
        let initial = AgentState::new(oracle.x_star.clone());
        let config = dt_config(ProtocolVariant::DtLinear, 0.1, 500);
        let record = run(&initial, &schedule, &costs, &config, k, Some(&oracle)).unwrap();
        for (k_step, &c) in record.cost_history.iter().enumerate() {
            assert!(
                c - oracle.f_star < 1e-12 * (1.0 + oracle.f_star.abs()),
                "residual grew at step {k_step}"
            );
        }
    }

    #[test]
    fn euler_ct_reproduces_dt_linear_exactly() {
        let topology = generators::cycle(6, 1.0).unwrap();
        let schedule = TopologySchedule::single(topology.clone());
        let costs: Vec<CostModel> = (0..6).map(|i| quad(0.4 + 0.1 * i as f64, -0.3 * i as f64)).collect();
        let initial = AgentState::new(vec![5.0; 6]);
        let k = 30.0;
        let (eta, dt) = (0.7, 0.05);
        let ct = ct_config(
            ProtocolVariant::CtLinear,
            eta,
            dt,
            dt * 200.0,
            Integrator::Euler,
        );
        let ct_record = run(&initial, &schedule, &costs, &ct, k, None).unwrap();
        let dt_cfg = dt_config(ProtocolVariant::DtLinear, eta * dt, 200);
        let dt_record = run(&initial, &schedule, &costs, &dt_cfg, k, None).unwrap();
        assert_eq!(ct_record.cost_history, dt_record.cost_history);
    }

    #[test]
    fn rk4_matches_euler_to_discretization_order() {
        let topology = generators::cycle(5, 1.0).unwrap();
        let schedule = TopologySchedule::single(topology);
        let costs: Vec<CostModel> = (0..5).map(|i| quad(0.5, 0.1 * i as f64)).collect();
        let initial = AgentState::new(vec![2.0; 5]);
        let fine = ct_config(
            ProtocolVariant::CtLinear,
            1.0,
            1e-4,
            1.0,
            Integrator::Euler,
        );
        let coarse = ct_config(ProtocolVariant::CtLinear, 1.0, 0.01, 1.0, Integrator::Rk4);
        let a = run(&initial, &schedule, &costs, &fine, 10.0, None).unwrap();
        let b = run(&initial, &schedule, &costs, &coarse, 10.0, None).unwrap();
        let fa = a.cost_history.last().unwrap();
        let fb = b.cost_history.last().unwrap();
        assert!((fa - fb).abs() < 1e-6 * (1.0 + fa.abs()), "{fa} vs {fb}");
    }

    #[test]
    fn step_bound_identity_map_on_k4() {
        // identity sector (1,1), K₄ spectrum λ₂=λₙ=4, v=u=2 → η̄_max = 0.25
        let topology = generators::complete(4, 1.0).unwrap();
        let costs = vec![quad(1.0, 0.0); 4];
        let class = NonlinearMap::Identity.classify(&OperatingRange::symmetric(1.0).unwrap());
        let bound = step_bound(&costs, (-10.0, 10.0), &topology, &class).unwrap();
        assert_relative_eq!(bound.eta_max, 0.25, epsilon = 1e-9);
        // contraction at η̄_max/2 equals 1 − η̄·v·α̲·λ₂/2
        let eta = bound.eta_max / 2.0;
        assert_relative_eq!(
            bound.contraction(eta),
            1.0 - eta * 2.0 * 4.0 / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn step_bound_refuses_uniform_quantizer() {
        let topology = generators::complete(4, 1.0).unwrap();
        let costs = vec![quad(1.0, 0.0); 4];
        let class = NonlinearMap::uniform_quantizer(1.0)
            .unwrap()
            .classify(&OperatingRange::symmetric(1.0).unwrap());
        assert!(matches!(
            step_bound(&costs, (-10.0, 10.0), &topology, &class),
            Err(ProtocolError::NoRateGuarantee(_))
        ));
    }

    #[test]
    fn residual_is_monotone_and_rate_bound_holds_for_log_quantizer() {
        let topology = generators::complete(6, 1.0).unwrap();
        let schedule = TopologySchedule::single(topology.clone());
        let costs: Vec<CostModel> = (0..6).map(|i| quad(0.5 + 0.05 * i as f64, 0.1 * i as f64)).collect();
        let k = 12.0;
        let oracle = solve_closed_form(&costs, k).unwrap();
        let map = NonlinearMap::log_quantizer(0.5).unwrap();
        let class = map.classify(&OperatingRange::symmetric(20.0).unwrap());
        let bound = step_bound(&costs, (-10.0, 10.0), &topology, &class).unwrap();
        let eta = 0.5 * bound.eta_max;
        let mut config = dt_config(ProtocolVariant::DtActuation, eta, 3000);
        config.actuation = map;
        let initial = AgentState::new(vec![2.0; 6]);
        let record = run(&initial, &schedule, &costs, &config, k, Some(&oracle)).unwrap();
        // monotone residual
        for w in record.cost_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()));
        }
        let verdict = check_rate_bound(&record, &bound, eta, 1e-9).unwrap();
        assert!(
            verdict.holds,
            "violation at {:?}, excess {:e}",
            verdict.first_violation, verdict.max_excess
        );
        // and it actually converged
        assert!(record.summary.final_residual.unwrap() < 1e-9 * (1.0 + oracle.f_star.abs()));
    }

    #[test]
    fn identity_protocol_converges_to_oracle() {
        let topology = generators::random_geometric_connected(10, 0.6, 1.0, 9, 20).unwrap();
        let schedule = TopologySchedule::single(topology.clone());
        let costs: Vec<CostModel> = (0..10)
            .map(|i| {
                CostModel::cpu(CpuCost::new(0.05 + 0.01 * i as f64, 5.0 + 0.05 * i as f64).unwrap())
            })
            .collect();
        let k = 52.0;
        let oracle =
            crate::oracle::solve_bisection(&costs, k, &BisectionOptions::default()).unwrap();
        let class = NonlinearMap::Identity.classify(&OperatingRange::symmetric(1.0).unwrap());
        let bound = step_bound(&costs, (0.0, 10.0), &topology, &class).unwrap();
        let config = dt_config(ProtocolVariant::DtLinear, bound.eta_max / 2.0, 200_000);
        let initial = AgentState::new(vec![5.2; 10]);
        let record = run(&initial, &schedule, &costs, &config, k, Some(&oracle)).unwrap();
        assert!(
            record.summary.final_residual.unwrap() < 1e-8 * (1.0 + oracle.f_star.abs()),
            "final residual {:e}",
            record.summary.final_residual.unwrap()
        );
    }

    #[test]
    fn permutation_equivariance() {
        let topology = generators::random_geometric_connected(8, 0.6, 1.0, 21, 20).unwrap();
        let costs: Vec<CostModel> = (0..8).map(|i| quad(0.3 + 0.07 * i as f64, 0.2 * i as f64)).collect();
        let x0: Vec<f64> = (0..8).map(|i| 1.0 + 0.5 * i as f64).collect();
        let perm: Vec<usize> = vec![3, 1, 4, 0, 7, 2, 6, 5];

        let mut w = nalgebra::DMatrix::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                w[(perm[i], perm[j])] = topology.weight(i, j);
            }
        }
        let permuted_topology = Topology::new(w).unwrap();
        let mut permuted_costs = costs.clone();
        let mut permuted_x0 = x0.clone();
        for i in 0..8 {
            permuted_costs[perm[i]] = costs[i].clone();
            permuted_x0[perm[i]] = x0[i];
        }

        let mut config = dt_config(ProtocolVariant::DtActuation, 0.05, 200);
        config.actuation = NonlinearMap::saturation(0.7).unwrap();
        let k: f64 = x0.iter().sum();

        let base = run(
            &AgentState::new(x0),
            &TopologySchedule::single(topology),
            &costs,
            &config,
            k,
            None,
        )
        .unwrap();
        let permuted = run(
            &AgentState::new(permuted_x0),
            &TopologySchedule::single(permuted_topology),
            &permuted_costs,
            &config,
            k,
            None,
        )
        .unwrap();
        // identical cost trajectories up to reduction-order rounding
        for (a, b) in base.cost_history.iter().zip(&permuted.cost_history) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn switching_schedule_steps_validate_against_dt() {
        let a = generators::path(4, 1.0).unwrap();
        let b = generators::cycle(4, 1.0).unwrap();
        let schedule = TopologySchedule::new(
            vec![
                SchedulePhase {
                    topology: a,
                    dwell: 0.25,
                },
                SchedulePhase {
                    topology: b,
                    dwell: 0.5,
                },
            ],
            true,
        )
        .unwrap();
        let costs = vec![quad(1.0, 0.0); 4];
        let initial = AgentState::new(vec![1.0; 4]);
        // dt = 0.1 does not divide dwell 0.25
        let bad = ct_config(
            ProtocolVariant::CtLinear,
            1.0,
            0.1,
            1.0,
            Integrator::Euler,
        );
        assert!(matches!(
            run(&initial, &schedule, &costs, &bad, 4.0, None),
            Err(ProtocolError::DwellNotMultiple { .. })
        ));
        // dt larger than a dwell
        let too_big = ct_config(
            ProtocolVariant::CtLinear,
            1.0,
            0.3,
            1.0,
            Integrator::Euler,
        );
        assert!(matches!(
            run(&initial, &schedule, &costs, &too_big, 4.0, None),
            Err(ProtocolError::DtExceedsDwell { .. })
        ));
        // dt = 0.05 divides both dwells
        let good = ct_config(
            ProtocolVariant::CtLinear,
            1.0,
            0.05,
            1.5,
            Integrator::Euler,
        );
        assert!(run(&initial, &schedule, &costs, &good, 4.0, None).is_ok());
    }

    #[test]
    fn divergence_reports_the_step() {
        let topology = generators::complete(3, 1.0).unwrap();
        let schedule = TopologySchedule::single(topology);
        let costs = vec![quad(5.0, 0.0), quad(5.0, 10.0), quad(5.0, -10.0)];
        // absurdly large gain blows up the linear dynamics
        let config = dt_config(ProtocolVariant::DtLinear, 50.0, 10_000);
        let initial = AgentState::new(vec![0.0; 3]);
        match run(&initial, &schedule, &costs, &config, 0.0, None) {
            Err(ProtocolError::Diverged { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn early_stop_on_residual_threshold() {
        let topology = generators::complete(4, 1.0).unwrap();
        let schedule = TopologySchedule::single(topology);
        let costs: Vec<CostModel> = (0..4).map(|i| quad(0.5, 0.3 * i as f64)).collect();
        let k = 8.0;
        let oracle = solve_closed_form(&costs, k).unwrap();
        let mut config = dt_config(ProtocolVariant::DtLinear, 0.1, 1_000_000);
        config.thresholds.stop_on_residual = true;
        config.thresholds.residual = 1e-10;
        let initial = AgentState::new(vec![2.0; 4]);
        let record = run(&initial, &schedule, &costs, &config, k, Some(&oracle)).unwrap();
        assert!(record.summary.stopped_early);
        assert!(record.summary.steps < 1_000_000);
    }

    #[test]
    fn csv_has_expected_columns_and_rows() {
        let topology = generators::path(3, 1.0).unwrap();
        let schedule = TopologySchedule::single(topology);
        let costs = vec![quad(1.0, 0.0), quad(1.0, 1.0), quad(1.0, 2.0)];
        let k = 6.0;
        let oracle = solve_closed_form(&costs, k).unwrap();
        let mut config = dt_config(ProtocolVariant::DtLinear, 0.1, 10);
        config.recording.states = true;
        config.recording.stride = 5;
        let initial = AgentState::new(vec![2.0; 3]);
        let record = run(&initial, &schedule, &costs, &config, k, Some(&oracle)).unwrap();
        let csv = record.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,time,residual,sum_drift,grad_dispersion,x0,x1,x2"
        );
        // steps 0, 5, 10
        assert_eq!(csv.lines().count(), 4);
    }
}
