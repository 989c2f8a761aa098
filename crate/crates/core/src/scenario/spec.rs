//! Typed scenario specs: parsing, validation, and materialization into
//! runnable instances (schedule, costs, constraint, oracle).

use super::config::{parse_raw, RawSection, SectionReader};
use super::ScenarioError;
use crate::cost::{BoxPenalty, CostModel, CpuCost, PenaltySmoothing, QuadraticCost};
use crate::network::{generators, SchedulePhase, Topology, TopologySchedule};
use crate::nonlinearity::NonlinearMap;
use crate::oracle::{
    self, solve_bisection, solve_closed_form, BisectionOptions, OracleSolution, StackedProblem,
};
use crate::protocol::{
    AgentState, Integrator, ProtocolConfig, ProtocolVariant, RecordingOptions, Stepping,
    Thresholds,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes derived seed streams apart per purpose.
fn substream(seed: u64, purpose: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SEED_NETWORK: u64 = 1;
const SEED_PARTITION: u64 = 2;
const SEED_COSTS: u64 = 3;
const SEED_INIT: u64 = 4;
const SEED_SHUFFLE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Generic,
    Cpu,
    Dispatch,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Generic => "generic",
            Self::Cpu => "cpu",
            Self::Dispatch => "dispatch",
        }
    }
}

#[derive(Debug, Clone)]
pub enum NetworkBase {
    Path,
    Cycle,
    Complete,
    KHopRing { k: usize },
    RandomGeometric { radius: f64 },
    Edges(Vec<(usize, usize, f64)>),
    ExplicitPhases(Vec<PhaseSpec>),
}

#[derive(Debug, Clone)]
pub struct PhaseSpec {
    pub dwell: f64,
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub n: usize,
    pub base: NetworkBase,
    pub weight: f64,
    /// Split the base graph's edges into this many switching phases.
    pub partition_phases: Option<usize>,
    pub phase_dwell: f64,
    pub cyclic: bool,
    pub shuffled: bool,
    pub window: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum CostSpec {
    Cpu {
        pi_range: (f64, f64),
        target_range: (f64, f64),
    },
    QuadraticRows(Vec<(f64, f64, f64)>),
    DispatchTypes(Vec<String>),
}

/// Generator cost parameters by named type: (γ, β, α).
pub fn dispatch_type_params(name: &str) -> Option<(f64, f64, f64)> {
    Some(match name {
        "A" => (0.04, 2.0, 561.0),
        "B" => (0.03, 3.0, 310.0),
        "C" => (0.035, 4.0, 78.0),
        "D" => (0.03, 4.0, 561.0),
        "E" => (0.04, 2.5, 78.0),
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxMode {
    /// Initialization projects into the box and repairs the sum.
    Projected,
    /// Boxes act only through the penalty terms; initialization ignores
    /// them. This is the reading under which box-infeasible constants (such
    /// as ΣM < K) still define a run.
    PenaltyOnly,
}

#[derive(Debug, Clone)]
pub struct BoxSpec {
    pub lower: f64,
    pub upper: f64,
    /// Penalty weight ε; defaults to `10·max_i(u_i)` of the base costs.
    pub epsilon: Option<f64>,
    pub smoothing: PenaltySmoothing,
    pub mode: BoxMode,
}

#[derive(Debug, Clone)]
pub struct ReserveSpec {
    pub count: usize,
    pub coeffs: Vec<f64>,
    pub rho_b: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum ConstraintSpec {
    FixedSum(f64),
    Demand {
        demand: f64,
        reserves: Option<ReserveSpec>,
    },
}

#[derive(Debug, Clone)]
pub enum InitRule {
    /// `x_i(0) = K/n`.
    Uniform,
    /// Seeded Dirichlet-style split of `K`.
    Random,
    /// User-supplied vector, validated to sum to `K`.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct OutputSpec {
    pub stride: u64,
    pub states: bool,
    pub thresholds: Thresholds,
    pub dir: Option<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            states: false,
            thresholds: Thresholds::default(),
            dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolBlock {
    pub label: String,
    pub config: ProtocolConfig,
}

/// A parsed and validated scenario, before materialization.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub network: NetworkSpec,
    pub cost: CostSpec,
    pub constraint: ConstraintSpec,
    pub box_spec: Option<BoxSpec>,
    pub init: InitRule,
    pub output: OutputSpec,
    pub protocols: Vec<ProtocolBlock>,
    pub config_sha256: String,
}

/// Parse and validate a scenario config.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let raw = parse_raw(text)?;
    let mut g = SectionReader::new("(globals)", &raw.globals);
    let name = g.require_str("name")?.to_string();
    let kind = match g.optional_str("kind")?.unwrap_or("generic") {
        "generic" => ScenarioKind::Generic,
        "cpu" => ScenarioKind::Cpu,
        "dispatch" => ScenarioKind::Dispatch,
        other => {
            return Err(ScenarioError::Validation {
                section: "(globals)".into(),
                line: 0,
                message: format!("unknown kind `{other}` (generic|cpu|dispatch)"),
            })
        }
    };
    let seed: u64 = g.parse_with_default("seed", 0)?;
    g.finish()?;

    let mut network_section = None;
    let mut cost_section = None;
    let mut constraint_section = None;
    let mut box_section = None;
    let mut init_section = None;
    let mut output_section = None;
    let mut protocol_sections: Vec<&RawSection> = Vec::new();
    let mut phase_sections: Vec<&RawSection> = Vec::new();
    for section in &raw.sections {
        let slot = match section.name.as_str() {
            "network" => &mut network_section,
            "cost" => &mut cost_section,
            "constraint" => &mut constraint_section,
            "box" => &mut box_section,
            "init" => &mut init_section,
            "output" => &mut output_section,
            "protocol" => {
                protocol_sections.push(section);
                continue;
            }
            "phase" => {
                phase_sections.push(section);
                continue;
            }
            other => {
                return Err(ScenarioError::Validation {
                    section: other.to_string(),
                    line: section.line,
                    message: "unknown section".into(),
                })
            }
        };
        if slot.is_some() {
            return Err(ScenarioError::Validation {
                section: section.name.clone(),
                line: section.line,
                message: "section appears twice".into(),
            });
        }
        *slot = Some(section);
    }

    fn required<'a>(
        s: Option<&'a RawSection>,
        what: &str,
    ) -> Result<&'a RawSection, ScenarioError> {
        s.ok_or_else(|| ScenarioError::Validation {
            section: what.to_string(),
            line: 0,
            message: "section is required".into(),
        })
    }

    let network = parse_network(required(network_section, "network")?, &phase_sections)?;
    let cost = parse_cost(required(cost_section, "cost")?)?;
    let constraint = parse_constraint(required(constraint_section, "constraint")?)?;
    let box_spec = box_section.map(parse_box).transpose()?;
    let init = init_section.map_or(Ok(InitRule::Uniform), parse_init)?;
    let output = output_section.map_or(Ok(OutputSpec::default()), parse_output)?;
    if protocol_sections.is_empty() {
        return Err(ScenarioError::Validation {
            section: "protocol".into(),
            line: 0,
            message: "at least one [protocol] section is required".into(),
        });
    }
    let mut protocols = Vec::new();
    for (idx, section) in protocol_sections.iter().enumerate() {
        protocols.push(parse_protocol(section, idx, &output)?);
    }
    {
        let mut labels: Vec<&str> = protocols.iter().map(|p| p.label.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(ScenarioError::Validation {
                section: "protocol".into(),
                line: 0,
                message: format!("duplicate protocol label `{}`", w[0]),
            });
        }
    }

    let spec = ScenarioSpec {
        name,
        kind,
        seed,
        network,
        cost,
        constraint,
        box_spec,
        init,
        output,
        protocols,
        config_sha256: hex_digest(text),
    };
    spec.cross_validate()?;
    Ok(spec)
}

fn hex_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_edge_line(value: &str, line: usize, n: usize) -> Result<(usize, usize, f64), ScenarioError> {
    let fields: Vec<&str> = value.split_whitespace().collect();
    let bad = |message: String| ScenarioError::Validation {
        section: "network".into(),
        line,
        message,
    };
    if fields.len() != 3 {
        return Err(bad(format!("edge needs `i j weight`, got `{value}`")));
    }
    let i: usize = fields[0]
        .parse()
        .map_err(|_| bad(format!("bad index `{}`", fields[0])))?;
    let j: usize = fields[1]
        .parse()
        .map_err(|_| bad(format!("bad index `{}`", fields[1])))?;
    let w: f64 = fields[2]
        .parse()
        .map_err(|_| bad(format!("bad weight `{}`", fields[2])))?;
    if i >= n || j >= n {
        return Err(bad(format!("edge ({i}, {j}) out of range for n={n}")));
    }
    if i == j {
        return Err(bad("self-loops are not allowed".into()));
    }
    if !w.is_finite() || w <= 0.0 {
        return Err(bad(format!("edge weight must be positive, got {w}")));
    }
    Ok((i, j, w))
}

fn parse_network(
    section: &RawSection,
    phase_sections: &[&RawSection],
) -> Result<NetworkSpec, ScenarioError> {
    let mut r = SectionReader::new("network", &section.entries);
    let n: usize = r.require_parse("n")?;
    let weight: f64 = r.parse_with_default("weight", 1.0)?;
    let family = r.optional_str("family")?.map(str::to_string);
    let k_hops: Option<usize> = r.optional_parse("k")?;
    let radius: Option<f64> = r.optional_parse("radius")?;
    let partition_phases: Option<usize> = r.optional_parse("partition_phases")?;
    let phase_dwell: f64 = r.parse_with_default("phase_dwell", 1.0)?;
    let cyclic = r.optional_bool("cyclic", true)?;
    let order = r.optional_str("phase_order")?.unwrap_or("round-robin");
    let shuffled = match order {
        "round-robin" => false,
        "shuffled" => true,
        other => {
            return Err(ScenarioError::Validation {
                section: "network".into(),
                line: section.line,
                message: format!("phase_order must be round-robin|shuffled, got `{other}`"),
            })
        }
    };
    let window: Option<f64> = r.optional_parse("window")?;
    let edge_lines = r.multi("edge");
    r.finish()?;

    let mut edges = Vec::new();
    for (value, line) in edge_lines {
        edges.push(parse_edge_line(value, line, n)?);
    }

    let base = if !phase_sections.is_empty() {
        if family.is_some() || !edges.is_empty() || partition_phases.is_some() {
            return Err(ScenarioError::Validation {
                section: "network".into(),
                line: section.line,
                message: "[phase] sections replace family/edge/partition_phases".into(),
            });
        }
        let mut phases = Vec::new();
        for ps in phase_sections {
            let mut pr = SectionReader::new("phase", &ps.entries);
            let dwell: f64 = pr.require_parse("dwell")?;
            let lines = pr.multi("edge");
            pr.finish()?;
            let mut phase_edges = Vec::new();
            for (value, line) in lines {
                phase_edges.push(parse_edge_line(value, line, n)?);
            }
            phases.push(PhaseSpec {
                dwell,
                edges: phase_edges,
            });
        }
        NetworkBase::ExplicitPhases(phases)
    } else {
        match family.as_deref() {
            Some("path") => NetworkBase::Path,
            Some("cycle") => NetworkBase::Cycle,
            Some("complete") => NetworkBase::Complete,
            Some("k-hop-ring") => NetworkBase::KHopRing {
                k: k_hops.ok_or_else(|| ScenarioError::Validation {
                    section: "network".into(),
                    line: section.line,
                    message: "k-hop-ring needs `k = <hops>`".into(),
                })?,
            },
            Some("random-geometric") => NetworkBase::RandomGeometric {
                radius: radius.ok_or_else(|| ScenarioError::Validation {
                    section: "network".into(),
                    line: section.line,
                    message: "random-geometric needs `radius = <r>`".into(),
                })?,
            },
            Some("edges") => {
                if edges.is_empty() {
                    return Err(ScenarioError::Validation {
                        section: "network".into(),
                        line: section.line,
                        message: "family = edges needs at least one `edge = i j w` line".into(),
                    });
                }
                NetworkBase::Edges(edges)
            }
            Some(other) => {
                return Err(ScenarioError::Validation {
                    section: "network".into(),
                    line: section.line,
                    message: format!("unknown family `{other}`"),
                })
            }
            None => {
                return Err(ScenarioError::Validation {
                    section: "network".into(),
                    line: section.line,
                    message: "need `family = ...` or [phase] sections".into(),
                })
            }
        }
    };

    Ok(NetworkSpec {
        n,
        base,
        weight,
        partition_phases,
        phase_dwell,
        cyclic,
        shuffled,
        window,
    })
}

fn parse_cost(section: &RawSection) -> Result<CostSpec, ScenarioError> {
    let mut r = SectionReader::new("cost", &section.entries);
    let family = r.require_str("family")?.to_string();
    let spec = match family.as_str() {
        "cpu" => {
            let pi = r
                .optional_f64_list("pi_range")?
                .unwrap_or_else(|| vec![0.0, 0.1]);
            let target = r
                .optional_f64_list("target_range")?
                .unwrap_or_else(|| vec![4.5, 5.5]);
            if pi.len() != 2 || target.len() != 2 || pi[0] >= pi[1] || target[0] > target[1] {
                return Err(ScenarioError::Validation {
                    section: "cost".into(),
                    line: section.line,
                    message: "pi_range/target_range need `lo hi` with lo < hi".into(),
                });
            }
            if pi[0] < 0.0 {
                return Err(ScenarioError::Validation {
                    section: "cost".into(),
                    line: section.line,
                    message: "pi_range must be positive".into(),
                });
            }
            CostSpec::Cpu {
                pi_range: (pi[0], pi[1]),
                target_range: (target[0], target[1]),
            }
        }
        "quadratic" => {
            let rows = r.multi("agent");
            let mut parsed = Vec::new();
            for (value, line) in rows {
                let vals: Result<Vec<f64>, _> =
                    value.split_whitespace().map(str::parse::<f64>).collect();
                let vals = vals.map_err(|_| ScenarioError::Validation {
                    section: "cost".into(),
                    line,
                    message: format!("agent row needs `gamma beta alpha`, got `{value}`"),
                })?;
                if vals.len() != 3 {
                    return Err(ScenarioError::Validation {
                        section: "cost".into(),
                        line,
                        message: "agent row needs exactly `gamma beta alpha`".into(),
                    });
                }
                parsed.push((vals[0], vals[1], vals[2]));
            }
            CostSpec::QuadraticRows(parsed)
        }
        "dispatch-types" => {
            let types = r.require_str("types")?;
            let list: Vec<String> = types.split_whitespace().map(str::to_string).collect();
            for t in &list {
                if dispatch_type_params(t).is_none() {
                    return Err(ScenarioError::Validation {
                        section: "cost".into(),
                        line: section.line,
                        message: format!("unknown generator type `{t}` (A..E)"),
                    });
                }
            }
            CostSpec::DispatchTypes(list)
        }
        other => {
            return Err(ScenarioError::Validation {
                section: "cost".into(),
                line: section.line,
                message: format!("unknown cost family `{other}` (cpu|quadratic|dispatch-types)"),
            })
        }
    };
    r.finish()?;
    Ok(spec)
}

fn parse_constraint(section: &RawSection) -> Result<ConstraintSpec, ScenarioError> {
    let mut r = SectionReader::new("constraint", &section.entries);
    let k: Option<f64> = r.optional_parse("k")?;
    let demand: Option<f64> = r.optional_parse("demand")?;
    let reserves: Option<usize> = r.optional_parse("reserves")?;
    let coeffs = r.optional_f64_list("battery_coeffs")?;
    let rho_b: Option<f64> = r.optional_parse("rho_b")?;
    r.finish()?;
    match (k, demand) {
        (Some(k), None) => {
            if reserves.is_some() || coeffs.is_some() || rho_b.is_some() {
                return Err(ScenarioError::Validation {
                    section: "constraint".into(),
                    line: section.line,
                    message: "reserves require `demand = ...`, not `k = ...`".into(),
                });
            }
            Ok(ConstraintSpec::FixedSum(k))
        }
        (None, Some(demand)) => {
            let reserves = match reserves {
                None => {
                    if coeffs.is_some() || rho_b.is_some() {
                        return Err(ScenarioError::Validation {
                            section: "constraint".into(),
                            line: section.line,
                            message: "battery_coeffs/rho_b require `reserves = <count>`".into(),
                        });
                    }
                    None
                }
                Some(count) => {
                    let coeffs = coeffs.ok_or_else(|| ScenarioError::Validation {
                        section: "constraint".into(),
                        line: section.line,
                        message: "reserves need `battery_coeffs = c1 c2 ...`".into(),
                    })?;
                    if coeffs.len() != count {
                        return Err(ScenarioError::Validation {
                            section: "constraint".into(),
                            line: section.line,
                            message: format!(
                                "reserves = {count} but {} battery_coeffs given",
                                coeffs.len()
                            ),
                        });
                    }
                    Some(ReserveSpec {
                        count,
                        coeffs,
                        rho_b,
                    })
                }
            };
            Ok(ConstraintSpec::Demand { demand, reserves })
        }
        _ => Err(ScenarioError::Validation {
            section: "constraint".into(),
            line: section.line,
            message: "need exactly one of `k = ...` or `demand = ...`".into(),
        }),
    }
}

fn parse_box(section: &RawSection) -> Result<BoxSpec, ScenarioError> {
    let mut r = SectionReader::new("box", &section.entries);
    let lower: f64 = r.require_parse("lower")?;
    let upper: f64 = r.require_parse("upper")?;
    let epsilon: Option<f64> = r.optional_parse("epsilon")?;
    let smoothing_name = r.optional_str("smoothing")?.unwrap_or("squared-hinge");
    let smoothing_mu: Option<f64> = r.optional_parse("smoothing_mu")?;
    let mode_name = r.optional_str("mode")?.unwrap_or("projected");
    r.finish()?;
    let smoothing = match smoothing_name {
        "exact-hinge" => PenaltySmoothing::ExactHinge,
        "softplus" => PenaltySmoothing::Softplus {
            smoothing_mu: smoothing_mu.ok_or_else(|| ScenarioError::Validation {
                section: "box".into(),
                line: section.line,
                message: "softplus smoothing needs `smoothing_mu = ...`".into(),
            })?,
        },
        "squared-hinge" => PenaltySmoothing::SquaredHinge,
        other => {
            return Err(ScenarioError::Validation {
                section: "box".into(),
                line: section.line,
                message: format!(
                    "unknown smoothing `{other}` (exact-hinge|softplus|squared-hinge)"
                ),
            })
        }
    };
    if !matches!(smoothing, PenaltySmoothing::Softplus { .. }) && smoothing_mu.is_some() {
        return Err(ScenarioError::Validation {
            section: "box".into(),
            line: section.line,
            message: "smoothing_mu only applies to softplus".into(),
        });
    }
    let mode = match mode_name {
        "projected" => BoxMode::Projected,
        "penalty-only" => BoxMode::PenaltyOnly,
        other => {
            return Err(ScenarioError::Validation {
                section: "box".into(),
                line: section.line,
                message: format!("unknown box mode `{other}` (projected|penalty-only)"),
            })
        }
    };
    if !(lower < upper) {
        return Err(ScenarioError::Validation {
            section: "box".into(),
            line: section.line,
            message: format!("box needs lower < upper, got [{lower}, {upper}]"),
        });
    }
    Ok(BoxSpec {
        lower,
        upper,
        epsilon,
        smoothing,
        mode,
    })
}

fn parse_init(section: &RawSection) -> Result<InitRule, ScenarioError> {
    let mut r = SectionReader::new("init", &section.entries);
    let rule = r.optional_str("rule")?.unwrap_or("uniform");
    let values = r.optional_f64_list("values")?;
    r.finish()?;
    match (rule, values) {
        ("uniform", None) => Ok(InitRule::Uniform),
        ("random", None) => Ok(InitRule::Random),
        ("explicit", Some(v)) => Ok(InitRule::Explicit(v)),
        ("explicit", None) => Err(ScenarioError::Validation {
            section: "init".into(),
            line: section.line,
            message: "explicit init needs `values = x0 x1 ...`".into(),
        }),
        (other, _) => Err(ScenarioError::Validation {
            section: "init".into(),
            line: section.line,
            message: format!("unknown init `{other}` (uniform|random|explicit)"),
        }),
    }
}

fn parse_output(section: &RawSection) -> Result<OutputSpec, ScenarioError> {
    let mut r = SectionReader::new("output", &section.entries);
    let stride: u64 = r.parse_with_default("stride", 1)?;
    let states = r.optional_bool("states", false)?;
    let residual: f64 = r.parse_with_default("residual_threshold", 1e-6)?;
    let dispersion: f64 = r.parse_with_default("dispersion_threshold", 1e-3)?;
    let stop_on_residual = r.optional_bool("stop_on_residual", false)?;
    let dir = r.optional_str("dir")?.map(str::to_string);
    r.finish()?;
    Ok(OutputSpec {
        stride: stride.max(1),
        states,
        thresholds: Thresholds {
            residual,
            dispersion,
            stop_on_residual,
        },
        dir,
    })
}

fn sanitize_label(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn parse_protocol(
    section: &RawSection,
    index: usize,
    output: &OutputSpec,
) -> Result<ProtocolBlock, ScenarioError> {
    let mut r = SectionReader::new("protocol", &section.entries);
    let variant_name = r.require_str("variant")?;
    let variant = ProtocolVariant::parse(variant_name).ok_or_else(|| ScenarioError::Validation {
        section: "protocol".into(),
        line: section.line,
        message: format!("unknown variant `{variant_name}`"),
    })?;
    let gain: f64 = r.require_parse("gain")?;
    let steps: Option<u64> = r.optional_parse("steps")?;
    let dt: Option<f64> = r.optional_parse("dt")?;
    let t_final: Option<f64> = r.optional_parse("t_final")?;
    let integrator_name = r.optional_str("integrator")?;
    let actuation = r
        .optional_str("actuation")?
        .map(NonlinearMap::parse)
        .transpose()?
        .unwrap_or(NonlinearMap::Identity);
    let communication = r
        .optional_str("communication")?
        .map(NonlinearMap::parse)
        .transpose()?
        .unwrap_or(NonlinearMap::Identity);
    let label = r
        .optional_str("label")?
        .map(str::to_string)
        .unwrap_or_else(|| format!("run{index}-{}", variant.name()));
    r.finish()?;

    let stepping = if variant.is_discrete() {
        if dt.is_some() || t_final.is_some() || integrator_name.is_some() {
            return Err(ScenarioError::Validation {
                section: "protocol".into(),
                line: section.line,
                message: "discrete variants take `steps`, not dt/t_final/integrator".into(),
            });
        }
        Stepping::Discrete {
            gain,
            steps: steps.ok_or_else(|| ScenarioError::Validation {
                section: "protocol".into(),
                line: section.line,
                message: "discrete variants need `steps = ...`".into(),
            })?,
        }
    } else {
        if steps.is_some() {
            return Err(ScenarioError::Validation {
                section: "protocol".into(),
                line: section.line,
                message: "continuous variants take `dt`/`t_final`, not `steps`".into(),
            });
        }
        let integrator = match integrator_name.unwrap_or("rk4") {
            "euler" => Integrator::Euler,
            "rk4" => Integrator::Rk4,
            other => {
                return Err(ScenarioError::Validation {
                    section: "protocol".into(),
                    line: section.line,
                    message: format!("unknown integrator `{other}` (euler|rk4)"),
                })
            }
        };
        Stepping::Continuous {
            gain,
            dt: dt.ok_or_else(|| ScenarioError::Validation {
                section: "protocol".into(),
                line: section.line,
                message: "continuous variants need `dt = ...`".into(),
            })?,
            t_final: t_final.ok_or_else(|| ScenarioError::Validation {
                section: "protocol".into(),
                line: section.line,
                message: "continuous variants need `t_final = ...`".into(),
            })?,
            integrator,
        }
    };

    let config = ProtocolConfig {
        variant,
        stepping,
        actuation,
        communication,
        recording: RecordingOptions {
            stride: output.stride,
            states: output.states,
        },
        thresholds: output.thresholds,
    };
    config.validate().map_err(|e| ScenarioError::Validation {
        section: "protocol".into(),
        line: section.line,
        message: e.to_string(),
    })?;
    Ok(ProtocolBlock {
        label: sanitize_label(&label),
        config,
    })
}

impl ScenarioSpec {
    /// Cheap cross-section checks that need no materialization.
    fn cross_validate(&self) -> Result<(), ScenarioError> {
        let n = self.network.n;
        let gen_count = match &self.constraint {
            ConstraintSpec::Demand {
                reserves: Some(r), ..
            } => {
                if self.box_spec.is_some() {
                    return Err(ScenarioError::Validation {
                        section: "box".into(),
                        line: 0,
                        message: "box constraints are not supported together with reserves".into(),
                    });
                }
                n.checked_sub(r.count)
                    .filter(|&g| g >= 1)
                    .ok_or_else(|| ScenarioError::Validation {
                        section: "constraint".into(),
                        line: 0,
                        message: format!(
                            "network has n={n} agents but reserves={} leaves no generators",
                            r.count
                        ),
                    })?
            }
            _ => n,
        };
        match &self.cost {
            CostSpec::QuadraticRows(rows) => {
                if rows.len() != gen_count {
                    return Err(ScenarioError::Validation {
                        section: "cost".into(),
                        line: 0,
                        message: format!(
                            "{} agent rows but {gen_count} generator agents",
                            rows.len()
                        ),
                    });
                }
            }
            CostSpec::DispatchTypes(types) => {
                if types.len() != gen_count {
                    return Err(ScenarioError::Validation {
                        section: "cost".into(),
                        line: 0,
                        message: format!("{} types but {gen_count} generator agents", types.len()),
                    });
                }
            }
            CostSpec::Cpu { .. } => {
                if gen_count != n {
                    return Err(ScenarioError::Validation {
                        section: "cost".into(),
                        line: 0,
                        message: "cpu cost family does not combine with reserves".into(),
                    });
                }
            }
        }
        if let InitRule::Explicit(values) = &self.init {
            if values.len() != n {
                return Err(ScenarioError::Validation {
                    section: "init".into(),
                    line: 0,
                    message: format!("{} init values but n={n}", values.len()),
                });
            }
        }
        Ok(())
    }

    /// Materialize the scenario: build the schedule and costs, stack
    /// reserves, and solve the oracle.
    pub fn build(&self) -> Result<ScenarioInstance, ScenarioError> {
        let schedule = self.build_schedule()?;
        let (costs, stacked, k, rho_b, epsilon) = self.build_costs_and_constraint()?;

        for block in &self.protocols {
            if let Stepping::Continuous { dt, .. } = block.config.stepping {
                for (idx, phase) in schedule.phases().iter().enumerate() {
                    if schedule.phases().len() > 1 || !schedule.cyclic() {
                        let ratio = phase.dwell / dt;
                        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio < 1.0 {
                            return Err(ScenarioError::Validation {
                                section: "protocol".into(),
                                line: 0,
                                message: format!(
                                    "protocol `{}`: dt={dt} does not divide phase {idx} dwell {}",
                                    block.label, phase.dwell
                                ),
                            });
                        }
                    }
                }
            }
        }

        let closed_form_ok = costs.iter().all(|c| {
            c.penalty().is_none()
                && match c.base() {
                    crate::cost::BaseCost::Quadratic(q) => q.is_strongly_convex(),
                    crate::cost::BaseCost::Cpu(_) => true,
                    crate::cost::BaseCost::Tabulated(_) => false,
                }
        });
        let oracle = if closed_form_ok {
            solve_closed_form(&costs, k)?
        } else {
            solve_bisection(&costs, k, &BisectionOptions::default())?
        };

        Ok(ScenarioInstance {
            name: self.name.clone(),
            kind: self.kind,
            seed: self.seed,
            config_sha256: self.config_sha256.clone(),
            schedule,
            costs,
            k,
            stacked,
            oracle,
            protocols: self.protocols.clone(),
            init: self.init.clone(),
            output: self.output.clone(),
            box_spec: self.box_spec.clone(),
            rho_b,
            epsilon,
        })
    }

    fn build_schedule(&self) -> Result<TopologySchedule, ScenarioError> {
        let net = &self.network;
        let base_topology = |base: &NetworkBase| -> Result<Topology, ScenarioError> {
            Ok(match base {
                NetworkBase::Path => generators::path(net.n, net.weight)?,
                NetworkBase::Cycle => generators::cycle(net.n, net.weight)?,
                NetworkBase::Complete => generators::complete(net.n, net.weight)?,
                NetworkBase::KHopRing { k } => generators::k_hop_ring(net.n, *k, net.weight)?,
                NetworkBase::RandomGeometric { radius } => generators::random_geometric_connected(
                    net.n,
                    *radius,
                    net.weight,
                    substream(self.seed, SEED_NETWORK),
                    200,
                )?,
                NetworkBase::Edges(edges) => Topology::from_edges(net.n, edges)?,
                NetworkBase::ExplicitPhases(_) => unreachable!("handled by caller"),
            })
        };

        let mut schedule = match &net.base {
            NetworkBase::ExplicitPhases(specs) => {
                let phases: Vec<SchedulePhase> = specs
                    .iter()
                    .map(|p| {
                        Topology::from_edges(net.n, &p.edges).map(|topology| SchedulePhase {
                            topology,
                            dwell: p.dwell,
                        })
                    })
                    .collect::<Result<_, _>>()?;
                TopologySchedule::new(phases, net.cyclic)?
            }
            base => {
                let topology = base_topology(base)?;
                match net.partition_phases {
                    None => TopologySchedule::single(topology),
                    Some(parts) => {
                        let phases =
                            partition_into_disconnected_phases(&topology, parts, self.seed)?;
                        let phases = phases
                            .into_iter()
                            .map(|topology| SchedulePhase {
                                topology,
                                dwell: net.phase_dwell,
                            })
                            .collect();
                        TopologySchedule::new(phases, net.cyclic)?
                    }
                }
            }
        };
        if net.shuffled {
            schedule = schedule.with_shuffle(substream(self.seed, SEED_SHUFFLE))?;
        }
        if let Some(window) = net.window {
            schedule = schedule.with_window(window)?;
        }
        Ok(schedule)
    }

    fn build_costs_and_constraint(
        &self,
    ) -> Result<
        (
            Vec<CostModel>,
            Option<StackedProblem>,
            f64,
            Option<f64>,
            Option<f64>,
        ),
        ScenarioError,
    > {
        // base costs for the generator agents
        let gen_count = match &self.constraint {
            ConstraintSpec::Demand {
                reserves: Some(r), ..
            } => self.network.n - r.count,
            _ => self.network.n,
        };
        let quad_rows = |rows: &[(f64, f64, f64)]| -> Result<Vec<QuadraticCost>, ScenarioError> {
            rows.iter()
                .map(|&(g, b, a)| QuadraticCost::new(g, b, a).map_err(ScenarioError::from))
                .collect()
        };
        let base_quadratics: Option<Vec<QuadraticCost>> = match &self.cost {
            CostSpec::QuadraticRows(rows) => Some(quad_rows(rows)?),
            CostSpec::DispatchTypes(types) => Some(quad_rows(
                &types
                    .iter()
                    .map(|t| {
                        let (g, b, a) = dispatch_type_params(t).expect("validated");
                        (g, b, a)
                    })
                    .collect::<Vec<_>>(),
            )?),
            CostSpec::Cpu { .. } => None,
        };

        let mut base_costs: Vec<CostModel> = match &self.cost {
            CostSpec::Cpu {
                pi_range,
                target_range,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(substream(self.seed, SEED_COSTS));
                (0..gen_count)
                    .map(|_| {
                        // half-open (lo, hi] so π is never zero
                        let u: f64 = rng.gen();
                        let pi = pi_range.1 - (pi_range.1 - pi_range.0) * u;
                        let t: f64 = rng.gen();
                        let target = target_range.0 + (target_range.1 - target_range.0) * t;
                        Ok(CostModel::cpu(CpuCost::new(pi, target)?))
                    })
                    .collect::<Result<_, ScenarioError>>()?
            }
            _ => base_quadratics
                .as_ref()
                .expect("quadratic families")
                .iter()
                .map(|q| CostModel::quadratic(*q))
                .collect(),
        };

        match &self.constraint {
            ConstraintSpec::FixedSum(k) | ConstraintSpec::Demand {
                demand: k,
                reserves: None,
            } => {
                let epsilon = self.attach_box_penalties(&mut base_costs)?;
                Ok((base_costs, None, *k, None, epsilon))
            }
            ConstraintSpec::Demand {
                demand,
                reserves: Some(reserve),
            } => {
                let gens = base_quadratics.ok_or_else(|| ScenarioError::Validation {
                    section: "cost".into(),
                    line: 0,
                    message: "reserves need quadratic generator costs".into(),
                })?;
                let rho_b = reserve
                    .rho_b
                    .unwrap_or_else(|| oracle::default_battery_regularizer(&gens));
                let stacked =
                    oracle::stack_reserve_problem(&gens, &reserve.coeffs, *demand, rho_b)?;
                let costs = stacked.costs.clone();
                let k = stacked.k;
                Ok((costs, Some(stacked), k, Some(rho_b), None))
            }
        }
    }

    /// Wrap every cost with the box penalty; returns the ε actually used.
    fn attach_box_penalties(
        &self,
        costs: &mut [CostModel],
    ) -> Result<Option<f64>, ScenarioError> {
        let Some(spec) = &self.box_spec else {
            return Ok(None);
        };
        let max_u = costs
            .iter()
            .map(|c| match c.base() {
                crate::cost::BaseCost::Quadratic(q) => 2.0 * q.gamma(),
                crate::cost::BaseCost::Cpu(p) => p.pi(),
                crate::cost::BaseCost::Tabulated(_) => 1.0,
            })
            .fold(0.0f64, f64::max);
        let epsilon = spec.epsilon.unwrap_or(10.0 * max_u);
        let penalty = BoxPenalty::new(spec.lower, spec.upper, epsilon, spec.smoothing)?;
        for c in costs.iter_mut() {
            *c = CostModel::new(c.base().clone(), Some(penalty));
        }
        Ok(Some(epsilon))
    }
}

/// Retry seeded edge partitions until every phase is disconnected (their
/// union is the base graph, hence connected, by construction).
fn partition_into_disconnected_phases(
    topology: &Topology,
    parts: usize,
    seed: u64,
) -> Result<Vec<Topology>, ScenarioError> {
    const TRIES: u64 = 200;
    for attempt in 0..TRIES {
        let candidate = generators::partition_edges(
            topology,
            parts,
            substream(seed, SEED_PARTITION ^ (attempt << 8)),
        )?;
        if candidate.iter().all(|t| !t.is_connected()) {
            return Ok(candidate);
        }
    }
    Err(ScenarioError::Validation {
        section: "network".into(),
        line: 0,
        message: format!(
            "could not partition the graph into {parts} disconnected phases in {TRIES} tries"
        ),
    })
}

/// A materialized scenario ready to run.
#[derive(Debug, Clone)]
pub struct ScenarioInstance {
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub config_sha256: String,
    pub schedule: TopologySchedule,
    pub costs: Vec<CostModel>,
    pub k: f64,
    pub stacked: Option<StackedProblem>,
    pub oracle: OracleSolution,
    pub protocols: Vec<ProtocolBlock>,
    pub init: InitRule,
    pub output: OutputSpec,
    pub box_spec: Option<BoxSpec>,
    /// Battery regularizer actually used (reserve scenarios).
    pub rho_b: Option<f64>,
    /// Box penalty weight actually used.
    pub epsilon: Option<f64>,
}

impl ScenarioInstance {
    pub fn n(&self) -> usize {
        self.schedule.n()
    }

    /// Produce the feasible starting state for this scenario.
    pub fn initialize(&self) -> Result<AgentState, ScenarioError> {
        initialize(self)
    }
}

/// Build the starting state: the configured rule, then (with projected
/// boxes) clamp-and-redistribute until the sum constraint holds exactly.
pub fn initialize(instance: &ScenarioInstance) -> Result<AgentState, ScenarioError> {
    let n = instance.n();
    let k = instance.k;
    let mut x: Vec<f64> = match &instance.init {
        InitRule::Uniform => vec![k / n as f64; n],
        InitRule::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(instance.seed, SEED_INIT));
            // Dirichlet(1,...,1) split via exponential weights
            let weights: Vec<f64> = (0..n)
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let total: f64 = weights.iter().sum();
            weights.iter().map(|w| k * w / total).collect()
        }
        InitRule::Explicit(values) => {
            let gap = values.iter().sum::<f64>() - k;
            if gap.abs() > 1e-9 * (1.0 + k.abs()) {
                return Err(ScenarioError::InitSumMismatch { gap });
            }
            values.clone()
        }
    };

    if let Some(spec) = &instance.box_spec {
        if spec.mode == BoxMode::Projected {
            project_and_repair(&mut x, spec.lower, spec.upper, k)?;
        }
    }

    // exact-feasibility polish: push the last rounding crumbs onto one agent
    let gap = x.iter().sum::<f64>() - k;
    if gap != 0.0 {
        let idx = pick_adjustable(&x, gap, instance.box_spec.as_ref());
        x[idx] -= gap;
    }
    Ok(AgentState::new(x))
}

fn pick_adjustable(x: &[f64], gap: f64, box_spec: Option<&BoxSpec>) -> usize {
    if let Some(spec) = box_spec {
        if spec.mode == BoxMode::Projected {
            // prefer an agent with slack in the direction we must move
            for (i, &xi) in x.iter().enumerate() {
                if gap > 0.0 && xi - gap >= spec.lower {
                    return i;
                }
                if gap < 0.0 && xi - gap <= spec.upper {
                    return i;
                }
            }
        }
    }
    0
}

/// Clamp into `[lower, upper]`, then spread the sum gap over unsaturated
/// agents, iterating to feasibility.
fn project_and_repair(
    x: &mut [f64],
    lower: f64,
    upper: f64,
    k: f64,
) -> Result<(), ScenarioError> {
    let n = x.len() as f64;
    let (sum_lower, sum_upper) = (lower * n, upper * n);
    if k < sum_lower - 1e-9 * (1.0 + k.abs()) || k > sum_upper + 1e-9 * (1.0 + k.abs()) {
        return Err(ScenarioError::BoxInfeasible {
            sum_lower,
            sum_upper,
            k,
        });
    }
    for _ in 0..128 {
        for xi in x.iter_mut() {
            *xi = xi.clamp(lower, upper);
        }
        let gap = k - x.iter().sum::<f64>();
        if gap.abs() <= 1e-12 * (1.0 + k.abs()) {
            return Ok(());
        }
        let unsaturated: Vec<usize> = x
            .iter()
            .enumerate()
            .filter(|(_, &xi)| {
                if gap > 0.0 {
                    xi < upper
                } else {
                    xi > lower
                }
            })
            .map(|(i, _)| i)
            .collect();
        if unsaturated.is_empty() {
            return Err(ScenarioError::BoxInfeasible {
                sum_lower,
                sum_upper,
                k,
            });
        }
        let share = gap / unsaturated.len() as f64;
        for i in unsaturated {
            x[i] += share;
        }
    }
    let gap = k - x.iter().sum::<f64>();
    if gap.abs() <= 1e-9 * (1.0 + k.abs()) {
        Ok(())
    } else {
        Err(ScenarioError::BoxInfeasible {
            sum_lower,
            sum_upper,
            k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
name = two-agent
[network]
n = 2
family = path
[cost]
family = quadratic
agent = 1.0 0.0 0.0
agent = 1.0 1.0 0.0
[constraint]
k = 2
[protocol]
variant = dt-linear
gain = 0.1
steps = 100
";

    #[test]
    fn minimal_config_parses_and_builds() {
        let spec = parse_scenario(MINIMAL).unwrap();
        assert_eq!(spec.name, "two-agent");
        assert_eq!(spec.network.n, 2);
        let instance = spec.build().unwrap();
        assert_eq!(instance.costs.len(), 2);
        assert!((instance.oracle.x_star.iter().sum::<f64>() - 2.0).abs() < 1e-9);
        let state = instance.initialize().unwrap();
        assert_eq!(state.x.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = MINIMAL.replace("[network]\nn = 2", "[network]\nn = 2\nfrobnicate = 1");
        match parse_scenario(&bad) {
            Err(ScenarioError::Validation {
                section, message, ..
            }) => {
                assert_eq!(section, "network");
                assert!(message.contains("frobnicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn saturation_with_two_parameters_is_rejected() {
        // an asymmetric clipping declaration is not a valid odd map
        let bad = MINIMAL.replace(
            "variant = dt-linear",
            "variant = dt-actuation\nactuation = saturation -1 2",
        );
        assert!(parse_scenario(&bad).is_err());
    }

    #[test]
    fn duplicate_edges_are_rejected() {
        let bad = MINIMAL.replace(
            "family = path",
            "family = edges\nedge = 0 1 1.0\nedge = 1 0 2.0",
        );
        let err = parse_scenario(&bad).and_then(|s| s.build());
        assert!(err.is_err());
    }

    #[test]
    fn explicit_init_sum_mismatch_reports_gap() {
        let bad = MINIMAL.to_string() + "[init]\nrule = explicit\nvalues = 1.0 0.5\n";
        let spec = parse_scenario(&bad).unwrap();
        let instance = spec.build().unwrap();
        match instance.initialize() {
            Err(ScenarioError::InitSumMismatch { gap }) => {
                assert!((gap + 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn box_projection_repairs_to_exact_feasibility() {
        let cfg = "\
name = boxed
seed = 7
[network]
n = 4
family = complete
[cost]
family = cpu
pi_range = 0.05 0.1
target_range = 4.5 5.5
[box]
lower = 3
upper = 7
[constraint]
k = 20
[init]
rule = random
[protocol]
variant = dt-linear
gain = 0.1
steps = 10
";
        let instance = parse_scenario(cfg).unwrap().build().unwrap();
        let state = instance.initialize().unwrap();
        assert!((state.sum() - 20.0).abs() <= 1e-12 * 21.0);
        for &xi in &state.x {
            assert!((3.0..=7.0).contains(&xi), "{xi} outside box");
        }
    }

    #[test]
    fn infeasible_boxes_error_under_projection_but_not_penalty_only() {
        let base = "\
name = tight
[network]
n = 4
family = complete
[cost]
family = cpu
[box]
lower = 3
upper = 7
MODE
[constraint]
k = 100
[protocol]
variant = dt-linear
gain = 0.1
steps = 10
";
        // ΣM = 28 < K = 100: projection must fail
        let projected = base.replace("MODE\n", "");
        let instance = parse_scenario(&projected).unwrap().build().unwrap();
        assert!(matches!(
            instance.initialize(),
            Err(ScenarioError::BoxInfeasible { .. })
        ));
        // the penalty-only reading still defines a run
        let soft = base.replace("MODE", "mode = penalty-only");
        let instance = parse_scenario(&soft).unwrap().build().unwrap();
        let state = instance.initialize().unwrap();
        assert!((state.sum() - 100.0).abs() <= 1e-9 * 101.0);
    }

    #[test]
    fn default_epsilon_is_ten_times_max_curvature() {
        let cfg = "\
name = eps-default
[network]
n = 2
family = path
[cost]
family = quadratic
agent = 0.5 0.0 0.0
agent = 0.25 0.0 0.0
[box]
lower = 0
upper = 1
[constraint]
k = 1
[protocol]
variant = dt-linear
gain = 0.1
steps = 10
";
        let instance = parse_scenario(cfg).unwrap().build().unwrap();
        // max u = 2·0.5 = 1 → ε = 10
        assert_eq!(instance.epsilon, Some(10.0));
    }

    #[test]
    fn reserve_config_stacks_the_problem() {
        let cfg = "\
name = reserves
[network]
n = 6
family = k-hop-ring
k = 2
[cost]
family = quadratic
agent = 0.04 2.0 561.0
agent = 0.03 3.0 310.0
agent = 0.035 4.0 78.0
agent = 0.03 4.0 561.0
[constraint]
demand = 400
reserves = 2
battery_coeffs = -10.5 -11.0
rho_b = 0.02
[protocol]
variant = ct-actuation
gain = 1.0
dt = 0.01
t_final = 10
actuation = composite-sign-power 0.5 1.5
";
        let instance = parse_scenario(cfg).unwrap().build().unwrap();
        assert_eq!(instance.costs.len(), 6);
        let stacked = instance.stacked.as_ref().unwrap();
        assert_eq!(stacked.n_generators, 4);
        assert_eq!(stacked.n_batteries, 2);
        assert!(stacked.strictly_convex);
        assert!(instance.oracle.residual_kkt <= 1e-8 * (1.0 + instance.oracle.psi_star.abs()));
    }

    #[test]
    fn ct_dt_must_divide_phase_dwells() {
        let cfg = "\
name = switching
[network]
n = 4
[phase]
dwell = 0.25
edge = 0 1 1.0
[phase]
dwell = 0.25
edge = 2 3 1.0
[cost]
family = cpu
[constraint]
k = 8
[protocol]
variant = ct-linear
gain = 1.0
dt = 0.1
t_final = 5
";
        let err = parse_scenario(cfg).unwrap().build();
        assert!(err.is_err(), "dt=0.1 does not divide dwell 0.25");
    }

    #[test]
    fn determinism_same_seed_same_instance() {
        let cfg = "\
name = det
seed = 99
[network]
n = 10
family = random-geometric
radius = 0.5
partition_phases = 3
phase_dwell = 5
[cost]
family = cpu
[constraint]
k = 50
[init]
rule = random
[protocol]
variant = dt-communication
gain = 0.5
steps = 100
communication = log-quantizer 1
";
        let a = parse_scenario(cfg).unwrap().build().unwrap();
        let b = parse_scenario(cfg).unwrap().build().unwrap();
        assert_eq!(a.oracle.x_star, b.oracle.x_star);
        assert_eq!(a.initialize().unwrap().x, b.initialize().unwrap().x);
        for (pa, pb) in a.schedule.phases().iter().zip(b.schedule.phases()) {
            assert_eq!(pa.topology.weights(), pb.topology.weights());
        }
        // phases all disconnected, union connected
        for p in a.schedule.phases() {
            assert!(!p.topology.is_connected());
        }
        assert!(a.schedule.union_all().unwrap().is_connected());
    }
}
