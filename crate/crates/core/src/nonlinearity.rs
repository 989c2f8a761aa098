//! The nonlinear map library `h(·)` applied to agents' actuation or
//! communication, with analytical classification.
//!
//! Every provided kind is odd (`h(−z) = −h(z)`) with `h(0) = 0`; oddness over
//! bidirectional links is what keeps the allocation protocols sum-preserving.
//! Classification sorts maps into sign-preserving (`z·h(z) ≥ 0`), strongly
//! sign-preserving (strict for `z ≠ 0`), and sector-bounded
//! (`α̲ ≤ h(z)/z ≤ ᾱ`); only a positive sector lower bound buys the explicit
//! contraction-rate guarantee.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("quantizer level delta must be positive, got {0}")]
    BadDelta(f64),
    #[error("saturation limit must be positive, got {0}")]
    BadLimit(f64),
    #[error("sign-power exponent must be finite and >= 0, got {0}")]
    BadExponent(f64),
    #[error("composite sign-power requires 0 <= mu1 < 1 < mu2, got ({mu1}, {mu2})")]
    BadCompositePair { mu1: f64, mu2: f64 },
    #[error("operating range must satisfy lo < hi with 0 inside, got [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("cannot parse nonlinearity `{input}`: {reason}")]
    Parse { input: String, reason: String },
    #[error("verification needs at least 1000 samples, got {0}")]
    NotEnoughSamples(usize),
    #[error("verification sample must be finite, got {0}")]
    NonFiniteSample(f64),
}

/// A symmetric interval of inputs the map will see; must contain zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingRange {
    lo: f64,
    hi: f64,
}

impl OperatingRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self, MapError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || lo > 0.0 || hi < 0.0 {
            return Err(MapError::BadRange { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// `[−r, r]`.
    pub fn symmetric(r: f64) -> Result<Self, MapError> {
        Self::new(-r, r)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Largest input magnitude in the range; positive by construction.
    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

/// Sector envelope `lower ≤ h(z)/z ≤ upper` for `z ≠ 0` on an operating
/// range. `upper` may be `+∞` when the ratio is unbounded near zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    pub lower: f64,
    pub upper: f64,
}

/// Analytical classification of a map on an operating range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapClassification {
    pub odd: bool,
    pub sign_preserving: bool,
    pub strongly_sign_preserving: bool,
    pub sector: Option<Sector>,
    pub lipschitz: bool,
}

/// A concrete nonlinearity `h(·)` with parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearMap {
    Identity,
    /// Clamp to `[−limit, limit]`.
    Saturation { limit: f64 },
    /// `δ·round(z/δ)` with round-half-away-from-zero, which keeps the map
    /// odd at half-lattice points (round-half-even would not).
    UniformQuantizer { delta: f64 },
    /// `sgn(z)·exp(q_u(log|z|))`: uniform quantization in the log domain,
    /// hence bounded relative error. `h(0) = 0` by convention.
    LogQuantizer { delta: f64 },
    /// `sgn^μ(z) = z·|z|^{μ−1}`; `μ = 0` is the pure sign function and
    /// `μ = 1` the identity. `h(0) = 0` for every `μ`.
    SignPower { mu: f64 },
    /// `sgn^{μ₁}(z) + sgn^{μ₂}(z)` with `0 ≤ μ₁ < 1 < μ₂`: one term
    /// dominates on each side of `|z| = 1`, giving fixed-time convergence.
    CompositeSignPower { mu1: f64, mu2: f64 },
    /// `outer(inner(z))`.
    Composition {
        outer: Box<NonlinearMap>,
        inner: Box<NonlinearMap>,
    },
}

impl NonlinearMap {
    pub fn saturation(limit: f64) -> Result<Self, MapError> {
        let m = Self::Saturation { limit };
        m.validate().map(|_| m)
    }

    pub fn uniform_quantizer(delta: f64) -> Result<Self, MapError> {
        let m = Self::UniformQuantizer { delta };
        m.validate().map(|_| m)
    }

    pub fn log_quantizer(delta: f64) -> Result<Self, MapError> {
        let m = Self::LogQuantizer { delta };
        m.validate().map(|_| m)
    }

    pub fn sign_power(mu: f64) -> Result<Self, MapError> {
        let m = Self::SignPower { mu };
        m.validate().map(|_| m)
    }

    pub fn composite_sign_power(mu1: f64, mu2: f64) -> Result<Self, MapError> {
        let m = Self::CompositeSignPower { mu1, mu2 };
        m.validate().map(|_| m)
    }

    pub fn composition(outer: NonlinearMap, inner: NonlinearMap) -> Result<Self, MapError> {
        let m = Self::Composition {
            outer: Box::new(outer),
            inner: Box::new(inner),
        };
        m.validate().map(|_| m)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        match self {
            Self::Identity => Ok(()),
            Self::Saturation { limit } => {
                if limit.is_finite() && *limit > 0.0 {
                    Ok(())
                } else {
                    Err(MapError::BadLimit(*limit))
                }
            }
            Self::UniformQuantizer { delta } | Self::LogQuantizer { delta } => {
                if delta.is_finite() && *delta > 0.0 {
                    Ok(())
                } else {
                    Err(MapError::BadDelta(*delta))
                }
            }
            Self::SignPower { mu } => {
                if mu.is_finite() && *mu >= 0.0 {
                    Ok(())
                } else {
                    Err(MapError::BadExponent(*mu))
                }
            }
            Self::CompositeSignPower { mu1, mu2 } => {
                if mu1.is_finite() && mu2.is_finite() && *mu1 >= 0.0 && *mu1 < 1.0 && *mu2 > 1.0 {
                    Ok(())
                } else {
                    Err(MapError::BadCompositePair {
                        mu1: *mu1,
                        mu2: *mu2,
                    })
                }
            }
            Self::Composition { outer, inner } => {
                outer.validate()?;
                inner.validate()
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity)
    }

    /// Evaluate `h(z)`.
    ///
    /// Total over finite inputs; non-finite inputs are rejected upstream by
    /// the protocol's divergence checks, and propagate as NaN here.
    pub fn apply(&self, z: f64) -> f64 {
        debug_assert!(z.is_finite(), "nonlinearity input must be finite");
        match self {
            Self::Identity => z,
            Self::Saturation { limit } => z.clamp(-limit, *limit),
            Self::UniformQuantizer { delta } => delta * (z / delta).round(),
            Self::LogQuantizer { delta } => {
                if z == 0.0 {
                    0.0
                } else {
                    let q = delta * (z.abs().ln() / delta).round();
                    z.signum() * q.exp()
                }
            }
            Self::SignPower { mu } => sign_power(z, *mu),
            Self::CompositeSignPower { mu1, mu2 } => sign_power(z, *mu1) + sign_power(z, *mu2),
            Self::Composition { outer, inner } => outer.apply(inner.apply(z)),
        }
    }

    /// Analytically derived classification on the given operating range.
    pub fn classify(&self, range: &OperatingRange) -> MapClassification {
        let z_max = range.max_abs();
        match self {
            Self::Identity => MapClassification {
                odd: true,
                sign_preserving: true,
                strongly_sign_preserving: true,
                sector: Some(Sector {
                    lower: 1.0,
                    upper: 1.0,
                }),
                lipschitz: true,
            },
            Self::Saturation { limit } => MapClassification {
                odd: true,
                sign_preserving: true,
                strongly_sign_preserving: true,
                sector: Some(Sector {
                    lower: if z_max <= *limit { 1.0 } else { limit / z_max },
                    upper: 1.0,
                }),
                lipschitz: true,
            },
            // Dead zone |z| < δ/2 maps to 0: sign-preserving but not
            // strongly, and no positive sector lower bound exists.
            Self::UniformQuantizer { .. } => MapClassification {
                odd: true,
                sign_preserving: true,
                strongly_sign_preserving: false,
                sector: None,
                lipschitz: false,
            },
            // Quantizing log|z| with error ≤ δ/2 bounds the ratio h(z)/z
            // within [e^{−δ/2}, e^{δ/2}] on any range.
            Self::LogQuantizer { delta } => MapClassification {
                odd: true,
                sign_preserving: true,
                strongly_sign_preserving: true,
                sector: Some(Sector {
                    lower: (-delta / 2.0).exp(),
                    upper: (delta / 2.0).exp(),
                }),
                lipschitz: false,
            },
            Self::SignPower { mu } => {
                let ratio_at_zmax = z_max.powf(mu - 1.0);
                let (sector, lipschitz) = if *mu < 1.0 {
                    // ratio |z|^{μ−1} → ∞ near 0: unbounded above
                    (
                        Some(Sector {
                            lower: ratio_at_zmax,
                            upper: f64::INFINITY,
                        }),
                        false,
                    )
                } else if *mu == 1.0 {
                    (
                        Some(Sector {
                            lower: 1.0,
                            upper: 1.0,
                        }),
                        true,
                    )
                } else {
                    // ratio → 0 near the origin: no positive lower bound
                    (
                        Some(Sector {
                            lower: 0.0,
                            upper: ratio_at_zmax,
                        }),
                        true,
                    )
                };
                MapClassification {
                    odd: true,
                    sign_preserving: true,
                    strongly_sign_preserving: true,
                    sector,
                    lipschitz,
                }
            }
            Self::CompositeSignPower { mu1, mu2 } => {
                // ratio g(s) = s^{μ₁−1} + s^{μ₂−1} has a unique interior
                // minimum at s* = ((1−μ₁)/(μ₂−1))^{1/(μ₂−μ₁)}
                let s_star = ((1.0 - mu1) / (mu2 - 1.0)).powf(1.0 / (mu2 - mu1));
                let g = |s: f64| s.powf(mu1 - 1.0) + s.powf(mu2 - 1.0);
                let lower = if z_max >= s_star { g(s_star) } else { g(z_max) };
                MapClassification {
                    odd: true,
                    sign_preserving: true,
                    strongly_sign_preserving: true,
                    sector: Some(Sector {
                        lower,
                        upper: f64::INFINITY,
                    }),
                    lipschitz: false,
                }
            }
            Self::Composition { outer, inner } => {
                let ci = inner.classify(range);
                // Bound the inner output range when possible, so the outer
                // classification covers everything it will actually see.
                let outer_range = ci
                    .sector
                    .filter(|s| s.upper.is_finite() && s.upper > 0.0)
                    .and_then(|s| OperatingRange::symmetric(s.upper * z_max).ok());
                let co = outer.classify(&outer_range.unwrap_or(*range));
                let sector = match (outer_range, ci.sector, co.sector) {
                    (Some(_), Some(si), Some(so)) => Some(Sector {
                        lower: si.lower * so.lower,
                        upper: si.upper * so.upper,
                    }),
                    _ => None,
                };
                MapClassification {
                    odd: ci.odd && co.odd,
                    sign_preserving: ci.sign_preserving && co.sign_preserving,
                    strongly_sign_preserving: ci.strongly_sign_preserving
                        && co.strongly_sign_preserving,
                    sector,
                    lipschitz: ci.lipschitz && co.lipschitz,
                }
            }
        }
    }

    /// Parse a config-file map spec: a kind name followed by its parameters,
    /// e.g. `log-quantizer 4` or `composite-sign-power 0.5 1.5`. A
    /// composition is written `composition <outer> | <inner>`.
    pub fn parse(spec: &str) -> Result<Self, MapError> {
        let err = |reason: &str| MapError::Parse {
            input: spec.to_string(),
            reason: reason.to_string(),
        };
        let trimmed = spec.trim();
        let mut tokens = trimmed.split_whitespace();
        let kind = tokens.next().ok_or_else(|| err("empty spec"))?;
        if kind == "composition" {
            let rest = trimmed
                .strip_prefix("composition")
                .expect("prefix checked")
                .trim();
            let (outer, inner) = rest
                .split_once('|')
                .ok_or_else(|| err("composition needs `<outer> | <inner>`"))?;
            return Self::composition(Self::parse(outer)?, Self::parse(inner)?);
        }
        let params: Vec<f64> = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(&format!("bad numeric parameter `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        let arity = |want: usize| -> Result<(), MapError> {
            if params.len() == want {
                Ok(())
            } else {
                Err(err(&format!(
                    "`{kind}` takes {want} parameter(s), got {}",
                    params.len()
                )))
            }
        };
        match kind {
            "identity" => {
                arity(0)?;
                Ok(Self::Identity)
            }
            "saturation" => {
                arity(1)?;
                Self::saturation(params[0])
            }
            "uniform-quantizer" | "uniform" => {
                arity(1)?;
                Self::uniform_quantizer(params[0])
            }
            "log-quantizer" | "log" => {
                arity(1)?;
                Self::log_quantizer(params[0])
            }
            "sign-power" => {
                arity(1)?;
                Self::sign_power(params[0])
            }
            "composite-sign-power" => {
                arity(2)?;
                Self::composite_sign_power(params[0], params[1])
            }
            other => Err(err(&format!("unknown kind `{other}`"))),
        }
    }

    /// Canonical config-file spelling, parseable by [`NonlinearMap::parse`].
    pub fn spec_string(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Saturation { limit } => format!("saturation {limit}"),
            Self::UniformQuantizer { delta } => format!("uniform-quantizer {delta}"),
            Self::LogQuantizer { delta } => format!("log-quantizer {delta}"),
            Self::SignPower { mu } => format!("sign-power {mu}"),
            Self::CompositeSignPower { mu1, mu2 } => {
                format!("composite-sign-power {mu1} {mu2}")
            }
            Self::Composition { outer, inner } => {
                format!("composition {} | {}", outer.spec_string(), inner.spec_string())
            }
        }
    }
}

/// `sgn^μ(z) = z·|z|^{μ−1}`, computed as `sgn(z)·|z|^μ` so oddness is exact;
/// 0 at the origin for every `μ` including `μ = 0` (so `sgn(0) = 0` and the
/// optimizer is an equilibrium).
fn sign_power(z: f64, mu: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        z.signum() * z.abs().powf(mu)
    }
}

/// One empirical check failure from [`verify_classification`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub z: f64,
    pub check: CheckKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Oddness,
    SignPreservation,
    StrongSignPreservation,
    SectorLower,
    SectorUpper,
}

/// Result of empirically checking a claimed classification.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub samples_checked: usize,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check oddness, the `z·h(z)` sign conditions, and the sector envelope at
/// every sample point. Shipped kinds must come back with zero violations;
/// the report exists to catch wrong *claimed* classifications.
pub fn verify_classification(
    map: &NonlinearMap,
    claimed: &MapClassification,
    samples: &[f64],
) -> Result<VerificationReport, MapError> {
    if samples.len() < 1000 {
        return Err(MapError::NotEnoughSamples(samples.len()));
    }
    let mut violations = Vec::new();
    for &z in samples {
        if !z.is_finite() {
            return Err(MapError::NonFiniteSample(z));
        }
        let h = map.apply(z);
        let h_neg = map.apply(-z);
        if claimed.odd && h_neg != -h {
            violations.push(Violation {
                z,
                check: CheckKind::Oddness,
                detail: format!("h(-z) = {h_neg} but -h(z) = {}", -h),
            });
        }
        if claimed.sign_preserving && z * h < 0.0 {
            violations.push(Violation {
                z,
                check: CheckKind::SignPreservation,
                detail: format!("z·h(z) = {}", z * h),
            });
        }
        if claimed.strongly_sign_preserving && z != 0.0 && !(z * h > 0.0) {
            violations.push(Violation {
                z,
                check: CheckKind::StrongSignPreservation,
                detail: format!("z·h(z) = {}", z * h),
            });
        }
        if let Some(sector) = claimed.sector {
            if z != 0.0 {
                let ratio = h / z;
                let tol = 1e-12;
                if ratio < sector.lower - tol * (1.0 + sector.lower.abs()) {
                    violations.push(Violation {
                        z,
                        check: CheckKind::SectorLower,
                        detail: format!("h(z)/z = {ratio} < {}", sector.lower),
                    });
                }
                if sector.upper.is_finite()
                    && ratio > sector.upper + tol * (1.0 + sector.upper.abs())
                {
                    violations.push(Violation {
                        z,
                        check: CheckKind::SectorUpper,
                        detail: format!("h(z)/z = {ratio} > {}", sector.upper),
                    });
                }
            }
        }
    }
    Ok(VerificationReport {
        samples_checked: samples.len(),
        violations,
    })
}

/// Deterministic sample set over a range: an even grid (always containing 0
/// and the endpoints) mixed with seeded uniform draws.
pub fn sample_range(range: &OperatingRange, count: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut out = Vec::with_capacity(count);
    let grid = count / 2;
    for k in 0..grid {
        let t = k as f64 / (grid.max(2) - 1) as f64;
        out.push(range.lo() + t * (range.hi() - range.lo()));
    }
    out.push(0.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    while out.len() < count {
        out.push(rng.gen_range(range.lo()..=range.hi()));
    }
    out
}
