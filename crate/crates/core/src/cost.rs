//! Generator cost curves, smooth box-limit penalties, and their derivatives.
//!
//! Each generator carries a strictly convex quadratic cost `γx² + βx + α`
//! over its power deviation `x` (MW). Box limits `[m_lo, m_hi]` are enforced
//! softly through even-power penalty terms `c·max(x − m_hi, 0)^σ` and
//! `c·max(m_lo − x, 0)^σ`, which keep the total objective smooth for σ ≥ 2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five stock generator classes, plus a marker for user-supplied rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TypeTag {
    A,
    B,
    C,
    D,
    E,
    Custom,
}

impl TypeTag {
    /// All stock tags in draw order.
    pub const STOCK: [TypeTag; 5] = [TypeTag::A, TypeTag::B, TypeTag::C, TypeTag::D, TypeTag::E];

    pub fn parse(s: &str) -> Option<TypeTag> {
        match s {
            "A" => Some(TypeTag::A),
            "B" => Some(TypeTag::B),
            "C" => Some(TypeTag::C),
            "D" => Some(TypeTag::D),
            "E" => Some(TypeTag::E),
            "custom" => Some(TypeTag::Custom),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TypeTag::A => "A",
            TypeTag::B => "B",
            TypeTag::C => "C",
            TypeTag::D => "D",
            TypeTag::E => "E",
            TypeTag::Custom => "custom",
        }
    }
}

/// Per-generator cost coefficients and box limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Cost offset [$/h].
    pub alpha: f64,
    /// Linear coefficient [$/MWh].
    pub beta: f64,
    /// Quadratic coefficient [$/MW²h]; must be strictly positive.
    pub gamma: f64,
    /// Minimum power [MW].
    pub m_lo: f64,
    /// Maximum power [MW].
    pub m_hi: f64,
    /// Stock label or `Custom`.
    pub tag: TypeTag,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("gamma must be strictly positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("box limits must satisfy m_lo < m_hi, got [{0}, {1}]")]
    EmptyBox(f64, f64),
    #[error("parameter {0} is not finite")]
    NonFinite(&'static str),
    #[error("penalty weight c must be strictly positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("penalty exponent sigma must be an integer >= 2, got {0}")]
    SigmaTooSmall(u32),
}

impl GeneratorParams {
    /// Stock parameter row for one of the built-in generator classes.
    ///
    /// All stock rows use a 20 MW minimum.
    pub fn stock(tag: TypeTag) -> GeneratorParams {
        let (alpha, beta, gamma, m_hi) = match tag {
            TypeTag::A => (561.0, 2.0, 0.04, 80.0),
            TypeTag::B => (310.0, 3.0, 0.03, 90.0),
            TypeTag::C => (78.0, 4.0, 0.035, 70.0),
            TypeTag::D => (561.0, 4.0, 0.03, 70.0),
            TypeTag::E => (78.0, 2.5, 0.04, 80.0),
            TypeTag::Custom => panic!("no stock row for custom tag"),
        };
        GeneratorParams {
            alpha,
            beta,
            gamma,
            m_lo: 20.0,
            m_hi,
            tag,
        }
    }

    /// A custom row; validation is the caller's job via [`GeneratorParams::validate`].
    pub fn custom(alpha: f64, beta: f64, gamma: f64, m_lo: f64, m_hi: f64) -> GeneratorParams {
        GeneratorParams {
            alpha,
            beta,
            gamma,
            m_lo,
            m_hi,
            tag: TypeTag::Custom,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("m_lo", self.m_lo),
            ("m_hi", self.m_hi),
        ] {
            if !v.is_finite() {
                return Err(ParamError::NonFinite(name));
            }
        }
        if self.gamma <= 0.0 {
            return Err(ParamError::NonPositiveGamma(self.gamma));
        }
        if self.m_lo >= self.m_hi {
            return Err(ParamError::EmptyBox(self.m_lo, self.m_hi));
        }
        Ok(())
    }

    /// Quadratic generation cost `γx² + βx + α` [$/h].
    pub fn base_cost(&self, x: f64) -> f64 {
        self.gamma * x * x + self.beta * x + self.alpha
    }

    /// Smooth box penalty `c·(max(x − m_hi, 0)^σ + max(m_lo − x, 0)^σ)` [$/h].
    ///
    /// Exactly zero iff `m_lo <= x <= m_hi`.
    pub fn penalty(&self, pen: &PenaltyConfig, x: f64) -> f64 {
        let over = (x - self.m_hi).max(0.0);
        let under = (self.m_lo - x).max(0.0);
        pen.c * (over.powi(pen.sigma as i32) + under.powi(pen.sigma as i32))
    }

    /// Base cost plus box penalty [$/h].
    pub fn total_cost(&self, pen: &PenaltyConfig, x: f64) -> f64 {
        self.base_cost(x) + self.penalty(pen, x)
    }

    /// Marginal cost of the penalized objective [$/MWh].
    ///
    /// `2γx + β + cσ·max(x − m_hi, 0)^{σ−1} − cσ·max(m_lo − x, 0)^{σ−1}`;
    /// continuous everywhere for σ ≥ 2 and strictly increasing.
    pub fn gradient(&self, pen: &PenaltyConfig, x: f64) -> f64 {
        let over = (x - self.m_hi).max(0.0);
        let under = (self.m_lo - x).max(0.0);
        let cs = pen.c * pen.sigma as f64;
        let e = (pen.sigma - 1) as i32;
        2.0 * self.gamma * x + self.beta + cs * over.powi(e) - cs * under.powi(e)
    }
}

/// Weight and exponent of the smooth box penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Penalty weight, strictly positive.
    pub c: f64,
    /// Penalty exponent; integers >= 2 keep the gradient continuous.
    pub sigma: u32,
}

impl PenaltyConfig {
    pub fn new(c: f64, sigma: u32) -> Result<PenaltyConfig, ParamError> {
        let pen = PenaltyConfig { c, sigma };
        pen.validate()?;
        Ok(pen)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !self.c.is_finite() || self.c <= 0.0 {
            return Err(ParamError::NonPositiveWeight(self.c));
        }
        if self.sigma < 2 {
            return Err(ParamError::SigmaTooSmall(self.sigma));
        }
        Ok(())
    }
}

impl Default for PenaltyConfig {
    /// `c = 1`, `σ = 2`: the weights used by every bundled scenario.
    fn default() -> Self {
        PenaltyConfig { c: 1.0, sigma: 2 }
    }
}
