//! Test payoffs on `[L, inf)`, selected by name like the models.

use std::fmt;

use crate::model::{ModelError, ParamTable, Resolved};

/// Regularity class of a payoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    /// Bounded with a bounded continuous derivative.
    C1,
    /// Bounded measurable; no derivative is available.
    Measurable,
}

pub trait TestFunction: Send + Sync + fmt::Debug {
    fn id(&self) -> &'static str;
    fn value(&self, y: f64) -> f64;
    /// `f'(y)`, or `None` for measurable-only payoffs.
    fn derivative(&self, y: f64) -> Option<f64>;
    fn smoothness(&self) -> Smoothness;
    /// Points where `f` or `f'` fails to be smooth; quadrature splits there.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    fn sup_norm(&self) -> f64;
    fn params(&self) -> ParamTable;
}

/// `c (1 - exp(-k (y - L)))`
#[derive(Debug, Clone, PartialEq)]
pub struct ExpMinus {
    pub scale: f64,
    pub rate: f64,
    pub level: f64,
}

impl TestFunction for ExpMinus {
    fn id(&self) -> &'static str {
        "expm"
    }
    #[inline]
    fn value(&self, y: f64) -> f64 {
        -self.scale * (-self.rate * (y - self.level)).exp_m1()
    }
    #[inline]
    fn derivative(&self, y: f64) -> Option<f64> {
        Some(self.scale * self.rate * (-self.rate * (y - self.level)).exp())
    }
    fn smoothness(&self) -> Smoothness {
        Smoothness::C1
    }
    fn sup_norm(&self) -> f64 {
        // unbounded below L, but only [L, inf) is ever used
        self.scale.abs()
    }
    fn params(&self) -> ParamTable {
        [("scale", self.scale), ("rate", self.rate)].iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

/// Cubic `C^1` ramp from 0 at `L` to `c` at `L + w`, constant afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothStep {
    pub scale: f64,
    pub width: f64,
    pub level: f64,
}

impl TestFunction for SmoothStep {
    fn id(&self) -> &'static str {
        "smoothstep"
    }
    #[inline]
    fn value(&self, y: f64) -> f64 {
        let t = ((y - self.level) / self.width).clamp(0.0, 1.0);
        self.scale * t * t * (3.0 - 2.0 * t)
    }
    #[inline]
    fn derivative(&self, y: f64) -> Option<f64> {
        let t = (y - self.level) / self.width;
        if !(0.0..=1.0).contains(&t) {
            return Some(0.0);
        }
        Some(self.scale * 6.0 * t * (1.0 - t) / self.width)
    }
    fn smoothness(&self) -> Smoothness {
        Smoothness::C1
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.level + self.width]
    }
    fn sup_norm(&self) -> f64 {
        self.scale.abs()
    }
    fn params(&self) -> ParamTable {
        [("scale", self.scale), ("width", self.width)].iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

/// `c 1{y > K}`
#[derive(Debug, Clone, PartialEq)]
pub struct Indicator {
    pub scale: f64,
    pub strike: f64,
}

impl TestFunction for Indicator {
    fn id(&self) -> &'static str {
        "indicator"
    }
    #[inline]
    fn value(&self, y: f64) -> f64 {
        if y > self.strike {
            self.scale
        } else {
            0.0
        }
    }
    fn derivative(&self, _y: f64) -> Option<f64> {
        None
    }
    fn smoothness(&self) -> Smoothness {
        Smoothness::Measurable
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.strike]
    }
    fn sup_norm(&self) -> f64 {
        self.scale.abs()
    }
    fn params(&self) -> ParamTable {
        [("scale", self.scale), ("K", self.strike)].iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

/// Constant payoff `c`; with `c = 0` this is the zero payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    pub id: &'static str,
    pub scale: f64,
}

impl TestFunction for Constant {
    fn id(&self) -> &'static str {
        self.id
    }
    #[inline]
    fn value(&self, _y: f64) -> f64 {
        self.scale
    }
    fn derivative(&self, _y: f64) -> Option<f64> {
        Some(0.0)
    }
    fn smoothness(&self) -> Smoothness {
        Smoothness::C1
    }
    fn sup_norm(&self) -> f64 {
        self.scale.abs()
    }
    fn params(&self) -> ParamTable {
        if self.id == "zero" {
            ParamTable::new()
        } else {
            [("scale".to_string(), self.scale)].into_iter().collect()
        }
    }
}

type PayoffFactory = fn(&ParamTable, f64) -> Result<Box<dyn TestFunction>, ModelError>;

pub struct PayoffEntry {
    pub id: &'static str,
    pub defaults: &'static [(&'static str, f64)],
    build: PayoffFactory,
}

pub static PAYOFFS: &[PayoffEntry] = &[
    PayoffEntry {
        id: "expm",
        defaults: &[("scale", 1.0), ("rate", 1.0)],
        build: |p, level| {
            let r = Resolved::new("expm", PAYOFFS[0].defaults, p)?;
            r.require("rate", r.get("rate") > 0.0, "must be positive")?;
            Ok(Box::new(ExpMinus { scale: r.get("scale"), rate: r.get("rate"), level }))
        },
    },
    PayoffEntry {
        id: "smoothstep",
        defaults: &[("scale", 1.0), ("width", 1.0)],
        build: |p, level| {
            let r = Resolved::new("smoothstep", PAYOFFS[1].defaults, p)?;
            r.require("width", r.get("width") > 0.0, "must be positive")?;
            Ok(Box::new(SmoothStep { scale: r.get("scale"), width: r.get("width"), level }))
        },
    },
    PayoffEntry {
        id: "indicator",
        defaults: &[("scale", 1.0), ("K", 1.0)],
        build: |p, level| {
            let r = Resolved::new("indicator", PAYOFFS[2].defaults, p)?;
            r.require("K", r.get("K") >= level, "strike must not lie below L")?;
            Ok(Box::new(Indicator { scale: r.get("scale"), strike: r.get("K") }))
        },
    },
    PayoffEntry {
        id: "zero",
        defaults: &[],
        build: |p, _| {
            Resolved::new("zero", PAYOFFS[3].defaults, p)?;
            Ok(Box::new(Constant { id: "zero", scale: 0.0 }))
        },
    },
    PayoffEntry {
        id: "unit",
        defaults: &[("scale", 1.0)],
        build: |p, _| {
            let r = Resolved::new("unit", PAYOFFS[4].defaults, p)?;
            Ok(Box::new(Constant { id: "unit", scale: r.get("scale") }))
        },
    },
];

/// Build a registry payoff by id for boundary level `level`.
pub fn build_payoff(id: &str, params: &ParamTable, level: f64) -> Result<Box<dyn TestFunction>, ModelError> {
    PAYOFFS
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| ModelError::UnknownPayoff(id.to_string()))
        .and_then(|e| (e.build)(params, level))
}
