use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A variable a factor can refer to. `Z` sorts before every `X(j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Z,
    /// Covariate `x_j`, 1-based.
    X(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Factor {
    pub var: Var,
    pub power: u32,
}

/// Product of powered factors. The empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    factors: Vec<Factor>,
}

impl Term {
    pub fn intercept() -> Self {
        Term { factors: vec![] }
    }

    fn from_factors(mut factors: Vec<Factor>) -> Self {
        factors.sort();
        let mut merged: Vec<Factor> = Vec::with_capacity(factors.len());
        for f in factors {
            match merged.last_mut() {
                Some(last) if last.var == f.var => last.power += f.power,
                _ => merged.push(f),
            }
        }
        Term { factors: merged }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn is_intercept(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|f| f.power).sum()
    }

    pub fn has_z(&self) -> bool {
        self.factors.iter().any(|f| f.var == Var::Z)
    }

    /// Value of the term at instrument `z` and covariates `x`.
    #[inline]
    pub fn eval(&self, z: f64, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for f in &self.factors {
            let base = match f.var {
                Var::Z => z,
                Var::X(j) => x[j - 1],
            };
            v *= if f.power == 1 {
                base
            } else {
                base.powi(f.power as i32)
            };
        }
        v
    }
}

impl Ord for Term {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.factors.cmp(&other.factors))
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        for (i, factor) in self.factors.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            match factor.var {
                Var::Z => write!(f, "z")?,
                Var::X(j) => write!(f, "x{j}")?,
            }
            if factor.power > 1 {
                write!(f, "^{}", factor.power)?;
            }
        }
        Ok(())
    }
}

/// Linear predictor specification: a sorted set of distinct terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Formula {
    terms: Vec<Term>,
}

impl Formula {
    pub fn new(mut terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Syntax("formula has no terms".into()));
        }
        terms.sort();
        for pair in terms.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::DuplicateTerm(pair[0].to_string()));
            }
        }
        Ok(Formula { terms })
    }

    pub fn intercept_only() -> Self {
        Formula {
            terms: vec![Term::intercept()],
        }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn has_z(&self) -> bool {
        self.terms.iter().any(Term::has_z)
    }

    /// Largest covariate index referenced, 0 when none.
    pub fn max_x_index(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| t.factors.iter())
            .filter_map(|f| match f.var {
                Var::X(j) => Some(j),
                Var::Z => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn check_dimension(&self, p: usize) -> Result<()> {
        let j = self.max_x_index();
        if j > p {
            return Err(Error::IndexOutOfRange { index: j, p });
        }
        Ok(())
    }

    /// Writes the term values at `(z, x)` into `out`.
    #[inline]
    pub fn eval_into(&self, z: f64, x: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.eval(z, x);
        }
    }

    pub fn eval(&self, z: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.terms.len()];
        self.eval_into(z, x, &mut out);
        out
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(Term::to_string).collect()
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_formula(s)
    }
}

impl Serialize for Formula {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_formula(&s).map_err(serde::de::Error::custom)
    }
}

/// Parses `"1 + z + x1 + x1^2 + x1*x3"`-style formulas.
///
/// Terms are separated by `+`, factors by `*`, and powers are written `^k`
/// with integer `k >= 1`. The token `1` is only valid as a standalone term.
/// Covariate indices are checked against the data later, in
/// [`build_design`](super::build_design).
pub fn parse_formula(text: &str) -> Result<Formula> {
    if text.trim().is_empty() {
        return Err(Error::Syntax("empty formula".into()));
    }
    let mut terms = Vec::new();
    for raw in text.split('+') {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(Error::Syntax(format!("empty term in `{text}`")));
        }
        terms.push(parse_term(raw)?);
    }
    Formula::new(terms)
}

fn parse_term(raw: &str) -> Result<Term> {
    if raw == "1" {
        return Ok(Term::intercept());
    }
    let mut factors = Vec::new();
    for piece in raw.split('*') {
        let piece = piece.trim();
        if piece.is_empty() {
            return Err(Error::Syntax(format!("empty factor in term `{raw}`")));
        }
        factors.push(parse_factor(piece)?);
    }
    Ok(Term::from_factors(factors))
}

fn parse_factor(piece: &str) -> Result<Factor> {
    let (base, power) = match piece.split_once('^') {
        Some((b, k)) => {
            let k = k.trim();
            let power: u32 = k
                .parse()
                .map_err(|_| Error::Syntax(format!("bad exponent `{k}` in `{piece}`")))?;
            if power == 0 {
                return Err(Error::Syntax(format!("exponent must be >= 1 in `{piece}`")));
            }
            (b.trim(), power)
        }
        None => (piece, 1),
    };
    let var = match base {
        "z" => Var::Z,
        "1" => {
            return Err(Error::Syntax(format!(
                "intercept `1` cannot be part of a product (`{piece}`)"
            )))
        }
        b if b.starts_with('x') => {
            let digits = &b[1..];
            if digits.is_empty() || !digits.bytes().all(|c| c.is_ascii_digit()) {
                return Err(Error::Syntax(format!("bad token `{b}`")));
            }
            let j: usize = digits
                .parse()
                .map_err(|_| Error::Syntax(format!("bad token `{b}`")))?;
            if j == 0 {
                return Err(Error::Syntax("covariates are numbered from x1".into()));
            }
            Var::X(j)
        }
        b => return Err(Error::Syntax(format!("bad token `{b}`"))),
    };
    Ok(Factor { var, power })
}
