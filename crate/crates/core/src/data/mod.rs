//! Fused-sample representation, CSV ingestion and the formula grammar used to
//! build design matrices for every working model.
//!
//! A fused sample merges a primary sample, where `(Y, Z, X)` is recorded, with
//! an auxiliary sample where `(D, Z, X)` is recorded. The indicator `r` marks
//! primary rows.

mod csv_io;
mod design;
mod formula;

pub use csv_io::{read_fused_csv, read_fused_csv_from, write_fused_csv, write_fused_csv_to};
pub use design::{build_design, DesignMatrix};
pub(crate) use design::build_design_at;
pub use formula::{parse_formula, Factor, Formula, Term, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which covariates a working model is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSource {
    #[default]
    Observed,
    /// The noisy transforms `(z*, x*)` attached by [`crate::sim::misspecify`].
    Transformed,
}

/// Transformed instrument and covariates attached to a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedCovariates {
    pub z: u8,
    pub x: Vec<f64>,
}

/// One merged observation `(R, RY, (1-R)D, Z, X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRow {
    pub r: u8,
    pub y: Option<f64>,
    pub d: Option<u8>,
    pub z: u8,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transformed: Option<TransformedCovariates>,
}

impl FusedRow {
    pub fn primary(y: f64, z: u8, x: Vec<f64>) -> Self {
        FusedRow {
            r: 1,
            y: Some(y),
            d: None,
            z,
            x,
            transformed: None,
        }
    }

    pub fn auxiliary(d: u8, z: u8, x: Vec<f64>) -> Self {
        FusedRow {
            r: 0,
            y: None,
            d: Some(d),
            z,
            x,
            transformed: None,
        }
    }

    pub fn is_primary(&self) -> bool {
        self.r == 1
    }

    /// `R * Y`, zero on auxiliary rows.
    #[inline]
    pub fn ry(&self) -> f64 {
        self.y.unwrap_or(0.0)
    }

    /// `(1 - R) * D`, zero on primary rows.
    #[inline]
    pub fn rd(&self) -> f64 {
        self.d.map_or(0.0, f64::from)
    }

    /// Instrument and covariates as seen by a model reading `source`.
    pub fn point(&self, source: CovariateSource) -> Result<(f64, &[f64])> {
        match source {
            CovariateSource::Observed => Ok((f64::from(self.z), &self.x)),
            CovariateSource::Transformed => self
                .transformed
                .as_ref()
                .map(|t| (f64::from(t.z), t.x.as_slice()))
                .ok_or(Error::MissingTransformed),
        }
    }

    fn validate(&self, line: usize, p: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Consistency { line, msg });
        if self.r > 1 {
            return fail(format!("r must be 0 or 1, got {}", self.r));
        }
        if self.z > 1 {
            return fail(format!("z must be 0 or 1, got {}", self.z));
        }
        match (self.r, self.y.is_some(), self.d.is_some()) {
            (1, true, false) | (0, false, true) => {}
            (1, _, _) => return fail("primary row (r=1) needs y and no d".into()),
            _ => return fail("auxiliary row (r=0) needs d and no y".into()),
        }
        if let Some(d) = self.d {
            if d > 1 {
                return fail(format!("d must be 0 or 1, got {d}"));
            }
        }
        if let Some(y) = self.y {
            if !y.is_finite() {
                return fail("y is not finite".into());
            }
        }
        if self.x.len() != p {
            return fail(format!("expected {p} covariates, got {}", self.x.len()));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return fail("covariates must be finite".into());
        }
        if let Some(t) = &self.transformed {
            if t.z > 1 || t.x.len() != p || t.x.iter().any(|v| !v.is_finite()) {
                return fail("malformed transformed covariates".into());
            }
        }
        Ok(())
    }
}

/// Validated fused sample. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedSample {
    rows: Vec<FusedRow>,
    n_p: usize,
    p: usize,
}

impl FusedSample {
    pub fn new(rows: Vec<FusedRow>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::DegenerateSample(format!(
                "need at least 2 rows, got {}",
                rows.len()
            )));
        }
        let p = rows[0].x.len();
        for (i, row) in rows.iter().enumerate() {
            row.validate(i + 1, p)?;
        }
        let n_p = rows.iter().filter(|r| r.r == 1).count();
        if n_p == 0 || n_p == rows.len() {
            return Err(Error::DegenerateSample(format!(
                "both samples must be nonempty (n_p = {n_p}, n_a = {})",
                rows.len() - n_p
            )));
        }
        Ok(FusedSample { rows, n_p, p })
    }

    pub fn rows(&self) -> &[FusedRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<FusedRow> {
        self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn n_primary(&self) -> usize {
        self.n_p
    }

    pub fn n_auxiliary(&self) -> usize {
        self.rows.len() - self.n_p
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Empirical mean of `r`.
    pub fn q_hat(&self) -> f64 {
        self.n_p as f64 / self.rows.len() as f64
    }

    pub fn has_transformed(&self) -> bool {
        self.rows.iter().all(|r| r.transformed.is_some())
    }

    /// Drop any attached transformed covariates.
    pub fn without_transformed(&self) -> FusedSample {
        let rows = self
            .rows
            .iter()
            .map(|r| FusedRow {
                transformed: None,
                ..r.clone()
            })
            .collect();
        FusedSample {
            rows,
            n_p: self.n_p,
            p: self.p,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_hat_is_mean_of_r() {
        let rows = vec![
            FusedRow::primary(1.0, 1, vec![0.1]),
            FusedRow::primary(2.0, 0, vec![0.2]),
            FusedRow::auxiliary(1, 0, vec![0.3]),
        ];
        let s = FusedSample::new(rows).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.n_primary(), 2);
        assert_eq!(s.n_auxiliary(), 1);
        assert_eq!(s.q_hat(), 2.0 / 3.0);
    }

    #[test]
    fn rejects_single_population() {
        let rows = vec![
            FusedRow::primary(1.0, 1, vec![0.1]),
            FusedRow::primary(2.0, 0, vec![0.2]),
        ];
        assert!(matches!(
            FusedSample::new(rows),
            Err(Error::DegenerateSample(_))
        ));
        assert!(matches!(
            FusedSample::new(vec![]),
            Err(Error::DegenerateSample(_))
        ));
        assert!(matches!(
            FusedSample::new(vec![FusedRow::primary(1.0, 1, vec![0.1])]),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn rejects_inconsistent_missingness() {
        let mut bad = FusedRow::primary(1.0, 1, vec![0.1]);
        bad.d = Some(1);
        let rows = vec![bad, FusedRow::auxiliary(1, 0, vec![0.3])];
        assert!(matches!(
            FusedSample::new(rows),
            Err(Error::Consistency { line: 1, .. })
        ));
    }

    #[test]
    fn transformed_point_requires_attachment() {
        let row = FusedRow::primary(1.0, 1, vec![0.1]);
        assert!(matches!(
            row.point(CovariateSource::Transformed),
            Err(Error::MissingTransformed)
        ));
        let (z, x) = row.point(CovariateSource::Observed).unwrap();
        assert_eq!(z, 1.0);
        assert_eq!(x, &[0.1]);
    }
}
