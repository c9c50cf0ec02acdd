use nalgebra::DMatrix;

use super::{CovariateSource, FusedSample, Formula, Term};
use crate::error::Result;

/// Dense row-major `n x k` design matrix with one column per formula term.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Vec<f64>,
    n: usize,
    k: usize,
    labels: Vec<Term>,
    source: CovariateSource,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    pub fn labels(&self) -> &[Term] {
        &self.labels
    }

    /// Covariates the columns were evaluated on.
    pub fn source(&self) -> CovariateSource {
        self.source
    }

    /// `row(i) . beta`.
    #[inline]
    pub fn dot(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.k, &self.values)
    }

    pub(crate) fn from_rows(
        formula: &Formula,
        source: CovariateSource,
        n: usize,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), n * formula.len());
        DesignMatrix {
            values,
            n,
            k: formula.len(),
            labels: formula.terms().to_vec(),
            source,
        }
    }
}

/// Evaluates every term of `formula` on every row of `sample`.
///
/// With [`CovariateSource::Transformed`] the terms read the `(z*, x*)`
/// attached to each row.
pub fn build_design(
    formula: &Formula,
    sample: &FusedSample,
    source: CovariateSource,
) -> Result<DesignMatrix> {
    build_design_at(formula, sample, source, None)
}

/// Like [`build_design`] but with the instrument fixed to `z` on every row.
pub(crate) fn build_design_at(
    formula: &Formula,
    sample: &FusedSample,
    source: CovariateSource,
    z_fixed: Option<f64>,
) -> Result<DesignMatrix> {
    formula.check_dimension(sample.p())?;
    let k = formula.len();
    let n = sample.n();
    let mut values = vec![0.0; n * k];
    for (row, out) in sample.rows().iter().zip(values.chunks_exact_mut(k)) {
        let (z, x) = row.point(source)?;
        formula.eval_into(z_fixed.unwrap_or(z), x, out);
    }
    Ok(DesignMatrix::from_rows(formula, source, n, values))
}
