use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FusedRow, FusedSample, TransformedCovariates};
use crate::error::{Error, Result};
use crate::inference::{normal_cdf, normal_quantile};
use crate::nuisance::expit;

/// Law of each covariate coordinate in the population that records `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum CovariateLaw {
    /// Truncated normal on `(0, 1)`.
    TruncNormal { mean: f64, sd: f64 },
    Uniform,
}

impl CovariateLaw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateLaw::Uniform => rng.random::<f64>(),
            CovariateLaw::TruncNormal { mean, sd } => {
                sample_truncnorm(mean, sd, 0.0, 1.0, rng).expect("valid truncated normal")
            }
        }
    }

    /// Mean of one coordinate.
    pub fn mean(&self) -> f64 {
        match *self {
            CovariateLaw::Uniform => 0.5,
            CovariateLaw::TruncNormal { mean, sd } => {
                let a = (0.0 - mean) / sd;
                let b = (1.0 - mean) / sd;
                let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
                mean + sd * (phi(a) - phi(b)) / (normal_cdf(b) - normal_cdf(a))
            }
        }
    }
}

/// Which sample carries the target population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionLayout {
    /// The `r = 1` rows (recording `Y`) come from the target population.
    #[default]
    Standard,
    /// The `r = 0` rows (recording `D`) come from the target population and
    /// the outcome sample shares its conditional law given `X` but draws `X`
    /// from [`DgpParams::aux_covariates`].
    Reversed,
}

/// Parameters of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    /// Mean of the latent confounder: `E(U | X) = vartheta' X`.
    pub vartheta: [f64; 3],
    /// Instrument model `pr(Z = 1 | X) = expit(psi' (1, X))`.
    pub psi: [f64; 4],
    /// Treatment model `expit(xi' (1, Z, X))`.
    pub xi: [f64; 5],
    /// Effect curve `gamma' (1, X)`.
    pub gamma: [f64; 4],
    pub outcome_slope: f64,
    pub confounder_effect: f64,
    pub noise_sd: f64,
    /// Additive shift of the treatment probability by `U - vartheta' X`.
    pub confounder_load: f64,
    /// `pr(R = 1)`.
    pub q0: f64,
    pub aux_covariates: CovariateLaw,
    #[serde(default)]
    pub layout: FusionLayout,
}

impl Default for DgpParams {
    fn default() -> Self {
        DgpParams {
            vartheta: [0.5, -0.5, 0.0],
            psi: [-1.0, 0.5, 0.5, 0.5],
            xi: [-1.3, 1.2, 0.5, -0.25, -0.25],
            gamma: [2.0, 0.5, 0.5, 0.5],
            outcome_slope: 1.25,
            confounder_effect: 6.0,
            noise_sd: 1.0,
            confounder_load: 0.2,
            q0: 0.7,
            aux_covariates: CovariateLaw::TruncNormal { mean: 0.5, sd: 1.0 },
            layout: FusionLayout::Standard,
        }
    }
}

impl DgpParams {
    /// A constant effect equal to the default truth, with identical
    /// covariate laws in both samples.
    pub fn homogeneous() -> Self {
        DgpParams {
            gamma: [2.75, 0.0, 0.0, 0.0],
            aux_covariates: CovariateLaw::Uniform,
            ..Default::default()
        }
    }

    /// Target population records `D`; the outcome sample draws `X` from a
    /// truncated normal centred at 0.8.
    pub fn reversed() -> Self {
        DgpParams {
            aux_covariates: CovariateLaw::TruncNormal { mean: 0.8, sd: 1.0 },
            layout: FusionLayout::Reversed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q0 > 0.0 && self.q0 < 1.0) {
            return Err(Error::InvalidArgument(format!("q0 = {} not in (0, 1)", self.q0)));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidArgument("noise_sd must be non-negative".into()));
        }
        if let CovariateLaw::TruncNormal { sd, .. } = self.aux_covariates {
            if !(sd > 0.0) {
                return Err(Error::InvalidArgument("covariate sd must be positive".into()));
            }
        }
        Ok(())
    }

    /// `E{gamma' (1, X)}` over the target population, whose covariates are
    /// uniform on the unit cube.
    pub fn true_delta(&self) -> f64 {
        self.gamma[0] + 0.5 * self.gamma[1..].iter().sum::<f64>()
    }

    fn dot_x(coef: &[f64], x: &[f64; 3]) -> f64 {
        coef.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn instrument_prob(&self, x: &[f64; 3]) -> f64 {
        expit(self.psi[0] + Self::dot_x(&self.psi[1..], x))
    }

    fn treatment_prob(&self, z: u8, x: &[f64; 3]) -> f64 {
        expit(self.xi[0] + self.xi[1] * f64::from(z) + Self::dot_x(&self.xi[2..], x))
    }
}

/// Inverse-CDF draw from `N(mu, sigma^2)` truncated to `[lo, hi]`.
///
/// Intervals above the mean are handled through the upper tail so that far
/// truncation points keep their precision.
pub fn sample_truncnorm<R: Rng + ?Sized>(mu: f64, sigma: f64, lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(lo < hi) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "truncated normal needs lo < hi and sigma > 0, got ({lo}, {hi}) and {sigma}"
        )));
    }
    let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    let t = if a > 0.0 {
        let (sa, sb) = (normal_cdf(-a), normal_cdf(-b));
        -normal_quantile(sa - u * (sa - sb))
    } else {
        let (fa, fb) = (normal_cdf(a), normal_cdf(b));
        normal_quantile(fa + u * (fb - fa))
    };
    let v = mu + sigma * t;
    Ok(if v.is_finite() { v.clamp(lo, hi) } else { lo })
}

/// Latent values behind one generated row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenTruth {
    pub u: f64,
    /// Treatment actually received; absent where it was never drawn.
    pub d: Option<u8>,
    /// Treatment probability before clamping into `[0, 1]`.
    pub raw_treatment_prob: Option<f64>,
}

/// A simulated sample together with the latent data behind it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub sample: FusedSample,
    /// Aligned with `sample.rows()`.
    pub hidden: Vec<HiddenTruth>,
    /// Structural draws whose treatment probability left `[0, 1]`.
    pub clamped: usize,
    /// Structural draws of the treatment in total.
    pub structural_draws: usize,
}

impl Generated {
    pub fn clamp_rate(&self) -> f64 {
        if self.structural_draws == 0 {
            0.0
        } else {
            self.clamped as f64 / self.structural_draws as f64
        }
    }
}

struct Draw {
    x: [f64; 3],
    z: u8,
    u: f64,
    d: u8,
    y: f64,
    raw: f64,
}

/// One unit from the structural model: latent `U`, instrument, treatment
/// and outcome.
fn draw_structural<R: Rng + ?Sized>(p: &DgpParams, x: [f64; 3], rng: &mut R) -> Draw {
    let centre = DgpParams::dot_x(&p.vartheta, &x);
    let u = sample_truncnorm(centre, 1.0, centre - 1.0, centre + 1.0, rng).expect("unit-width interval");
    let z = u8::from(rng.random::<f64>() < p.instrument_prob(&x));
    let raw = p.treatment_prob(z, &x) + p.confounder_load * (u - centre);
    let d = u8::from(rng.random::<f64>() < raw.clamp(0.0, 1.0));
    let effect = p.gamma[0] + DgpParams::dot_x(&p.gamma[1..], &x);
    let noise: f64 = rng.sample(StandardNormal);
    let y = effect * f64::from(d) + p.outcome_slope * x.iter().sum::<f64>() + p.confounder_effect * u + p.noise_sd * noise;
    Draw { x, z, u, d, y, raw }
}

fn uniform_x<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn law_x<R: Rng + ?Sized>(law: &CovariateLaw, rng: &mut R) -> [f64; 3] {
    [law.draw(rng), law.draw(rng), law.draw(rng)]
}

/// Generates a fused sample of total size `n` with `n_p ~ Binomial(n, q0)`
/// rows recording `(Y, Z, X)` and the rest recording `(D, Z, X)`. Primary
/// rows come first.
pub fn gen_fused<R: Rng + ?Sized>(params: &DgpParams, n: usize, rng: &mut R) -> Result<Generated> {
    params.validate()?;
    if n < 10 {
        return Err(Error::InvalidArgument(format!("n must be at least 10, got {n}")));
    }
    let n_p = Binomial::new(n as u64, params.q0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .sample(rng) as usize;
    let mut rows = Vec::with_capacity(n);
    let mut hidden = Vec::with_capacity(n);
    let mut clamped = 0;
    let mut structural_draws = 0;
    let mut record = |d: &Draw| {
        structural_draws += 1;
        if !(0.0..=1.0).contains(&d.raw) {
            clamped += 1;
        }
        HiddenTruth {
            u: d.u,
            d: Some(d.d),
            raw_treatment_prob: Some(d.raw),
        }
    };
    match params.layout {
        FusionLayout::Standard => {
            for _ in 0..n_p {
                let d = draw_structural(params, uniform_x(rng), rng);
                hidden.push(record(&d));
                rows.push(FusedRow::primary(d.y, d.z, d.x.to_vec()));
            }
            for _ in n_p..n {
                let x = law_x(&params.aux_covariates, rng);
                let z = u8::from(rng.random::<f64>() < params.instrument_prob(&x));
                let d = u8::from(rng.random::<f64>() < params.treatment_prob(z, &x));
                hidden.push(HiddenTruth {
                    u: f64::NAN,
                    d: None,
                    raw_treatment_prob: None,
                });
                rows.push(FusedRow::auxiliary(d, z, x.to_vec()));
            }
        }
        FusionLayout::Reversed => {
            for _ in 0..n_p {
                let d = draw_structural(params, law_x(&params.aux_covariates, rng), rng);
                hidden.push(record(&d));
                rows.push(FusedRow::primary(d.y, d.z, d.x.to_vec()));
            }
            for _ in n_p..n {
                let d = draw_structural(params, uniform_x(rng), rng);
                hidden.push(record(&d));
                rows.push(FusedRow::auxiliary(d.d, d.z, d.x.to_vec()));
            }
        }
    }
    Ok(Generated {
        sample: FusedSample::new(rows)?,
        hidden,
        clamped,
        structural_draws,
    })
}

/// Attaches the noisy transforms `(z*, x*)` to every row.
///
/// `z* ~ Bernoulli(Phi(-2 + 3z))`, `x1* = exp(-x1/2) + e1`,
/// `x2* = x2 / (1 + exp(z)) + e2`, `x3* = (x1 x3)^3 + e3` with standard
/// normal errors. Covariates beyond the third are copied unchanged.
pub fn misspecify<R: Rng + ?Sized>(sample: &FusedSample, rng: &mut R) -> Result<FusedSample> {
    if sample.p() < 3 {
        return Err(Error::InvalidArgument(format!(
            "misspecification transforms need at least 3 covariates, got {}",
            sample.p()
        )));
    }
    let rows = sample
        .rows()
        .iter()
        .map(|row| {
            let z = f64::from(row.z);
            let zs = u8::from(rng.random::<f64>() < normal_cdf(-2.0 + 3.0 * z));
            let e: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let x = &row.x;
            let mut xs = x.clone();
            xs[0] = (-0.5 * x[0]).exp() + e[0];
            xs[1] = x[1] / (1.0 + z.exp()) + e[1];
            xs[2] = (x[0] * x[2]).powi(3) + e[2];
            FusedRow {
                transformed: Some(TransformedCovariates { z: zs, x: xs }),
                ..row.clone()
            }
        })
        .collect();
    FusedSample::new(rows)
}
