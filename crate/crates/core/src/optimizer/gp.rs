use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Action;

/// Squared-exponential kernel hyperparameters (fixed, never fitted).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpHyper {
    pub signal_var: f64,
    /// cm
    pub length_scale: f64,
    pub noise_var: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        GpHyper {
            signal_var: 1.0,
            length_scale: 4.0,
            noise_var: 1e-4,
        }
    }
}

impl GpHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.signal_var.is_finite()
            && self.signal_var > 0.0
            && self.length_scale.is_finite()
            && self.length_scale > 0.0
            && self.noise_var.is_finite()
            && self.noise_var >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("invalid GP hyperparameters {self:?}")))
        }
    }

    pub fn kernel(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        self.signal_var * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Reward preprocessing before conditioning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardize {
    /// Raw observations against the zero prior mean.
    #[default]
    Off,
    /// Subtract the observation mean.
    Center,
    /// Subtract the mean and divide by the standard deviation.
    Full,
}

/// Jitter added to the diagonal, relative to the signal variance, when the
/// kernel matrix is not numerically positive definite.
const JITTER_STEPS: [f64; 6] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2];

/// Gaussian process over 2D actions with a zero prior mean.
///
/// Observations are optionally centred and scaled (see [`Standardize`])
/// before conditioning; predictions are mapped back to reward units.
#[derive(Clone, Debug)]
pub struct GpState {
    pub hyper: GpHyper,
    pub standardize: Standardize,
    xs: Vec<[f64; 2]>,
    ys: Vec<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    y_shift: f64,
    y_scale: f64,
}

fn point(a: &Action) -> [f64; 2] {
    [a.x as f64, a.y as f64]
}

impl GpState {
    pub fn new(hyper: GpHyper, standardize: Standardize) -> Result<Self> {
        hyper.validate()?;
        Ok(GpState {
            hyper,
            standardize,
            xs: Vec::new(),
            ys: Vec::new(),
            chol: None,
            alpha: DVector::zeros(0),
            y_shift: 0.0,
            y_scale: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    /// Adds an observation and refactors `K + noise I`.
    pub fn observe(&mut self, a: &Action, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::ConfigInvalid(format!("non-finite observation {y}")));
        }
        self.xs.push(point(a));
        self.ys.push(y);
        if let Err(e) = self.refactor() {
            self.xs.pop();
            self.ys.pop();
            self.refactor()?;
            return Err(e);
        }
        Ok(())
    }

    fn refactor(&mut self) -> Result<()> {
        let n = self.xs.len();
        if n == 0 {
            self.chol = None;
            self.alpha = DVector::zeros(0);
            return Ok(());
        }
        let m = self.ys.iter().sum::<f64>() / n as f64;
        let (shift, scale) = match self.standardize {
            Standardize::Off => (0.0, 1.0),
            Standardize::Center => (m, 1.0),
            Standardize::Full => {
                let v = self.ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n as f64;
                (m, if v > 0.0 { v.sqrt() } else { 1.0 })
            }
        };
        let k = DMatrix::from_fn(n, n, |i, j| self.hyper.kernel(self.xs[i], self.xs[j]));
        let y = DVector::from_iterator(n, self.ys.iter().map(|v| (v - shift) / scale));
        for jitter in JITTER_STEPS {
            let extra = self.hyper.noise_var + jitter * self.hyper.signal_var;
            let mut m = k.clone();
            for i in 0..n {
                m[(i, i)] += extra;
            }
            if let Some(ch) = Cholesky::new(m) {
                self.alpha = ch.solve(&y);
                self.chol = Some(ch);
                self.y_shift = shift;
                self.y_scale = scale;
                return Ok(());
            }
        }
        Err(Error::SingularKernel)
    }
}

/// Posterior mean and standard deviation at `query`.
pub fn gp_posterior(gp: &GpState, query: &Action) -> Result<(f64, f64)> {
    let q = point(query);
    let prior = gp.hyper.signal_var;
    let Some(ch) = &gp.chol else {
        return Ok((0.0, prior.sqrt()));
    };
    let kq = DVector::from_iterator(gp.xs.len(), gp.xs.iter().map(|x| gp.hyper.kernel(*x, q)));
    let mean = kq.dot(&gp.alpha);
    let v = ch.l().solve_lower_triangular(&kq).ok_or(Error::SingularKernel)?;
    let var = (prior - v.dot(&v)).max(0.0);
    Ok((mean * gp.y_scale + gp.y_shift, var.sqrt() * gp.y_scale))
}

/// Upper confidence bound `mean + sqrt(beta) * std`.
pub fn ucb(gp: &GpState, query: &Action, beta: f64) -> Result<f64> {
    let (m, s) = gp_posterior(gp, query)?;
    Ok(m + beta.sqrt() * s)
}
