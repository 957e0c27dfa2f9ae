//! Location-scale predictive distributions and the scoring rules used to fit them.
//!
//! Every distribution is parametrized internally by `(loc, log_scale)` so the
//! scale stays positive without clamping. Gradients and Fisher information are
//! expressed in that chart.

use std::f64::consts::SQRT_2;

use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::{erf, erfc};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Laplace,
}

/// Proper scoring rule minimized during boosting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    /// Negative log density.
    #[serde(alias = "log")]
    LogScore,
    /// Continuous ranked probability score.
    Crps,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Normal => f.write_str("normal"),
            Family::Laplace => f.write_str("laplace"),
        }
    }
}

impl std::fmt::Display for ScoreRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreRule::LogScore => f.write_str("log"),
            ScoreRule::Crps => f.write_str("crps"),
        }
    }
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Standard normal CDF, computed through `erfc` for accuracy in the lower tail.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal quantile. `p` must lie in (0, 1).
pub fn std_normal_quantile(p: f64) -> f64 {
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    if !z.is_finite() {
        return z;
    }
    // One Newton step against the accurate CDF removes the inverse's error.
    let pdf = std_normal_pdf(z);
    if pdf > 0.0 {
        z - (std_normal_cdf(z) - p) / pdf
    } else {
        z
    }
}

/// Probability mass of a Normal within `k` standard deviations of its mean.
pub fn sigma_coverage(k_sigma: f64) -> f64 {
    erf(k_sigma / SQRT_2)
}

/// One predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistParams {
    pub family: Family,
    pub loc: f64,
    pub log_scale: f64,
}

impl DistParams {
    pub fn new(family: Family, loc: f64, log_scale: f64) -> Self {
        Self {
            family,
            loc,
            log_scale,
        }
    }

    /// Builds from a positive scale (σ for Normal, b for Laplace).
    pub fn with_scale(family: Family, loc: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Domain(format!("scale must be positive, got {scale}")));
        }
        Ok(Self::new(family, loc, scale.ln()))
    }

    pub fn normal(loc: f64, sigma: f64) -> Result<Self> {
        Self::with_scale(Family::Normal, loc, sigma)
    }

    pub fn laplace(loc: f64, b: f64) -> Result<Self> {
        Self::with_scale(Family::Laplace, loc, b)
    }

    /// σ for Normal, b for Laplace.
    #[inline]
    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Standard deviation of the distribution.
    pub fn std_dev(&self) -> f64 {
        match self.family {
            Family::Normal => self.scale(),
            Family::Laplace => SQRT_2 * self.scale(),
        }
    }

    pub fn score(&self, rule: ScoreRule, y: f64) -> f64 {
        let s = self.scale();
        let z = (y - self.loc) / s;
        match (self.family, rule) {
            (Family::Normal, ScoreRule::LogScore) => self.log_scale + 0.5 * z * z + LN_SQRT_2PI,
            (Family::Laplace, ScoreRule::LogScore) => {
                std::f64::consts::LN_2 + self.log_scale + z.abs()
            }
            (Family::Normal, ScoreRule::Crps) => {
                s * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z)
                    - FRAC_1_SQRT_PI)
            }
            (Family::Laplace, ScoreRule::Crps) => {
                let a = z.abs();
                s * (a + (-a).exp() - 0.75)
            }
        }
    }

    /// Closed-form CRPS against observation `y`.
    pub fn crps(&self, y: f64) -> f64 {
        self.score(ScoreRule::Crps, y)
    }

    /// Gradient of the score with respect to `(loc, log_scale)`.
    ///
    /// The Laplace log score has a kink at `y == loc`; the location
    /// subgradient used there is 0.
    pub fn grad(&self, rule: ScoreRule, y: f64) -> [f64; 2] {
        let s = self.scale();
        let r = y - self.loc;
        let z = r / s;
        match (self.family, rule) {
            (Family::Normal, ScoreRule::LogScore) => [-r / (s * s), 1.0 - z * z],
            (Family::Laplace, ScoreRule::LogScore) => [-sign(r) / s, 1.0 - z.abs()],
            (Family::Normal, ScoreRule::Crps) => [
                -(2.0 * std_normal_cdf(z) - 1.0),
                s * (2.0 * std_normal_pdf(z) - FRAC_1_SQRT_PI),
            ],
            (Family::Laplace, ScoreRule::Crps) => {
                let a = z.abs();
                let e = (-a).exp();
                [-sign(r) * (1.0 - e), s * (e * (1.0 + a) - 0.75)]
            }
        }
    }

    /// Fisher information in the `(loc, log_scale)` chart.
    ///
    /// Both rules use the log-score metric; it is diagonal and positive for
    /// every parameter value.
    pub fn fisher(&self, _rule: ScoreRule) -> [[f64; 2]; 2] {
        let inv_var = (-2.0 * self.log_scale).exp();
        match self.family {
            Family::Normal => [[inv_var, 0.0], [0.0, 2.0]],
            Family::Laplace => [[inv_var, 0.0], [0.0, 1.0]],
        }
    }

    /// Natural gradient: inverse Fisher applied to the ordinary gradient.
    pub fn natural_grad(&self, rule: ScoreRule, y: f64) -> [f64; 2] {
        let g = self.grad(rule, y);
        let f = self.fisher(rule);
        [g[0] / f[0][0], g[1] / f[1][1]]
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let s = self.scale();
        let z = (y - self.loc) / s;
        match self.family {
            Family::Normal => std_normal_cdf(z),
            Family::Laplace => {
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
        }
    }

    /// Inverse CDF. `p` must lie in (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        let s = self.scale();
        match self.family {
            Family::Normal => self.loc + s * std_normal_quantile(p),
            Family::Laplace => {
                if p < 0.5 {
                    self.loc + s * (2.0 * p).ln()
                } else {
                    self.loc - s * (2.0 * (1.0 - p)).ln()
                }
            }
        }
    }

    /// Central interval holding the probability mass a Normal keeps within
    /// `k_sigma` standard deviations. For Normal this is `loc ± k·σ`.
    pub fn interval(&self, k_sigma: f64) -> Result<(f64, f64)> {
        if !(k_sigma > 0.0) || !k_sigma.is_finite() {
            return Err(Error::Domain(format!("k_sigma must be positive, got {k_sigma}")));
        }
        match self.family {
            Family::Normal => {
                let h = k_sigma * self.scale();
                Ok((self.loc - h, self.loc + h))
            }
            Family::Laplace => self.interval_for_coverage(sigma_coverage(k_sigma)),
        }
    }

    /// Central interval with the given coverage in (0, 1).
    pub fn interval_for_coverage(&self, coverage: f64) -> Result<(f64, f64)> {
        if !(coverage > 0.0 && coverage < 1.0) {
            return Err(Error::Domain(format!("coverage must lie in (0, 1), got {coverage}")));
        }
        let h = match self.family {
            Family::Normal => self.scale() * std_normal_quantile(0.5 + 0.5 * coverage),
            Family::Laplace => -self.scale() * (-coverage).ln_1p(),
        };
        Ok((self.loc - h, self.loc + h))
    }

    /// Draws one observation by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut u: f64 = rng.random();
        while u <= 0.0 {
            u = rng.random();
        }
        self.quantile(u)
    }
}

#[inline]
fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}
