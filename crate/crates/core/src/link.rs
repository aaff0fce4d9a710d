//! Transformation families `G` for the marginal mean.
//!
//! Box–Cox: `G(x) = ((1+x)^ρ − 1)/ρ`, with `G = log(1+x)` as `ρ → 0`.
//! Logarithmic: `G(x) = log(1+rx)/r`, with `G = x` as `r → 0`.
//!
//! Both families are evaluated through `expm1`/`log1p` so that small
//! parameters do not lose precision to cancellation. At or below
//! [`LIMIT_THRESHOLD`] the limiting formula is used exactly.

use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{exp, exp_m1, ln_1p};

/// Parameters at or below this value evaluate the limiting family.
pub const LIMIT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkFamily {
    BoxCox,
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFunction {
    family: LinkFamily,
    param: f64,
}

impl LinkFunction {
    pub fn new(family: LinkFamily, param: f64) -> Result<Self> {
        if !(param >= 0.0) || !param.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "link parameter must be finite and nonnegative, got {param}"
            )));
        }
        Ok(Self { family, param })
    }

    pub fn box_cox(rho: f64) -> Result<Self> {
        Self::new(LinkFamily::BoxCox, rho)
    }

    pub fn logarithmic(r: f64) -> Result<Self> {
        Self::new(LinkFamily::Logarithmic, r)
    }

    /// `G(x) = x`, the proportional marginal-mean-rate model.
    pub fn identity() -> Self {
        Self { family: LinkFamily::BoxCox, param: 1.0 }
    }

    pub fn family(&self) -> LinkFamily {
        self.family
    }

    pub fn param(&self) -> f64 {
        self.param
    }

    /// True when `G` is the identity, either exactly or through a limit branch.
    pub fn is_identity(&self) -> bool {
        match self.family {
            LinkFamily::BoxCox => self.param == 1.0,
            LinkFamily::Logarithmic => self.param <= LIMIT_THRESHOLD,
        }
    }

    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        let p = self.param;
        match self.family {
            LinkFamily::BoxCox if p <= LIMIT_THRESHOLD => ln_1p(x),
            LinkFamily::BoxCox if p == 1.0 => x,
            LinkFamily::BoxCox => exp_m1(p * ln_1p(x)) / p,
            LinkFamily::Logarithmic if p <= LIMIT_THRESHOLD => x,
            LinkFamily::Logarithmic => ln_1p(p * x) / p,
        }
    }

    /// `(G, G′, G″)` at `x`, without argument checks.
    #[inline]
    pub fn eval_unchecked(&self, x: f64) -> (f64, f64, f64) {
        let (g, g1, g2, _) = self.eval_with_third(x);
        (g, g1, g2)
    }

    /// `(G, G′, G″, G‴)`. The third derivative is needed only by the
    /// likelihood Hessian.
    #[inline]
    pub(crate) fn eval_with_third(&self, x: f64) -> (f64, f64, f64, f64) {
        let p = self.param;
        match self.family {
            LinkFamily::BoxCox if p <= LIMIT_THRESHOLD => {
                let inv = 1.0 / (1.0 + x);
                (ln_1p(x), inv, -inv * inv, 2.0 * inv * inv * inv)
            }
            LinkFamily::BoxCox if p == 1.0 => (x, 1.0, 0.0, 0.0),
            LinkFamily::BoxCox => {
                let l = ln_1p(x);
                let g1 = exp((p - 1.0) * l);
                let inv = 1.0 / (1.0 + x);
                let g2 = (p - 1.0) * g1 * inv;
                let g3 = (p - 2.0) * g2 * inv;
                (exp_m1(p * l) / p, g1, g2, g3)
            }
            LinkFamily::Logarithmic if p <= LIMIT_THRESHOLD => (x, 1.0, 0.0, 0.0),
            LinkFamily::Logarithmic => {
                let inv = 1.0 / (1.0 + p * x);
                (ln_1p(p * x) / p, inv, -p * inv * inv, 2.0 * p * p * inv * inv * inv)
            }
        }
    }

    /// Inverse of `G` on `[0, ∞)`.
    pub fn g_inverse(&self, y: f64) -> f64 {
        let p = self.param;
        match self.family {
            LinkFamily::BoxCox if p <= LIMIT_THRESHOLD => exp_m1(y),
            LinkFamily::BoxCox => exp_m1(ln_1p(p * y) / p),
            LinkFamily::Logarithmic if p <= LIMIT_THRESHOLD => y,
            LinkFamily::Logarithmic => exp_m1(p * y) / p,
        }
    }
}

/// `(G(x), G′(x), G″(x))` for `x ≥ 0`.
pub fn eval_link(link: &LinkFunction, x: f64) -> Result<(f64, f64, f64)> {
    if x.is_nan() {
        return Err(Error::InvalidArgument(String::from("link argument is NaN")));
    }
    if x < 0.0 {
        return Err(Error::InvalidArgument(format!("link argument must be nonnegative, got {x}")));
    }
    Ok(link.eval_unchecked(x))
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            LinkFamily::BoxCox => write!(f, "boxcox:{}", self.param),
            LinkFamily::Logarithmic => write!(f, "log:{}", self.param),
        }
    }
}

impl FromStr for LinkFunction {
    type Err = Error;

    /// Parses `boxcox:<rho>` or `log:<r>`.
    fn from_str(s: &str) -> Result<Self> {
        let (family, value) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("link spec `{s}` must be family:param")))?;
        let param: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("link parameter `{value}` is not a number")))?;
        match family.trim().to_ascii_lowercase().as_str() {
            "boxcox" | "box-cox" | "bc" => Self::box_cox(param),
            "log" | "logarithmic" => Self::logarithmic(param),
            other => Err(Error::InvalidArgument(format!("unknown link family `{other}`"))),
        }
    }
}
