//! Dynamical-parameter gauge `g(s)` and the reparametrization of drifts and
//! diffusion tensors, `v(x̄, s) = v(x̄) ġ(s)` and `w(x̄, s) = w(x̄) ġ(s)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FourVector, Tensor2};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Strictly increasing, C¹ map `s ↦ g(s)` with an analytic derivative.
#[derive(Clone)]
#[derive(Default)]
pub enum Gauge {
    #[default]
    Identity,
    Affine { slope: f64, offset: f64 },
    Custom(CustomGauge),
}

/// User-supplied gauge. The derivative must be supplied analytically.
#[derive(Clone)]
pub struct CustomGauge {
    eval: ScalarFn,
    deriv: ScalarFn,
    domain: (f64, f64),
}

/// Serializable gauge selection used by experiment configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
#[derive(Default)]
pub enum GaugeSpec {
    #[default]
    Identity,
    Affine { a: f64, b: f64 },
}


impl GaugeSpec {
    pub fn build(&self) -> Result<Gauge> {
        match *self {
            GaugeSpec::Identity => Ok(Gauge::Identity),
            GaugeSpec::Affine { a, b } => Gauge::affine(a, b),
        }
    }
}

impl fmt::Debug for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gauge::Identity => write!(f, "Gauge::Identity"),
            Gauge::Affine { slope, offset } => {
                write!(f, "Gauge::Affine {{ slope: {slope}, offset: {offset} }}")
            }
            Gauge::Custom(c) => write!(f, "Gauge::Custom {{ domain: {:?} }}", c.domain),
        }
    }
}


/// Number of probe points used to vet a custom gauge.
const CUSTOM_PROBES: usize = 257;

impl Gauge {
    pub fn identity() -> Self {
        Gauge::Identity
    }

    /// `g(s) = a s + b`, requires `a > 0`.
    pub fn affine(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Domain(format!(
                "affine gauge requires a finite positive slope, got a = {a}"
            )));
        }
        Ok(Gauge::Affine {
            slope: a,
            offset: b,
        })
    }

    /// Custom gauge on `[lo, hi]`. Positivity of `ġ` and monotonicity of `g`
    /// are probed on a uniform grid of the domain.
    pub fn custom<G, D>(eval: G, deriv: D, domain: (f64, f64)) -> Result<Self>
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let (lo, hi) = domain;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!("invalid gauge domain {domain:?}")));
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 0..CUSTOM_PROBES {
            let s = lo + (hi - lo) * k as f64 / (CUSTOM_PROBES - 1) as f64;
            let d = deriv(s);
            let g = eval(s);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Domain(format!("gauge derivative {d} at s = {s}")));
            }
            if !(g > prev) || !g.is_finite() {
                return Err(Error::Domain(format!("gauge not increasing at s = {s}")));
            }
            prev = g;
        }
        Ok(Gauge::Custom(CustomGauge {
            eval: Arc::new(eval),
            deriv: Arc::new(deriv),
            domain,
        }))
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            Gauge::Custom(c) => c.domain,
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn contains(&self, s: f64) -> bool {
        let (lo, hi) = self.domain();
        s.is_finite() && s >= lo && s <= hi
    }

    fn check(&self, s: f64) -> Result<()> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "s = {s} outside gauge domain {:?}",
                self.domain()
            )))
        }
    }

    /// `g(s)`. Evaluation outside a custom domain is the caller's concern;
    /// use [`Gauge::try_eval`] when the parameter is untrusted.
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Gauge::Identity => s,
            Gauge::Affine { slope, offset } => slope * s + offset,
            Gauge::Custom(c) => (c.eval)(s),
        }
    }

    /// `ġ(s)`.
    pub fn deriv(&self, s: f64) -> f64 {
        match self {
            Gauge::Identity => 1.0,
            Gauge::Affine { slope, .. } => *slope,
            Gauge::Custom(c) => (c.deriv)(s),
        }
    }

    pub fn try_eval(&self, s: f64) -> Result<f64> {
        self.check(s)?;
        Ok(self.eval(s))
    }

    pub fn try_deriv(&self, s: f64) -> Result<f64> {
        self.check(s)?;
        Ok(self.deriv(s))
    }

    /// `g(s) − g(s₀)`.
    pub fn delta(&self, s0: f64, s: f64) -> f64 {
        self.eval(s) - self.eval(s0)
    }

    /// Solves `g(s) = target` for `s`.
    pub fn inverse(&self, target: f64) -> Result<f64> {
        match self {
            Gauge::Identity => Ok(target),
            Gauge::Affine { slope, offset } => Ok((target - offset) / slope),
            Gauge::Custom(c) => {
                let (mut lo, mut hi) = c.domain;
                let (glo, ghi) = ((c.eval)(lo), (c.eval)(hi));
                if !(target >= glo && target <= ghi) {
                    return Err(Error::Domain(format!(
                        "g = {target} outside the image [{glo}, {ghi}]"
                    )));
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if (c.eval)(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }
}

/// Builds a gauge from a serializable selection.
pub fn make_gauge(kind: &GaugeSpec) -> Result<Gauge> {
    kind.build()
}

/// `v±ⁱ(x̄, s) = v±ⁱ(x̄) ġ(s)`.
pub fn scaled_drift(v: &FourVector, gauge: &Gauge, s: f64) -> Result<FourVector> {
    Ok(*v * gauge.try_deriv(s)?)
}

/// `wⁱʲ(x̄, s) = wⁱʲ(x̄) ġ(s)`.
pub fn scaled_diffusion(w: &Tensor2, gauge: &Gauge, s: f64) -> Result<Tensor2> {
    Ok(w * gauge.try_deriv(s)?)
}
