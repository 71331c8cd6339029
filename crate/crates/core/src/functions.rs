//! Scalar building blocks shared by systems, bounds, envelopes and radii.

use serde::{Deserialize, Serialize};

/// Increasing reparametrisation of time with `rho(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rho {
    /// `k t`
    Linear { k: f64 },
    /// `k ((t+1)^p - 1)`
    Power { k: f64, p: f64 },
}

impl Rho {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Rho::Linear { k } => k * t,
            Rho::Power { k, p } => k * ((t + 1.0).powf(p) - 1.0),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Rho::Linear { k } => k,
            Rho::Power { k, p } => k * p * (t + 1.0).powf(p - 1.0),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Rho::Linear { k } if k > 0.0 => Ok(()),
            Rho::Power { k, p } if k > 0.0 && p > 0.0 => Ok(()),
            _ => Err(format!("rho must be increasing, got {self:?}")),
        }
    }
}

/// Nondecreasing growth rate with `g(0) = 1` and `g -> inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Growth {
    /// `e^{rate t}`
    Exp { rate: f64 },
    /// `(1+t)^p`
    Power { p: f64 },
}

impl Growth {
    pub fn ln_value(&self, t: f64) -> f64 {
        match *self {
            Growth::Exp { rate } => rate * t,
            Growth::Power { p } => p * t.ln_1p(),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.ln_value(t).exp()
    }

    pub fn ln_derivative(&self, t: f64) -> f64 {
        match *self {
            Growth::Exp { rate } => rate,
            Growth::Power { p } => p / (1.0 + t),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Growth::Exp { rate } if rate > 0.0 => Ok(()),
            Growth::Power { p } if p > 0.0 => Ok(()),
            _ => Err(format!("growth rate must tend to infinity, got {self:?}")),
        }
    }
}

/// The time profile `h` in `scale * exp(rate * h(t))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `h(t) = t`
    Linear,
    /// `h(t) = ln(1+t)`
    Log1p,
    /// `h(t) = rho(t)`
    Rho { rho: Rho },
    /// `h(t) = ln g(t)`
    LogGrowth { growth: Growth },
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Profile::Linear => t,
            Profile::Log1p => t.ln_1p(),
            Profile::Rho { rho } => rho.value(t),
            Profile::LogGrowth { growth } => growth.ln_value(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Profile::Linear => 1.0,
            Profile::Log1p => 1.0 / (1.0 + t),
            Profile::Rho { rho } => rho.derivative(t),
            Profile::LogGrowth { growth } => growth.ln_derivative(t),
        }
    }
}

/// Positive scalar function `scale * exp(rate * h(t))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarFn {
    pub scale: f64,
    #[serde(default)]
    pub rate: f64,
    #[serde(default = "default_profile")]
    pub profile: Profile,
}

fn default_profile() -> Profile {
    Profile::Linear
}

impl ScalarFn {
    pub fn constant(value: f64) -> Self {
        ScalarFn { scale: value, rate: 0.0, profile: Profile::Linear }
    }

    pub fn exp(scale: f64, rate: f64) -> Self {
        ScalarFn { scale, rate, profile: Profile::Linear }
    }

    /// `scale * (t+1)^exponent`
    pub fn power(scale: f64, exponent: f64) -> Self {
        ScalarFn { scale, rate: exponent, profile: Profile::Log1p }
    }

    /// `scale * e^{rate rho(t)}`
    pub fn exp_rho(scale: f64, rate: f64, rho: Rho) -> Self {
        ScalarFn { scale, rate, profile: Profile::Rho { rho } }
    }

    /// `scale * g(t)^exponent`
    pub fn growth_power(scale: f64, exponent: f64, growth: Growth) -> Self {
        ScalarFn { scale, rate: exponent, profile: Profile::LogGrowth { growth } }
    }

    pub fn ln_value(&self, t: f64) -> f64 {
        let h = if self.rate == 0.0 { 0.0 } else { self.rate * self.profile.value(t) };
        self.scale.ln() + h
    }

    pub fn value(&self, t: f64) -> f64 {
        self.ln_value(t).exp()
    }

    /// `d/dt ln f(t)`
    pub fn log_derivative(&self, t: f64) -> f64 {
        if self.rate == 0.0 {
            0.0
        } else {
            self.rate * self.profile.derivative(t)
        }
    }

    pub fn is_constant(&self) -> bool {
        self.rate == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_profile_matches_direct_evaluation() {
        let f = ScalarFn::power(2.0, 0.5);
        assert!((f.value(3.0) - 4.0).abs() < 1e-14);
        assert!((f.log_derivative(3.0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn rho_power_starts_at_zero() {
        let rho = Rho::Power { k: 1.0, p: 1.25 };
        assert_eq!(rho.value(0.0), 0.0);
        let h = 1e-6;
        let fd = (rho.value(2.0 + h) - rho.value(2.0 - h)) / (2.0 * h);
        assert!((fd - rho.derivative(2.0)).abs() < 1e-8);
    }

    #[test]
    fn growth_rates_start_at_one() {
        for g in [Growth::Exp { rate: 1.0 }, Growth::Power { p: 2.0 }] {
            assert_eq!(g.value(0.0), 1.0);
        }
    }

    #[test]
    fn log_derivative_matches_finite_difference() {
        let fns = [
            ScalarFn::exp(1.5, -0.3),
            ScalarFn::exp_rho(1.0, 0.2, Rho::Power { k: 1.0, p: 1.25 }),
            ScalarFn::growth_power(1.0, 0.7, Growth::Power { p: 1.0 }),
        ];
        for f in fns {
            let h = 1e-6;
            let fd = (f.ln_value(1.3 + h) - f.ln_value(1.3 - h)) / (2.0 * h);
            assert!((fd - f.log_derivative(1.3)).abs() < 1e-8, "{f:?}");
        }
    }
}
