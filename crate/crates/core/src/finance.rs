//! Drivers, payoffs and closed-form Black–Scholes references.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::AugmentationKind;

/// BSDE driver `f(t, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Driver {
    Zero,
    /// `-(y r + z theta)`.
    LinearRiskNeutral {
        r: f64,
        theta: f64,
    },
    /// Lending at `r`, borrowing at `big_r`:
    /// `-(y r + z theta - (y - z / sigma)^- (R - r))` with `theta = (mu - r) / sigma`.
    DifferentialRates {
        r: f64,
        big_r: f64,
        mu: f64,
        sigma: f64,
    },
}

impl Driver {
    pub fn differential_rates(r: f64, big_r: f64, mu: f64, sigma: f64) -> Result<Self> {
        let d = Driver::DifferentialRates {
            r,
            big_r,
            mu,
            sigma,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Driver::Zero => Ok(()),
            Driver::LinearRiskNeutral { r, theta } => {
                if r.is_finite() && theta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::NonFinite("driver parameters".into()))
                }
            }
            Driver::DifferentialRates {
                r,
                big_r,
                mu,
                sigma,
            } => {
                if ![r, big_r, mu, sigma].iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("driver parameters".into()));
                }
                if sigma <= 0.0 {
                    return Err(Error::Parameter(format!("sigma must be > 0, got {sigma}")));
                }
                if big_r < r {
                    return Err(Error::Parameter(format!(
                        "borrowing rate {big_r} is below lending rate {r}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Evaluates the driver; `z` holds one entry per Brownian component and
    /// only `z[0]` is read by the financial drivers.
    #[inline]
    pub fn eval(&self, _t: f64, _x: &[f64], y: f64, z: &[f64]) -> f64 {
        match *self {
            Driver::Zero => 0.0,
            Driver::LinearRiskNeutral { r, theta } => -(y * r + z[0] * theta),
            Driver::DifferentialRates {
                r,
                big_r,
                mu,
                sigma,
            } => {
                let theta = (mu - r) / sigma;
                let neg_part = (z[0] / sigma - y).max(0.0);
                -(y * r + z[0] * theta - neg_part * (big_r - r))
            }
        }
    }

    /// A Lipschitz constant in `(y, z)`.
    pub fn lipschitz_constant(&self) -> f64 {
        match *self {
            Driver::Zero => 0.0,
            Driver::LinearRiskNeutral { r, theta } => r.abs() + theta.abs(),
            Driver::DifferentialRates {
                r,
                big_r,
                mu,
                sigma,
            } => r.abs() + ((mu - r) / sigma).abs() + (big_r - r) * (1.0 + 1.0 / sigma),
        }
    }
}

/// Checked driver evaluation.
pub fn eval_driver(driver: &Driver, t: f64, x: &[f64], y: f64, z: &[f64]) -> Result<f64> {
    driver.validate()?;
    if z.is_empty() && !matches!(driver, Driver::Zero) {
        return Err(Error::Dimension(
            "driver needs at least one z component".into(),
        ));
    }
    Ok(driver.eval(t, x, y, z))
}

/// Terminal condition `Phi^N(P_N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payoff {
    Call {
        strike: f64,
    },
    /// `(S - K1)^+ - 2 (S - K2)^+`.
    CallsCombination {
        k1: f64,
        k2: f64,
    },
    /// `(A - K)^+` on the average carried in the second state coordinate.
    AsianCall {
        strike: f64,
    },
}

impl Payoff {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Payoff::Call { strike } | Payoff::AsianCall { strike } => {
                if strike > 0.0 && strike.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!(
                        "strike must be > 0, got {strike}"
                    )))
                }
            }
            Payoff::CallsCombination { k1, k2 } => {
                if k1 > 0.0 && k1 < k2 && k2.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!(
                        "need 0 < K1 < K2, got K1 = {k1}, K2 = {k2}"
                    )))
                }
            }
        }
    }

    /// Whether the payoff can read its inputs from states built with `kind`.
    pub fn supports(&self, kind: AugmentationKind) -> bool {
        match self {
            Payoff::Call { .. } | Payoff::CallsCombination { .. } => true,
            Payoff::AsianCall { .. } => matches!(
                kind,
                AugmentationKind::AsianRunningAverage | AugmentationKind::AsianCorrected
            ),
        }
    }

    /// The state augmentation this payoff is normally paired with.
    pub fn default_augmentation(&self) -> AugmentationKind {
        match self {
            Payoff::AsianCall { .. } => AugmentationKind::AsianRunningAverage,
            _ => AugmentationKind::Vanilla,
        }
    }

    #[inline]
    pub fn eval(&self, p: &[f64]) -> f64 {
        match *self {
            Payoff::Call { strike } => (p[0] - strike).max(0.0),
            Payoff::CallsCombination { k1, k2 } => {
                (p[0] - k1).max(0.0) - 2.0 * (p[0] - k2).max(0.0)
            }
            Payoff::AsianCall { strike } => (p[1] - strike).max(0.0),
        }
    }

    fn min_dim(&self) -> usize {
        match self {
            Payoff::AsianCall { .. } => 2,
            _ => 1,
        }
    }
}

/// Checked payoff evaluation on an augmented terminal state.
pub fn eval_payoff(payoff: &Payoff, p: &[f64]) -> Result<f64> {
    payoff.validate()?;
    if p.len() < payoff.min_dim() {
        return Err(Error::Dimension(format!(
            "payoff needs a state of dimension >= {}, got {}",
            payoff.min_dim(),
            p.len()
        )));
    }
    Ok(payoff.eval(p))
}

/// Standard normal CDF through `erfc`, accurate to ~1e-15 absolute.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Black–Scholes price of a European call without dividends.
pub fn black_scholes_call(s0: f64, strike: f64, r: f64, sigma: f64, maturity: f64) -> Result<f64> {
    for (name, v) in [
        ("s0", s0),
        ("strike", strike),
        ("sigma", sigma),
        ("maturity", maturity),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Parameter(format!("{name} must be > 0, got {v}")));
        }
    }
    if !r.is_finite() {
        return Err(Error::NonFinite("interest rate".into()));
    }
    let vol = sigma * maturity.sqrt();
    let d1 = ((s0 / strike).ln() + (r + 0.5 * sigma * sigma) * maturity) / vol;
    let d2 = d1 - vol;
    Ok(s0 * norm_cdf(d1) - strike * (-r * maturity).exp() * norm_cdf(d2))
}

/// The four linear combinations of Black–Scholes prices bracketing the
/// calls-combination price under differential rates, in the order
/// `BS1(R) - 2 BS2(R)`, `BS1(r) - 2 BS2(r)`, `BS1(r) - 2 BS2(R)`,
/// `BS1(R) - 2 BS2(r)`. The first three are lower bounds, the last an upper bound.
pub fn combination_bounds(
    s0: f64,
    k1: f64,
    k2: f64,
    r: f64,
    big_r: f64,
    sigma: f64,
    maturity: f64,
) -> Result<[f64; 4]> {
    let bs = |k: f64, rate: f64| black_scholes_call(s0, k, rate, sigma, maturity);
    let (b1_r, b1_big) = (bs(k1, r)?, bs(k1, big_r)?);
    let (b2_r, b2_big) = (bs(k2, r)?, bs(k2, big_r)?);
    Ok([
        b1_big - 2.0 * b2_big,
        b1_r - 2.0 * b2_r,
        b1_r - 2.0 * b2_big,
        b1_big - 2.0 * b2_r,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TABLE1: Driver = Driver::DifferentialRates {
        r: 0.04,
        big_r: 0.06,
        mu: 0.06,
        sigma: 0.2,
    };

    #[test]
    fn drivers_vanish_at_origin() {
        for d in [
            Driver::Zero,
            Driver::LinearRiskNeutral {
                r: 0.05,
                theta: 0.3,
            },
            TABLE1,
        ] {
            assert_eq!(eval_driver(&d, 0.0, &[100.0], 0.0, &[0.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn equal_rates_give_linear_driver() {
        let (r, mu, sigma) = (0.06, 0.1, 0.25);
        let diff = Driver::differential_rates(r, r, mu, sigma).unwrap();
        let lin = Driver::LinearRiskNeutral {
            r,
            theta: (mu - r) / sigma,
        };
        for &(y, z) in &[(1.0, 2.0), (-3.0, 0.5), (5.0, -7.0), (0.0, 1.0)] {
            let a = diff.eval(0.0, &[1.0], y, &[z]);
            let b = lin.eval(0.0, &[1.0], y, &[z]);
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_part_vanishes_on_the_kink() {
        let Driver::DifferentialRates { r, mu, sigma, .. } = TABLE1 else {
            unreachable!()
        };
        let theta = (mu - r) / sigma;
        let v = TABLE1.eval(0.0, &[100.0], 1.0, &[sigma]);
        assert!((v + (r + sigma * theta)).abs() < 1e-15);
    }

    #[test]
    fn borrowing_branch_charges_the_spread() {
        // y - z/sigma = -1 < 0: the seller borrows one unit at R.
        let v = TABLE1.eval(0.0, &[100.0], 0.0, &[0.2]);
        let theta = 0.1;
        assert!((v - (-(0.2 * theta) + 0.02)).abs() < 1e-15);
    }

    #[test]
    fn driver_parameter_errors() {
        let bad = Driver::DifferentialRates {
            r: 0.01,
            big_r: 0.06,
            mu: 0.05,
            sigma: 0.0,
        };
        assert!(matches!(
            eval_driver(&bad, 0.0, &[1.0], 1.0, &[1.0]),
            Err(Error::Parameter(_))
        ));
        assert!(Driver::differential_rates(0.06, 0.01, 0.05, 0.2).is_err());
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(
            eval_payoff(&Payoff::Call { strike: 100.0 }, &[100.0]).unwrap(),
            0.0
        );
        let combo = Payoff::CallsCombination {
            k1: 95.0,
            k2: 105.0,
        };
        assert_eq!(eval_payoff(&combo, &[110.0]).unwrap(), 5.0);
        let asian = Payoff::AsianCall { strike: 100.0 };
        assert_eq!(eval_payoff(&asian, &[120.0, 100.0]).unwrap(), 0.0);
        assert_eq!(eval_payoff(&asian, &[80.0, 103.0]).unwrap(), 3.0);
        assert!(matches!(
            eval_payoff(&asian, &[100.0]),
            Err(Error::Dimension(_))
        ));
        assert!(Payoff::CallsCombination {
            k1: 105.0,
            k2: 95.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn payoff_augmentation_compatibility() {
        let asian = Payoff::AsianCall { strike: 100.0 };
        assert!(!asian.supports(AugmentationKind::Vanilla));
        assert!(asian.supports(AugmentationKind::AsianCorrected));
        assert!(Payoff::Call { strike: 1.0 }.supports(AugmentationKind::LookbackMinMax));
    }

    #[test]
    fn black_scholes_reference_value() {
        // The quoted two-digit price 7.15 is the truncation of 7.15590 (scipy reference).
        let v = black_scholes_call(100.0, 100.0, 0.06, 0.2, 0.5).unwrap();
        assert!((v - 7.155_896_056_109_235).abs() < 1e-10, "{v}");
        assert!((v - 7.15).abs() < 0.01);
    }

    #[test]
    fn black_scholes_limits() {
        let v = black_scholes_call(100.0, 1e-10, 0.05, 0.2, 1.0).unwrap();
        assert!((v - 100.0).abs() < 1e-8);
        let v = black_scholes_call(100.0, 100.0, 0.0, 1e-9, 1.0).unwrap();
        assert!(v.abs() < 1e-6);
        assert!(matches!(
            black_scholes_call(100.0, 100.0, 0.05, 0.0, 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(black_scholes_call(-1.0, 100.0, 0.05, 0.2, 1.0).is_err());
    }

    #[test]
    fn norm_cdf_reference_points() {
        // Reference values from scipy.stats.norm.
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_cdf(-1.959_963_984_540_054) - 0.025).abs() < 1e-15);
        assert!((norm_cdf(-8.0) - 6.220_960_574_271_74e-16).abs() < 1e-25);
    }

    #[test]
    fn combination_bounds_reference_table() {
        let b = combination_bounds(100.0, 95.0, 105.0, 0.01, 0.06, 0.2, 0.25).unwrap();
        for (got, want) in b.iter().zip([2.75, 2.76, 1.92, 3.60]) {
            assert!((got - want).abs() < 0.01, "{b:?}");
        }
    }

    #[test]
    fn combination_bounds_limits() {
        let b = combination_bounds(100.0, 95.0, 105.0, 0.03, 0.03, 0.2, 0.5).unwrap();
        assert_eq!(b[0], b[1]);
        let b = combination_bounds(100.0, 95.0, 1e6, 0.01, 0.06, 0.2, 0.25).unwrap();
        let at_r = black_scholes_call(100.0, 95.0, 0.01, 0.2, 0.25).unwrap();
        let at_big = black_scholes_call(100.0, 95.0, 0.06, 0.2, 0.25).unwrap();
        for (got, want) in b.iter().zip([at_big, at_r, at_r, at_big]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn driver_is_lipschitz(
            y1 in -100.0f64..100.0, z1 in -100.0f64..100.0,
            y2 in -100.0f64..100.0, z2 in -100.0f64..100.0,
        ) {
            let c = TABLE1.lipschitz_constant();
            let lhs = (TABLE1.eval(0.0, &[1.0], y2, &[z2]) - TABLE1.eval(0.0, &[1.0], y1, &[z1])).abs();
            prop_assert!(lhs <= c * ((y2 - y1).abs() + (z2 - z1).abs()) + 1e-12);
        }

        #[test]
        fn call_above_intrinsic(
            s0 in 1.0f64..200.0, k in 1.0f64..200.0, r in -0.05f64..0.2,
            sigma in 0.01f64..1.0, t in 0.01f64..5.0,
        ) {
            let v = black_scholes_call(s0, k, r, sigma, t).unwrap();
            prop_assert!(v >= (s0 - k * (-r * t).exp()).max(0.0) - 1e-9);
            let up = black_scholes_call(s0, k, r, sigma * 1.1, t).unwrap();
            prop_assert!(up >= v - 1e-9);
            let richer = black_scholes_call(s0 * 1.05, k, r, sigma, t).unwrap();
            prop_assert!(richer >= v - 1e-9);
        }

        #[test]
        fn payoff_profile_bounds(s in 0.0f64..400.0, a in 0.0f64..400.0) {
            let call = Payoff::Call { strike: 100.0 }.eval(&[s]);
            let asian = Payoff::AsianCall { strike: 100.0 }.eval(&[s, a]);
            let combo = Payoff::CallsCombination { k1: 95.0, k2: 105.0 }.eval(&[s]);
            prop_assert!(call >= 0.0);
            prop_assert!(asian >= 0.0);
            prop_assert!(combo <= 10.0);
        }
    }
}
