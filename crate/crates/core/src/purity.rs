//! Forward and inverse maps between ideal correlation functions and the
//! values seen through noisy detection channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::eval_conditional_autocorr;

/// Fraction of genuine pair counts in the trigger and partner channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurityParams {
    pub p_trigger: f64,
    pub p_partner: f64,
}

impl PurityParams {
    pub fn new(p_trigger: f64, p_partner: f64) -> Result<Self> {
        let p = Self { p_trigger, p_partner };
        p.validate()?;
        Ok(p)
    }

    pub const UNIT: PurityParams = PurityParams { p_trigger: 1.0, p_partner: 1.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_trigger", self.p_trigger), ("p_partner", self.p_partner)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn product(&self) -> f64 {
        self.p_trigger * self.p_partner
    }
}

fn check_g(g: f64) -> Result<()> {
    if !(g >= 1.0 && g.is_finite()) {
        return Err(Error::Domain(format!("correlation value must be >= 1, got {g}")));
    }
    Ok(())
}

/// `P_t P_p (g - 1) + 1`.
pub fn apply_purity_cross(g_ideal: f64, params: PurityParams) -> Result<f64> {
    check_g(g_ideal)?;
    params.validate()?;
    Ok(params.p_trigger * params.p_partner * (g_ideal - 1.0) + 1.0)
}

/// `1 + (g - 1) / (P_t P_p)`.
pub fn invert_purity_cross(g_measured: f64, params: PurityParams) -> Result<f64> {
    check_g(g_measured)?;
    params.validate()?;
    Ok(1.0 + (g_measured - 1.0) / (params.p_trigger * params.p_partner))
}

/// Heralded autocorrelation of the partner channel seen through impure
/// channels, given the ideal cross-correlation.
pub fn apply_purity_conditional(g_ideal_cross: f64, params: PurityParams) -> Result<f64> {
    check_g(g_ideal_cross)?;
    params.validate()?;
    if params.p_trigger == 1.0 && params.p_partner == 1.0 {
        return eval_conditional_autocorr(g_ideal_cross);
    }
    let (pt, pp) = (params.p_trigger, params.p_partner);
    let x = g_ideal_cross - 1.0;
    let num = 1.0 + pp * pp + 2.0 * pt * pp * (1.0 + pp) * x;
    let den = pt * pp * x + 1.0;
    Ok(num / (den * den))
}

/// `(total - background) / total`.
pub fn estimate_purity(total_counts: u64, background_counts: u64) -> Result<f64> {
    if total_counts == 0 {
        return Err(Error::Domain("purity needs a nonzero total count".into()));
    }
    if background_counts > total_counts {
        return Err(Error::Domain(format!("background {background_counts} exceeds total {total_counts}")));
    }
    Ok((total_counts - background_counts) as f64 / total_counts as f64)
}

/// Rate of uncorrelated noise to add to a channel carrying `signal_rate`
/// genuine counts so that its purity becomes `purity`.
pub fn noise_rate_for_purity(signal_rate: f64, purity: f64) -> Result<f64> {
    if !(purity > 0.0 && purity <= 1.0) {
        return Err(Error::Domain(format!("purity must lie in (0, 1], got {purity}")));
    }
    Ok(signal_rate * (1.0 - purity) / purity)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG3: PurityParams = PurityParams { p_trigger: 0.89, p_partner: 0.54 };

    #[test]
    fn cross_examples() {
        let g = apply_purity_cross(18.0, FIG3).unwrap();
        assert!((g - 9.1702).abs() < 1e-12);
        assert_eq!(g.round(), 9.0);
        assert_eq!(apply_purity_cross(7.5, PurityParams::UNIT).unwrap(), 7.5);
        assert_eq!(apply_purity_cross(1.0, FIG3).unwrap(), 1.0);
        assert!(matches!(apply_purity_cross(0.5, FIG3), Err(Error::Domain(_))));
    }

    #[test]
    fn inverse_examples() {
        assert!((invert_purity_cross(9.1702, FIG3).unwrap() - 18.0).abs() < 1e-12);
        assert_eq!(invert_purity_cross(3.0, PurityParams::UNIT).unwrap(), 3.0);
        assert_eq!(invert_purity_cross(1.0, FIG3).unwrap(), 1.0);
        let zero = PurityParams { p_trigger: 0.0, p_partner: 0.5 };
        assert!(matches!(invert_purity_cross(2.0, zero), Err(Error::Domain(_))));
    }

    #[test]
    fn conditional_examples() {
        // numerator and denominator evaluated by hand
        let num: f64 = 1.0 + 0.54 * 0.54 + 2.0 * 0.89 * 0.54 * 1.54 * 17.0;
        assert!((num - 26.456).abs() < 5e-4);
        let v = apply_purity_conditional(18.0, FIG3).unwrap();
        assert!((v - num / (9.1702 * 9.1702)).abs() < 1e-12);
        assert!((v - 0.3146).abs() < 5e-5);
        let unit = apply_purity_conditional(18.0, PurityParams::UNIT).unwrap();
        assert!((unit - 0.21605).abs() < 1e-5);
        let floor = PurityParams { p_trigger: 0.3, p_partner: 1.0 };
        assert_eq!(apply_purity_conditional(1.0, floor).unwrap(), 2.0);
        assert!(apply_purity_conditional(0.0, FIG3).is_err());
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(estimate_purity(1000, 110).unwrap(), 0.89);
        assert_eq!(estimate_purity(1000, 460).unwrap(), 0.54);
        assert_eq!(estimate_purity(17, 0).unwrap(), 1.0);
        assert!(estimate_purity(0, 0).is_err());
        assert!(estimate_purity(10, 11).is_err());
    }

    #[test]
    fn noise_rate_gives_requested_purity() {
        let n = noise_rate_for_purity(1e5, 0.54).unwrap();
        assert!((1e5 / (1e5 + n) - 0.54).abs() < 1e-12);
        assert_eq!(noise_rate_for_purity(1e5, 1.0).unwrap(), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip(g in 1.0f64..100.0, pt in 0.05f64..=1.0, pp in 0.05f64..=1.0) {
                let p = PurityParams::new(pt, pp).unwrap();
                let back = invert_purity_cross(apply_purity_cross(g, p).unwrap(), p).unwrap();
                prop_assert!((back - g).abs() < 1e-12 * g.max(1.0));
            }

            #[test]
            fn reduction_to_ideal(g in 1.0f64..100.0) {
                let a = apply_purity_conditional(g, PurityParams::UNIT).unwrap();
                let b = eval_conditional_autocorr(g).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn general_formula_reduces_too(g in 1.0f64..100.0) {
                // the unit-purity shortcut must agree with the general expression
                let x = g - 1.0;
                let general = (2.0 + 4.0 * x) / ((x + 1.0) * (x + 1.0));
                prop_assert!((general - eval_conditional_autocorr(g).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn degradation_ordering(g in 1.0f64..100.0, pt in 0.05f64..=1.0, pp in 0.05f64..=1.0) {
                let p = PurityParams::new(pt, pp).unwrap();
                let m = apply_purity_cross(g, p).unwrap();
                prop_assert!(m >= 1.0 && m <= g);
                if pt * pp < 1.0 && g > 1.0 {
                    prop_assert!(m < g);
                }
            }
        }
    }
}
