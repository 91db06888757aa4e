//! Dempster-Shafer fusion of the two stream classifiers over the frame of
//! discernment {real, fake}, and the final 0/1 verdict.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default discount (mass moved to the full set) for each stream.
pub const DEFAULT_DISCOUNT: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Basic belief assignment over {real}, {fake}, and the full set Θ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassFunction {
    pub m_real: f64,
    pub m_fake: f64,
    pub m_theta: f64,
}

impl MassFunction {
    pub fn new(m_real: f64, m_fake: f64, m_theta: f64) -> Result<MassFunction> {
        let m = MassFunction {
            m_real,
            m_fake,
            m_theta,
        };
        m.validate()?;
        Ok(m)
    }

    /// The neutral element of Dempster's rule.
    pub fn vacuous() -> MassFunction {
        MassFunction {
            m_real: 0.0,
            m_fake: 0.0,
            m_theta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.m_real, self.m_fake, self.m_theta] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid("masses must be non-negative finite numbers"));
            }
        }
        let sum = self.m_real + self.m_fake + self.m_theta;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("masses sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Point probability of fake: set-valued mass split evenly.
    pub fn pignistic_fake(&self) -> f64 {
        self.m_fake + self.m_theta / 2.0
    }
}

/// Build a mass function from a classifier probability with discount `u`
/// expressing model uncertainty.
pub fn mass_from_prob(p_fake: f64, discount: f64) -> Result<MassFunction> {
    if !(0.0..=1.0).contains(&p_fake) || !p_fake.is_finite() {
        return Err(Error::invalid(format!("p_fake {p_fake} out of [0,1]")));
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::invalid(format!("discount {discount} out of [0,1)")));
    }
    Ok(MassFunction {
        m_real: (1.0 - discount) * (1.0 - p_fake),
        m_fake: (1.0 - discount) * p_fake,
        m_theta: discount,
    })
}

/// Dempster's combination rule; errors on total conflict (K = 1).
pub fn dempster_combine(m1: &MassFunction, m2: &MassFunction) -> Result<MassFunction> {
    m1.validate()?;
    m2.validate()?;
    let conflict = m1.m_real * m2.m_fake + m1.m_fake * m2.m_real;
    let denom = 1.0 - conflict;
    if denom.abs() <= 1e-12 {
        return Err(Error::TotalConflict);
    }
    let m_fake = (m1.m_fake * m2.m_fake + m1.m_fake * m2.m_theta + m1.m_theta * m2.m_fake) / denom;
    let m_real = (m1.m_real * m2.m_real + m1.m_real * m2.m_theta + m1.m_theta * m2.m_real) / denom;
    let m_theta = m1.m_theta * m2.m_theta / denom;
    Ok(MassFunction {
        m_real,
        m_fake,
        m_theta,
    })
}

/// 1 (fake) iff the pignistic probability of fake strictly exceeds the
/// threshold; ties resolve to 0 (real).
pub fn decide(mass: &MassFunction, threshold: f64) -> u8 {
    u8::from(mass.pignistic_fake() > threshold)
}
