//! Dempster–Shafer belief masses over the frame {O, F}.
//!
//! Only the three non-empty hypotheses `{O}`, `{F}` and `{O,F}` exist. A
//! [`BeliefMass`] stores the first two; the occluded mass `{O,F}` is always
//! derived as `1 - m_o - m_f`.

use crate::error::{Error, Result};

/// Closure tolerance applied after every operation.
pub const MASS_TOL: f64 = 1e-9;

/// Conflict at or above `1 - CONFLICT_EPS` counts as total conflict.
pub const CONFLICT_EPS: f64 = 1e-12;

/// Sums at or below this cannot be renormalized.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Per-cell masses for `{O}` and `{F}`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BeliefMass {
    pub m_o: f64,
    pub m_f: f64,
}

impl BeliefMass {
    /// Fully occluded cell: `m({O,F}) = 1`.
    pub const VACUOUS: BeliefMass = BeliefMass { m_o: 0.0, m_f: 0.0 };

    /// Builds a mass without validation. Callers that accept untrusted values
    /// should use [`BeliefMass::try_new`].
    #[inline]
    pub const fn new(m_o: f64, m_f: f64) -> Self {
        BeliefMass { m_o, m_f }
    }

    pub fn try_new(m_o: f64, m_f: f64) -> Result<Self> {
        let m = BeliefMass { m_o, m_f };
        if m.is_valid() {
            Ok(m)
        } else {
            Err(Error::InvalidMass { m_o, m_f })
        }
    }

    /// Implied occluded mass `m({O,F})`.
    #[inline]
    pub fn m_of(&self) -> f64 {
        1.0 - self.m_o - self.m_f
    }

    pub fn is_valid(&self) -> bool {
        self.m_o.is_finite()
            && self.m_f.is_finite()
            && self.m_o >= 0.0
            && self.m_f >= 0.0
            && self.m_o + self.m_f <= 1.0 + MASS_TOL
    }

    #[inline]
    pub fn is_vacuous(&self) -> bool {
        self.m_o == 0.0 && self.m_f == 0.0
    }

    /// Dempster conflict `K` against another mass.
    #[inline]
    pub fn conflict(&self, other: &BeliefMass) -> f64 {
        self.m_o * other.m_f + self.m_f * other.m_o
    }
}

/// Dempster numerators before division by `1 - K`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnnormalizedMass {
    pub u_o: f64,
    pub u_f: f64,
    pub u_of: f64,
}

impl UnnormalizedMass {
    #[inline]
    pub fn total(&self) -> f64 {
        self.u_o + self.u_f + self.u_of
    }
}

/// Unnormalized Dempster combination.
///
/// Products landing on the empty set are dropped, so the component sum is
/// `1 - K`. Total conflict yields all zeros instead of an error.
#[inline]
pub fn ds_fuse_unnormalized(a: BeliefMass, b: BeliefMass) -> UnnormalizedMass {
    let (a_of, b_of) = (a.m_of().max(0.0), b.m_of().max(0.0));
    UnnormalizedMass {
        u_o: a.m_o * b.m_o + (a.m_o * b_of + a_of * b.m_o),
        u_f: a.m_f * b.m_f + (a.m_f * b_of + a_of * b.m_f),
        u_of: a_of * b_of,
    }
}

/// Normalized Dempster combination.
pub fn ds_fuse(a: BeliefMass, b: BeliefMass) -> Result<BeliefMass> {
    let k = a.conflict(&b);
    if k >= 1.0 - CONFLICT_EPS {
        return Err(Error::TotalConflict { conflict: k });
    }
    let u = ds_fuse_unnormalized(a, b);
    let norm = 1.0 - k;
    Ok(clamp_simplex(u.u_o / norm, u.u_f / norm))
}

/// Divides the numerators by their sum.
pub fn normalize_mass(u: UnnormalizedMass) -> Result<BeliefMass> {
    let total = u.total();
    if !(total > DEGENERATE_EPS) {
        return Err(Error::DegenerateMass { total });
    }
    Ok(clamp_simplex(u.u_o / total, u.u_f / total))
}

/// Classical discounting: scales `{O}` and `{F}` by `gamma`, the remainder
/// moves to `{O,F}`.
#[inline]
pub fn discount_mass(m: BeliefMass, gamma: f64) -> BeliefMass {
    BeliefMass::new(gamma * m.m_o, gamma * m.m_f)
}

/// Pignistic occupancy probability `0.5 m_o + 0.5 (1 - m_f)`.
#[inline]
pub fn pignistic(m: BeliefMass) -> f64 {
    0.5 * m.m_o + 0.5 * (1.0 - m.m_f)
}

// Rounding can push a sum a few ulps past one.
#[inline]
fn clamp_simplex(m_o: f64, m_f: f64) -> BeliefMass {
    let m_o = m_o.max(0.0);
    let m_f = m_f.max(0.0);
    let s = m_o + m_f;
    if s > 1.0 {
        BeliefMass::new(m_o / s, m_f / s)
    } else {
        BeliefMass::new(m_o, m_f)
    }
}
