//! Tapped-delay-line power-delay profiles (3GPP TR 38.901, TDL-A and TDL-C).
//!
//! Rows are `(normalized delay, power in dB)` in table order. Table order is
//! not delay order, so [`TdlProfile::new`] sorts the taps.

use serde::{Deserialize, Serialize};

use super::ChannelError;

/// TR 38.901 Table 7.7.2-1.
pub const TDL_A: &[(f64, f64)] = &[
    (0.0000, -13.4),
    (0.3819, 0.0),
    (0.4025, -2.2),
    (0.5868, -4.0),
    (0.4610, -6.0),
    (0.5375, -8.2),
    (0.6708, -9.9),
    (0.5750, -10.5),
    (0.7618, -7.5),
    (1.5375, -15.9),
    (1.8978, -6.6),
    (2.2242, -16.7),
    (2.1717, -12.4),
    (2.4942, -15.2),
    (2.5119, -10.8),
    (3.0582, -11.3),
    (4.0810, -12.7),
    (4.4579, -16.2),
    (4.5695, -18.3),
    (4.7966, -18.9),
    (5.0066, -16.6),
    (5.3043, -19.9),
    (9.6586, -29.7),
];

/// TR 38.901 Table 7.7.2-3.
#[allow(clippy::approx_constant)] // 0.6366 is a tabulated delay
pub const TDL_C: &[(f64, f64)] = &[
    (0.0000, -4.4),
    (0.2099, -1.2),
    (0.2219, -3.5),
    (0.2329, -5.2),
    (0.2176, -2.5),
    (0.6366, 0.0),
    (0.6448, -2.2),
    (0.6560, -3.9),
    (0.6584, -7.4),
    (0.7935, -7.1),
    (0.8213, -10.7),
    (0.9336, -11.1),
    (1.2285, -5.1),
    (1.3083, -6.8),
    (2.1704, -8.7),
    (2.7105, -13.2),
    (4.2589, -13.9),
    (4.6003, -13.9),
    (5.4902, -15.8),
    (5.6077, -17.1),
    (6.3065, -16.0),
    (6.6374, -15.7),
    (7.0427, -21.6),
    (8.6523, -22.8),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfileKind {
    #[serde(rename = "TDL-A")]
    TdlA,
    #[serde(rename = "TDL-C")]
    TdlC,
}

impl ProfileKind {
    pub fn id(self) -> u8 {
        match self {
            ProfileKind::TdlA => 0,
            ProfileKind::TdlC => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(ProfileKind::TdlA),
            1 => Some(ProfileKind::TdlC),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProfileKind::TdlA => "TDL-A",
            ProfileKind::TdlC => "TDL-C",
        }
    }
}

impl std::fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileTap {
    pub normalized_delay: f64,
    /// Linear power, normalized so the profile sums to one.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdlProfile {
    name: Option<ProfileKind>,
    taps: Vec<ProfileTap>,
}

impl TdlProfile {
    /// Builds a profile from `(normalized delay, dB)` rows, sorting by delay
    /// and normalizing total linear power to one.
    pub fn new(name: Option<ProfileKind>, rows: &[(f64, f64)]) -> Result<Self, ChannelError> {
        if rows.is_empty() {
            return Err(ChannelError::InvalidProfile("profile has no taps".into()));
        }
        let mut taps: Vec<ProfileTap> = rows
            .iter()
            .map(|&(d, db)| ProfileTap {
                normalized_delay: d,
                power: 10f64.powf(db / 10.0),
            })
            .collect();
        if taps
            .iter()
            .any(|t| !(t.normalized_delay >= 0.0) || !t.normalized_delay.is_finite() || !t.power.is_finite())
        {
            return Err(ChannelError::InvalidProfile(
                "tap delays must be finite and non-negative".into(),
            ));
        }
        taps.sort_by(|a, b| a.normalized_delay.total_cmp(&b.normalized_delay));
        if taps.windows(2).any(|w| w[0].normalized_delay == w[1].normalized_delay) {
            return Err(ChannelError::InvalidProfile("duplicate tap delay".into()));
        }
        let total: f64 = taps.iter().map(|t| t.power).sum();
        for t in &mut taps {
            t.power /= total;
        }
        Ok(Self { name, taps })
    }

    pub fn standard(kind: ProfileKind) -> Self {
        let rows = match kind {
            ProfileKind::TdlA => TDL_A,
            ProfileKind::TdlC => TDL_C,
        };
        Self::new(Some(kind), rows).expect("embedded tables are valid")
    }

    pub fn name(&self) -> Option<ProfileKind> {
        self.name
    }

    pub fn taps(&self) -> &[ProfileTap] {
        &self.taps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_profiles_are_normalized_and_sorted() {
        for kind in [ProfileKind::TdlA, ProfileKind::TdlC] {
            let p = TdlProfile::standard(kind);
            let total: f64 = p.taps().iter().map(|t| t.power).sum();
            assert!((total - 1.0).abs() <= 1e-12, "{kind}: {total}");
            assert!(p.taps().windows(2).all(|w| w[0].normalized_delay < w[1].normalized_delay));
            assert!(p.taps()[0].normalized_delay >= 0.0);
        }
        assert_eq!(TdlProfile::standard(ProfileKind::TdlA).taps().len(), 23);
        assert_eq!(TdlProfile::standard(ProfileKind::TdlC).taps().len(), 24);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(TdlProfile::new(None, &[]).is_err());
        assert!(TdlProfile::new(None, &[(-1.0, 0.0)]).is_err());
        assert!(TdlProfile::new(None, &[(1.0, 0.0), (1.0, -3.0)]).is_err());
    }

    #[test]
    fn single_tap_has_unit_power() {
        let p = TdlProfile::new(None, &[(0.0, -7.0)]).unwrap();
        assert_eq!(p.taps()[0].power, 1.0);
    }
}
