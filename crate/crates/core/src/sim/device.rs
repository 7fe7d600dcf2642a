use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative compute speed class; larger multipliers are slower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceClass {
    D1,
    D2,
    D3,
    D4,
    D5,
}

impl DeviceClass {
    pub const ALL: [DeviceClass; 5] = [Self::D1, Self::D2, Self::D3, Self::D4, Self::D5];

    /// Seconds per local epoch relative to the base.
    pub fn multiplier(self) -> f64 {
        match self {
            Self::D1 => 8.0,
            Self::D2 => 4.0,
            Self::D3 => 2.0,
            Self::D4 => 1.0,
            Self::D5 => 10.0,
        }
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for DeviceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown device class `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceProfile {
    pub class: DeviceClass,
    pub seconds_per_epoch: f64,
    /// Compute times are scaled by a uniform factor in `1 +- jitter`.
    pub jitter: f64,
}

impl DeviceProfile {
    pub fn new(class: DeviceClass, base_seconds: f64, jitter: f64) -> Result<Self> {
        let seconds_per_epoch = base_seconds * class.multiplier();
        if !(seconds_per_epoch > 0.0 && seconds_per_epoch.is_finite()) {
            return Err(Error::invalid("seconds per epoch must be positive"));
        }
        if !(0.0..1.0).contains(&jitter) {
            return Err(Error::invalid(format!("jitter must lie in [0, 1), got {jitter}")));
        }
        Ok(Self { class, seconds_per_epoch, jitter })
    }

    /// Compute time for `epochs` local epochs; `u` is a uniform draw in [0, 1).
    pub fn compute_time(&self, epochs: usize, u: f64) -> f64 {
        self.seconds_per_epoch * epochs as f64 * (1.0 + self.jitter * (2.0 * u - 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Per-client link with a fixed up rate and `asymmetry` times faster down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub upstream: f64,
    pub downstream: f64,
}

impl LinkModel {
    pub fn new(upstream: f64, asymmetry: f64) -> Result<Self> {
        if !(upstream > 0.0) {
            return Err(Error::invalid(format!("upstream rate must be positive, got {upstream}")));
        }
        if !(asymmetry > 0.0) {
            return Err(Error::invalid(format!("asymmetry ratio must be positive, got {asymmetry}")));
        }
        Ok(Self { upstream, downstream: upstream * asymmetry })
    }

    pub fn asymmetry(&self) -> f64 {
        self.downstream / self.upstream
    }

    pub fn rate(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Up => self.upstream,
            Direction::Down => self.downstream,
        }
    }
}

/// Seconds to move `bytes` in `direction`.
pub fn transfer_time(bytes: u64, direction: Direction, link: &LinkModel) -> f64 {
    bytes as f64 / link.rate(direction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn down_is_faster_by_ratio() {
        let link = LinkModel::new(1000.0, 10.0).unwrap();
        let up = transfer_time(5000, Direction::Up, &link);
        let down = transfer_time(5000, Direction::Down, &link);
        assert!((down - up / 10.0).abs() < 1e-15);
    }

    #[test]
    fn four_thousand_params_at_sixteen_kb() {
        let link = LinkModel::new(16_000.0, 10.0).unwrap();
        assert_eq!(transfer_time(4000 * 4, Direction::Up, &link), 1.0);
    }

    #[test]
    fn invalid_links_rejected() {
        assert!(LinkModel::new(1000.0, 0.0).is_err());
        assert!(LinkModel::new(0.0, 10.0).is_err());
    }

    #[test]
    fn device_parsing_and_timing() {
        assert_eq!("d5".parse::<DeviceClass>().unwrap(), DeviceClass::D5);
        let p = DeviceProfile::new(DeviceClass::D2, 0.5, 0.0).unwrap();
        assert_eq!(p.compute_time(3, 0.9), 6.0);
        assert!(DeviceProfile::new(DeviceClass::D2, 0.5, 1.0).is_err());
    }
}
