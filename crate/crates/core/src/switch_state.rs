use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// On/off pattern of every switch in a netlist, in netlist order. `true` is ON.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SwitchState(Vec<bool>);

impl SwitchState {
    pub fn new(bits: Vec<bool>) -> Self {
        SwitchState(bits)
    }

    pub fn all_off(len: usize) -> Self {
        SwitchState(vec![false; len])
    }

    /// Builds a state from the low `len` bits of `mask`; bit 0 is the first switch.
    pub fn from_mask(mask: u64, len: usize) -> Self {
        SwitchState((0..len).map(|i| mask >> i & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.0[i] = on;
    }

    /// Inverse of [`SwitchState::from_mask`] for states of at most 64 switches.
    pub fn mask(&self) -> u64 {
        self.0.iter().enumerate().fold(0, |m, (i, b)| m | (*b as u64) << i)
    }

    pub fn count_on(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

impl fmt::Display for SwitchState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for SwitchState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SwitchState({self})")
    }
}

impl FromStr for SwitchState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidArgument(format!(
                    "switch state '{s}' contains '{other}'"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(SwitchState)
    }
}

impl Serialize for SwitchState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SwitchState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_string_round_trip() {
        let s: SwitchState = "01011010".parse().unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.to_string(), "01011010");
        assert_eq!(s.count_on(), 4);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "\"01011010\"");
        assert_eq!(serde_json::from_str::<SwitchState>(&json).unwrap(), s);
    }

    #[test]
    fn mask_is_little_endian() {
        assert_eq!(SwitchState::from_mask(0b0110, 4).to_string(), "0110");
        assert_eq!(SwitchState::from_mask(0b0001, 4).to_string(), "1000");
    }

    #[test]
    fn rejects_bad_chars() {
        assert!("01x".parse::<SwitchState>().is_err());
    }
}
