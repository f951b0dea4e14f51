//! Quantities written as `"<number> <unit>"` in scenario files.

use std::fmt;
use std::marker::PhantomData;

use pansim_core::SimTime;
use serde::de::{self, Deserialize, Deserializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnitError {
    #[error("expected \"<number> <unit>\" with unit {expected}, got {got:?}")]
    Malformed { got: String, expected: &'static str },
    #[error("unknown unit {unit:?} (expected {expected})")]
    UnknownUnit { unit: String, expected: &'static str },
    #[error("{0:?} is not a whole number of microseconds")]
    FractionalMicros(String),
    #[error("{0:?} must not be negative")]
    Negative(String),
    #[error("{0:?} is not a whole number of bytes")]
    FractionalBytes(String),
}

/// A physical dimension: accepted unit suffixes and their scale to the
/// canonical unit.
pub trait Dimension {
    const EXPECTED: &'static str;
    const UNITS: &'static [(&'static str, f64)];
}

macro_rules! dimension {
    ($name:ident, $expected:literal, [$(($u:literal, $f:expr)),+ $(,)?]) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name;
        impl Dimension for $name {
            const EXPECTED: &'static str = $expected;
            const UNITS: &'static [(&'static str, f64)] = &[$(($u, $f)),+];
        }
    };
}

dimension!(Time, "us, ms or s", [("us", 1.0), ("µs", 1.0), ("ms", 1e3), ("s", 1e6)]);
dimension!(PowerDbm, "dBm", [("dBm", 1.0)]);
dimension!(Decibel, "dB", [("dB", 1.0)]);
dimension!(Gain, "dBi or dB", [("dBi", 1.0), ("dB", 1.0)]);
dimension!(Length, "m or cm", [("m", 1.0), ("cm", 0.01)]);
dimension!(Current, "mA, uA or A", [("mA", 1.0), ("uA", 1e-3), ("µA", 1e-3), ("A", 1e3)]);
dimension!(CurrentSlope, "mA/dBm", [("mA/dBm", 1.0)]);
dimension!(Voltage, "V or mV", [("V", 1.0), ("mV", 1e-3)]);
dimension!(Size, "B", [("B", 1.0)]);

/// Parse `"<number> <unit>"` into the canonical unit of `D`.
pub fn parse<D: Dimension>(s: &str) -> Result<f64, UnitError> {
    let t = s.trim();
    let split = t.find(|c: char| c.is_whitespace() || (c.is_alphabetic() && c != 'e' && c != 'E') || c == 'µ');
    let malformed = || UnitError::Malformed { got: s.to_string(), expected: D::EXPECTED };
    let (num, unit) = match split {
        Some(i) => (&t[..i], t[i..].trim()),
        None => return Err(malformed()),
    };
    let value: f64 = num.trim().parse().map_err(|_| malformed())?;
    if !value.is_finite() {
        return Err(malformed());
    }
    let (_, scale) = D::UNITS
        .iter()
        .find(|(u, _)| *u == unit)
        .ok_or_else(|| UnitError::UnknownUnit { unit: unit.to_string(), expected: D::EXPECTED })?;
    Ok(value * scale)
}

pub fn parse_time(s: &str) -> Result<SimTime, UnitError> {
    let us = parse::<Time>(s)?;
    if us < 0.0 {
        return Err(UnitError::Negative(s.to_string()));
    }
    let rounded = us.round();
    if (us - rounded).abs() > 1e-6 {
        return Err(UnitError::FractionalMicros(s.to_string()));
    }
    Ok(SimTime::from_micros(rounded as u64))
}

pub fn parse_bytes(s: &str) -> Result<u32, UnitError> {
    let b = parse::<Size>(s)?;
    if b < 0.0 {
        return Err(UnitError::Negative(s.to_string()));
    }
    if b.fract() != 0.0 || b > f64::from(u32::MAX) {
        return Err(UnitError::FractionalBytes(s.to_string()));
    }
    Ok(b as u32)
}

/// Shortest exact rendering of a duration.
pub fn fmt_time(t: SimTime) -> String {
    let us = t.as_micros();
    if us != 0 && us % 1_000_000 == 0 {
        format!("{} s", us / 1_000_000)
    } else if us != 0 && us % 1_000 == 0 {
        format!("{} ms", us / 1_000)
    } else {
        format!("{us} us")
    }
}

/// `value` followed by `unit`, without a trailing `.0` on whole numbers.
pub fn fmt_quantity(value: f64, unit: &str) -> String {
    format!("{} {unit}", fmt_number(value))
}

pub fn fmt_number(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v}")
}

/// A value of dimension `D`, deserialized from a unit string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Q<D> {
    pub value: f64,
    _d: PhantomData<D>,
}

impl<'de, D: Dimension> Deserialize<'de> for Q<D> {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        let s = String::deserialize(d)?;
        parse::<D>(&s).map(|value| Q { value, _d: PhantomData }).map_err(de::Error::custom)
    }
}

/// A duration deserialized from a unit string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Duration(pub SimTime);

impl<'de> Deserialize<'de> for Duration {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        let s = String::deserialize(d)?;
        parse_time(&s).map(Duration).map_err(de::Error::custom)
    }
}

/// A byte count deserialized from a unit string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bytes(pub u32);

impl<'de> Deserialize<'de> for Bytes {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        let s = String::deserialize(d)?;
        parse_bytes(&s).map(Bytes).map_err(de::Error::custom)
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&fmt_time(self.0))
    }
}
