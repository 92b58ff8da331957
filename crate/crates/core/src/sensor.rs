//! Signal vocabulary of the air production unit and the failure classes.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Number of monitored signals.
pub const N_SENSORS: usize = 16;

/// Number of target classes.
pub const N_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignalKind {
    Analog,
    Digital,
}

/// One of the sixteen APU signals, in catalogue order (analog first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sensor {
    DvPressure,
    Flowmeter,
    H1,
    MotorCurrent,
    OilTemperature,
    Reservoirs,
    Tp2,
    Tp3,
    CaudalImpulses,
    Comp,
    DvElectric,
    Lps,
    Mpg,
    OilLevel,
    PressureSwitch,
    Towers,
}

impl Sensor {
    pub const ALL: [Sensor; N_SENSORS] = [
        Sensor::DvPressure,
        Sensor::Flowmeter,
        Sensor::H1,
        Sensor::MotorCurrent,
        Sensor::OilTemperature,
        Sensor::Reservoirs,
        Sensor::Tp2,
        Sensor::Tp3,
        Sensor::CaudalImpulses,
        Sensor::Comp,
        Sensor::DvElectric,
        Sensor::Lps,
        Sensor::Mpg,
        Sensor::OilLevel,
        Sensor::PressureSwitch,
        Sensor::Towers,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// 1-based catalogue number.
    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn from_number(number: usize) -> Option<Sensor> {
        number.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn kind(self) -> SignalKind {
        if self.index() < 8 {
            SignalKind::Analog
        } else {
            SignalKind::Digital
        }
    }

    pub fn is_analog(self) -> bool {
        self.kind() == SignalKind::Analog
    }

    /// Canonical column name.
    pub fn name(self) -> &'static str {
        match self {
            Sensor::DvPressure => "DV pressure",
            Sensor::Flowmeter => "Flowmeter",
            Sensor::H1 => "H1",
            Sensor::MotorCurrent => "MC",
            Sensor::OilTemperature => "Oil temperature",
            Sensor::Reservoirs => "Reservoirs",
            Sensor::Tp2 => "TP2",
            Sensor::Tp3 => "TP3",
            Sensor::CaudalImpulses => "Caudal impulses",
            Sensor::Comp => "COMP",
            Sensor::DvElectric => "DV electric",
            Sensor::Lps => "LPS",
            Sensor::Mpg => "MPG",
            Sensor::OilLevel => "Oil level",
            Sensor::PressureSwitch => "Pressure switch",
            Sensor::Towers => "Towers",
        }
    }

    /// Resolves a column header, accepting the spellings found in published
    /// dumps of the dataset (underscores, long names, the `eletric` typo).
    pub fn from_column(header: &str) -> Option<Sensor> {
        let key: String = header
            .trim()
            .chars()
            .map(|c| if c == '_' || c == '-' { ' ' } else { c.to_ascii_lowercase() })
            .collect();
        let key = key.split_whitespace().collect::<Vec<_>>().join(" ");
        let sensor = match key.as_str() {
            "dv pressure" => Sensor::DvPressure,
            "flowmeter" => Sensor::Flowmeter,
            "h1" => Sensor::H1,
            "mc" | "motor current" => Sensor::MotorCurrent,
            "oil temperature" => Sensor::OilTemperature,
            "reservoirs" => Sensor::Reservoirs,
            "tp2" => Sensor::Tp2,
            "tp3" => Sensor::Tp3,
            "caudal impulses" | "flow rate" => Sensor::CaudalImpulses,
            "comp" => Sensor::Comp,
            "dv electric" | "dv eletric" => Sensor::DvElectric,
            "lps" => Sensor::Lps,
            "mpg" | "mgp" => Sensor::Mpg,
            "oil level" => Sensor::OilLevel,
            "pressure switch" => Sensor::PressureSwitch,
            "towers" | "air dryer tower" => Sensor::Towers,
            _ => return None,
        };
        Some(sensor)
    }

    pub fn analog() -> impl Iterator<Item = Sensor> {
        Self::ALL.into_iter().filter(|s| s.is_analog())
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sensor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Sensor::from_column(s).ok_or_else(|| format!("unknown sensor `{s}`"))
    }
}

impl Serialize for Sensor {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Sensor {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ground-truth / predicted class. The declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum ClassLabel {
    #[default]
    NonFailure,
    OilLeakCompressor,
    AirLeakDryer,
    AirLeakClient,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; N_CLASSES] = [
        ClassLabel::NonFailure,
        ClassLabel::OilLeakCompressor,
        ClassLabel::AirLeakDryer,
        ClassLabel::AirLeakClient,
    ];

    #[inline]
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<ClassLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn is_failure(self) -> bool {
        self != ClassLabel::NonFailure
    }

    /// Clause used in rendered explanations.
    pub fn phrase(self) -> &'static str {
        match self {
            ClassLabel::NonFailure => "there is no failure",
            ClassLabel::OilLeakCompressor => "there is an oil leak in the compressor",
            ClassLabel::AirLeakDryer => "there is an air leak in the air dryer",
            ClassLabel::AirLeakClient => "there is an air leak in the clients",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClassLabel::NonFailure => "NonFailure",
            ClassLabel::OilLeakCompressor => "OilLeakCompressor",
            ClassLabel::AirLeakDryer => "AirLeakDryer",
            ClassLabel::AirLeakClient => "AirLeakClient",
        };
        f.write_str(s)
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown class `{s}`"))
    }
}

/// Index of the largest score; ties go to the lowest ordinal.
pub fn argmax_class(scores: &[f64; N_CLASSES]) -> ClassLabel {
    let mut best = 0;
    for i in 1..N_CLASSES {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    ClassLabel::ALL[best]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_aliases_resolve() {
        assert_eq!(Sensor::from_column("DV_pressure"), Some(Sensor::DvPressure));
        assert_eq!(Sensor::from_column("Motor_current"), Some(Sensor::MotorCurrent));
        assert_eq!(Sensor::from_column("DV_eletric"), Some(Sensor::DvElectric));
        assert_eq!(Sensor::from_column(" Oil temperature "), Some(Sensor::OilTemperature));
        assert_eq!(Sensor::from_column("timestamp"), None);
    }

    #[test]
    fn catalogue_numbers() {
        assert_eq!(Sensor::DvPressure.number(), 1);
        assert_eq!(Sensor::Tp3.number(), 8);
        assert_eq!(Sensor::Towers.number(), 16);
        assert_eq!(Sensor::analog().count(), 8);
        for s in Sensor::ALL {
            assert_eq!(Sensor::from_number(s.number()), Some(s));
            assert_eq!(s.name().parse::<Sensor>().unwrap(), s);
        }
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax_class(&[1.0, 1.0, 0.0, 0.0]), ClassLabel::NonFailure);
        assert_eq!(argmax_class(&[0.0, 2.0, 2.0, 0.0]), ClassLabel::OilLeakCompressor);
    }
}
