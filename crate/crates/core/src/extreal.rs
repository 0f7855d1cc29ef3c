use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// A real value that may be the infinite sentinel (e.g. the condition
/// number of an exactly singular matrix).
///
/// Serializes finite values as JSON numbers and infinity as the string
/// `"inf"`, matching the CSV convention.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ExtReal(pub f64);

impl ExtReal {
    pub const INF: ExtReal = ExtReal(f64::INFINITY);

    pub fn finite(x: f64) -> Self {
        ExtReal(x)
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<f64> for ExtReal {
    fn from(x: f64) -> Self {
        ExtReal(x)
    }
}

impl std::fmt::Display for ExtReal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() && self.0 > 0.0 {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            serializer.serialize_f64(self.0)
        } else if self.0 > 0.0 {
            serializer.serialize_str("inf")
        } else if self.0 < 0.0 {
            serializer.serialize_str("-inf")
        } else {
            serializer.serialize_str("nan")
        }
    }
}

struct ExtRealVisitor;

impl<'de> Visitor<'de> for ExtRealVisitor {
    type Value = ExtReal;

    fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("a number or the string \"inf\"")
    }

    fn visit_f64<E: de::Error>(self, x: f64) -> Result<ExtReal, E> {
        Ok(ExtReal(x))
    }

    fn visit_i64<E: de::Error>(self, x: i64) -> Result<ExtReal, E> {
        Ok(ExtReal(x as f64))
    }

    fn visit_u64<E: de::Error>(self, x: u64) -> Result<ExtReal, E> {
        Ok(ExtReal(x as f64))
    }

    fn visit_str<E: de::Error>(self, s: &str) -> Result<ExtReal, E> {
        match s {
            "inf" => Ok(ExtReal(f64::INFINITY)),
            "-inf" => Ok(ExtReal(f64::NEG_INFINITY)),
            "nan" => Ok(ExtReal(f64::NAN)),
            _ => Err(E::custom(format!("unrecognized extended real: {s:?}"))),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<ExtReal, D::Error> {
        deserializer.deserialize_any(ExtRealVisitor)
    }
}
