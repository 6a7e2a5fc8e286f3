use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    /// Some access label covers every observable unit.
    TopWidened,
    /// Some path exceeded the unroll limit and was dropped; the count is
    /// not a bound.
    UnrollLimit,
}

impl Status {
    pub fn is_conclusive(self) -> bool {
        self == Status::Ok
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::TopWidened => "top-widened",
            Status::UnrollLimit => "unroll-limit",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverReport {
    pub observer: String,
    /// Upper bound on the number of distinct views.
    #[serde(serialize_with = "count_to_str", deserialize_with = "count_from_str")]
    pub count: BigUint,
    /// `log2(count)`.
    pub bits: f64,
    pub vertices: usize,
    pub edges: usize,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakReport {
    pub bitwidth: u32,
    pub observers: Vec<ObserverReport>,
}

impl LeakReport {
    pub fn get(&self, observer: &str) -> Option<&ObserverReport> {
        self.observers.iter().find(|o| o.observer == observer)
    }

    /// The least conclusive status among all observers.
    pub fn status(&self) -> Status {
        self.observers.iter().map(|o| o.status).max_by_key(|s| *s as u8).unwrap_or(Status::Ok)
    }
}

impl fmt::Display for LeakReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.observers.iter().map(|o| o.observer.len()).max().unwrap_or(0).max(8);
        writeln!(f, "{:<w$}  {:>12}  {:>8}  status", "observer", "count", "bits")?;
        for o in &self.observers {
            writeln!(f, "{:<w$}  {:>12}  {:>8.3}  {}", o.observer, o.count.to_string(), o.bits, o.status)?;
        }
        Ok(())
    }
}

fn count_to_str<S: Serializer>(c: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&c.to_string())
}

fn count_from_str<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}
