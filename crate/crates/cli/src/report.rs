//! Run reports written as `report.json`.

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// `|value − target| ≤ tolerance`.
    pub fn near(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            target,
            tolerance,
            pass: (value - target).abs() <= tolerance,
        }
    }

    /// `value ≤ tolerance` for a non-negative error measure.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            target: 0.0,
            tolerance,
            pass: value <= tolerance,
        }
    }

    /// `value > bound`.
    pub fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            target: bound,
            tolerance: 0.0,
            pass: value > bound,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            target: 1.0,
            tolerance: 0.0,
            pass: ok,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
    pub seed: Option<u64>,
    pub wall_time: f64,
    pub version: String,
    pub config_hash: String,
}

impl RunReport {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn check_kinds() {
        assert!(Check::near("a", 1.0, 1.05, 0.1).pass);
        assert!(!Check::near("a", 1.0, 1.2, 0.1).pass);
        assert!(!Check::at_most("b", f64::NAN, 1.0).pass);
        assert!(!Check::above("c", 0.0, 0.0).pass);
    }
}
