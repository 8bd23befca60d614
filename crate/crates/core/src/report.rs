//! Pass/fail records for numerical verification of inequalities and identities.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `measured ≤ bound + tolerance`.
    AtMost,
    /// `measured < bound` strictly.
    LessThan,
    /// `|measured − bound| ≤ tolerance`.
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub relation: Relation,
    /// Absolute tolerance applied to the comparison.
    pub tolerance: f64,
    pub passed: bool,
    /// Module that produced the measurement.
    pub provenance: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// True when every check passed; an empty report passes.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        measured: f64,
        relation: Relation,
        bound: f64,
        tolerance: f64,
        provenance: &str,
    ) -> &Check {
        let passed = match relation {
            Relation::AtMost => measured <= bound + tolerance,
            Relation::LessThan => measured < bound,
            Relation::Equal => (measured - bound).abs() <= tolerance,
        };
        self.checks.push(Check {
            name: name.into(),
            measured,
            bound,
            relation,
            tolerance,
            passed,
            provenance: provenance.to_string(),
        });
        self.checks.last().unwrap()
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.checks.extend(other.checks);
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> crate::Result<()> {
        writeln!(w, "name,measured,relation,bound,tolerance,passed,provenance")?;
        for c in &self.checks {
            let rel = match c.relation {
                Relation::AtMost => "at-most",
                Relation::LessThan => "less-than",
                Relation::Equal => "equal",
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                c.name, c.measured, rel, c.bound, c.tolerance, c.passed, c.provenance
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_is_conjunction() {
        let mut r = VerificationReport::new();
        assert!(r.passed());
        r.push("a", 1.0, Relation::AtMost, 1.0, 0.0, "t");
        r.push("b", 0.5, Relation::LessThan, 0.5, 1.0, "t");
        r.push("c", 1.02, Relation::Equal, 1.0, 0.03, "t");
        assert_eq!(
            r.checks.iter().map(|c| c.passed).collect::<Vec<_>>(),
            [true, false, true]
        );
        assert!(!r.passed());
        assert_eq!(r.failures().count(), 1);
    }
}
