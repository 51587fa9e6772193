use std::fmt;

/// A single failed check inside a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Where the check failed (grid point, sample index, time).
    pub at: f64,
    pub detail: String,
}

/// Outcome of a sampled property check.
///
/// Checks never bail out on the first failure: every violation is collected so
/// callers can print the full picture. `notes` carries caveats that do not
/// affect the verdict (grid bounds, vacuous passes, worst samples).
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub name: String,
    pub checked: usize,
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            violations: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violate(&mut self, at: f64, detail: impl Into<String>) {
        self.violations.push(Violation {
            at,
            detail: detail.into(),
        });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Folds another report's counts and findings into this one.
    pub fn absorb(&mut self, other: ValidationReport) {
        self.checked += other.checked;
        self.violations.extend(other.violations);
        self.notes.extend(other.notes);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{}: {} ({} checked, {} violations)",
            self.name,
            verdict,
            self.checked,
            self.violations.len()
        )?;
        for v in self.violations.iter().take(5) {
            write!(f, "\n  at {:.6e}: {}", v.at, v.detail)?;
        }
        if self.violations.len() > 5 {
            write!(f, "\n  ... {} more", self.violations.len() - 5)?;
        }
        for n in &self.notes {
            write!(f, "\n  note: {n}")?;
        }
        Ok(())
    }
}
