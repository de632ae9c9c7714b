use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gateway::StructuredOutput;

/// Replace lines `start_line..=end_line` (1-based) of `file`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairStep {
    pub file: String,
    pub start_line: usize,
    pub end_line: usize,
    pub replacement: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairPlan {
    pub steps: Vec<RepairStep>,
    pub root_cause: String,
}

impl StructuredOutput for RepairPlan {
    const SCHEMA_ID: &'static str = "repair-plan/v1";

    fn check(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err("repair plan has no steps".into());
        }
        check_steps(&self.steps)
    }
}

/// Shape of a list of steps, independent of any bundle.
pub fn check_steps(steps: &[RepairStep]) -> Result<(), String> {
    for step in steps {
        if step.explanation.trim().is_empty() {
            return Err(format!("step for {} has an empty explanation", step.file));
        }
        if step.start_line == 0 || step.start_line > step.end_line {
            return Err(format!(
                "step for {} has invalid span {}..{}",
                step.file, step.start_line, step.end_line
            ));
        }
    }
    let mut by_file: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for step in steps {
        by_file
            .entry(step.file.as_str())
            .or_default()
            .push((step.start_line, step.end_line));
    }
    for (file, mut spans) in by_file {
        spans.sort();
        for pair in spans.windows(2) {
            if pair[1].0 <= pair[0].1 {
                return Err(format!("overlapping steps in {file}"));
            }
        }
    }
    Ok(())
}

/// Apply steps to `files` bottom-up so earlier line numbers stay valid.
/// Returns a unified-style diff of the applied edits.
pub fn apply_steps(
    files: &mut BTreeMap<String, String>,
    steps: &[RepairStep],
) -> Result<String, String> {
    check_steps(steps)?;
    for step in steps {
        let Some(text) = files.get(&step.file) else {
            return Err(format!("{} is not part of the bundle", step.file));
        };
        let lines = text.lines().count();
        if step.end_line > lines {
            return Err(format!(
                "{}:{}-{} is outside the file ({lines} lines)",
                step.file, step.start_line, step.end_line
            ));
        }
    }

    let mut ordered: Vec<&RepairStep> = steps.iter().collect();
    ordered.sort_by(|a, b| a.file.cmp(&b.file).then(a.start_line.cmp(&b.start_line)));
    let mut diff = String::new();
    for step in &ordered {
        let text = &files[&step.file];
        let old: Vec<&str> = text.lines().collect();
        let removed = &old[step.start_line - 1..step.end_line];
        let added: Vec<&str> = step.replacement.lines().collect();
        diff.push_str(&format!(
            "--- a/{0}\n+++ b/{0}\n@@ -{1},{2} +{1},{3} @@\n",
            step.file,
            step.start_line,
            removed.len(),
            added.len()
        ));
        for line in removed {
            diff.push_str(&format!("-{line}\n"));
        }
        for line in &added {
            diff.push_str(&format!("+{line}\n"));
        }
    }

    for step in ordered.iter().rev() {
        let text = files.get_mut(&step.file).expect("checked above");
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let replacement: Vec<String> = step.replacement.lines().map(str::to_string).collect();
        lines.splice(step.start_line - 1..step.end_line, replacement);
        let mut joined = lines.join("\n");
        joined.push('\n');
        *text = joined;
    }
    Ok(diff)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(file: &str, start: usize, end: usize, replacement: &str) -> RepairStep {
        RepairStep {
            file: file.into(),
            start_line: start,
            end_line: end,
            replacement: replacement.into(),
            explanation: "fix".into(),
        }
    }

    fn files() -> BTreeMap<String, String> {
        BTreeMap::from([("a.py".to_string(), "one\ntwo\nthree\nfour\n".to_string())])
    }

    #[test]
    fn edits_apply_bottom_up() {
        let mut f = files();
        let diff = apply_steps(&mut f, &[step("a.py", 1, 1, "ONE\nONE-B"), step("a.py", 3, 4, "")]).unwrap();
        assert_eq!(f["a.py"], "ONE\nONE-B\ntwo\n");
        assert!(diff.contains("-one\n+ONE\n+ONE-B\n"));
        assert!(diff.contains("@@ -3,2 +3,0 @@"));
    }

    #[test]
    fn out_of_range_and_unknown_files() {
        assert!(apply_steps(&mut files(), &[step("a.py", 4, 5, "x")]).is_err());
        assert!(apply_steps(&mut files(), &[step("b.py", 1, 1, "x")]).is_err());
        assert!(apply_steps(&mut files(), &[step("a.py", 1, 2, "x"), step("a.py", 2, 3, "y")]).is_err());
    }

    #[test]
    fn empty_explanation_is_rejected() {
        let mut s = step("a.py", 1, 1, "x");
        s.explanation = " ".into();
        let plan = RepairPlan { steps: vec![s], root_cause: "r".into() };
        assert!(plan.check().is_err());
    }
}
