//! Doc-tested command transcripts.
//!
//! Markdown files may contain fenced blocks tagged `console`. Lines starting
//! with `$ setnas` are commands; the lines after a command are expected
//! output patterns, matched in order against the command's stdout. A pattern
//! is a literal substring unless prefixed with `re:`, which makes it a
//! regular expression (use this for tolerances, e.g. `re:loss 0\.\d+`).
//! Blocks in one file share a scratch working directory, so a transcript can
//! build a DB in one block and train on it in the next.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

/// One command plus its expected-output patterns.
#[derive(Clone, Debug)]
pub struct Step {
    pub command: Vec<String>,
    pub patterns: Vec<String>,
}

/// Parse every `console` fence in a markdown document into steps.
pub fn parse_markdown(text: &str) -> Vec<Step> {
    let mut steps = Vec::new();
    let mut in_console = false;
    for line in text.lines() {
        let trimmed = line.trim_end();
        if let Some(info) = trimmed.strip_prefix("```") {
            if in_console {
                in_console = false;
            } else if info.trim() == "console" {
                in_console = true;
            }
            continue;
        }
        if !in_console {
            continue;
        }
        if let Some(cmd) = trimmed.strip_prefix("$ ") {
            steps.push(Step {
                command: cmd.split_whitespace().map(String::from).collect(),
                patterns: Vec::new(),
            });
        } else if let Some(step) = steps.last_mut() {
            if !trimmed.trim().is_empty() {
                step.patterns.push(trimmed.trim().to_string());
            }
        }
    }
    steps
}

/// The set of subcommands exercised by the steps (for coverage checks).
pub fn commands_used(steps: &[Step]) -> BTreeSet<String> {
    steps
        .iter()
        .filter_map(|s| {
            if s.command.first().map(String::as_str) == Some("setnas") {
                s.command.get(1).cloned()
            } else {
                None
            }
        })
        .collect()
}

/// Execute the steps with `bin` standing in for `setnas`, in `workdir`.
/// Returns the first failing step's report (command, unmatched pattern, and
/// the observed output) or `Ok` when every pattern matched.
pub fn run_steps(steps: &[Step], bin: &Path, workdir: &Path) -> Result<(), String> {
    for step in steps {
        if step.command.first().map(String::as_str) != Some("setnas") {
            return Err(format!(
                "transcript step does not invoke setnas: {:?}",
                step.command
            ));
        }
        let output = Command::new(bin)
            .args(&step.command[1..])
            .current_dir(workdir)
            .env_remove("SETNAS_OUT_DIR")
            .output()
            .map_err(|e| format!("spawning {:?}: {e}", step.command))?;
        let stdout = String::from_utf8_lossy(&output.stdout);
        let stderr = String::from_utf8_lossy(&output.stderr);
        if !output.status.success() {
            return Err(format!(
                "command `{}` exited with {}\n--- stdout ---\n{stdout}\n--- stderr ---\n{stderr}",
                step.command.join(" "),
                output.status
            ));
        }
        let lines: Vec<&str> = stdout.lines().collect();
        let mut cursor = 0usize;
        for pattern in &step.patterns {
            let matched = find_match(&lines[cursor.min(lines.len())..], pattern);
            match matched {
                Some(offset) => cursor += offset + 1,
                None => {
                    return Err(format!(
                        "command `{}`:\n  expected (after line {cursor}): {pattern}\n  actual output:\n{}",
                        step.command.join(" "),
                        indent(&stdout)
                    ));
                }
            }
        }
    }
    Ok(())
}

fn find_match(lines: &[&str], pattern: &str) -> Option<usize> {
    match pattern.strip_prefix("re:") {
        Some(re_src) => {
            let re = regex::Regex::new(re_src).ok()?;
            lines.iter().position(|l| re.is_match(l))
        }
        None => lines.iter().position(|l| l.contains(pattern)),
    }
}

fn indent(s: &str) -> String {
    s.lines()
        .map(|l| format!("    {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}
