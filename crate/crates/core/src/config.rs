//! Scenario files: JSON text to a validated `ScenarioConfig`.
//!
//! Errors carry the line and column reported by the parser. An unknown key
//! also names the closest accepted key when one is similar enough.

use std::fmt;

use crate::sim::scenario::ScenarioConfig;

/// Bigram overlap that makes a key a suggestion; catches reordered words.
const DICE_THRESHOLD: f64 = 0.5;
/// Jaro-Winkler similarity that makes a key a suggestion; catches typos.
const JARO_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    /// 1-based position, absent for semantic errors.
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub suggestion: Option<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(line), Some(column)) = (self.line, self.column) {
            write!(f, "line {line}, column {column}: ")?;
        }
        write!(f, "{}", self.message)?;
        if let Some(s) = &self.suggestion {
            write!(f, " (did you mean `{s}`?)")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Closest candidate to `key`, if any passes the similarity threshold.
pub fn suggest<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<String> {
    candidates
        .into_iter()
        .filter_map(|c| {
            let dice = strsim::sorensen_dice(key, c);
            let jaro = strsim::jaro_winkler(key, c);
            (dice >= DICE_THRESHOLD || jaro >= JARO_THRESHOLD).then_some((dice + jaro, c))
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}

/// Splits a serde "unknown field" message into the key and the accepted keys.
fn unknown_field(message: &str) -> Option<(String, Vec<String>)> {
    let rest = message.strip_prefix("unknown field `")?;
    let end = rest.find('`')?;
    let key = rest[..end].to_string();
    let expected = rest[end + 1..]
        .split('`')
        .skip(1)
        .step_by(2)
        .map(str::to_string)
        .collect();
    Some((key, expected))
}

/// Parses and validates a scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
        let full = e.to_string();
        // serde_json appends " at line L column C"; the position is kept separately.
        let message = full.rsplit_once(" at line ").map_or(full.as_str(), |(m, _)| m).to_string();
        let suggestion = unknown_field(&message)
            .and_then(|(key, expected)| suggest(&key, expected.iter().map(String::as_str)));
        let (line, column) = if e.line() == 0 { (None, None) } else { (Some(e.line()), Some(e.column())) };
        ConfigError { message, line, column, suggestion }
    })?;
    cfg.validate().map_err(|e| ConfigError { message: e.to_string(), line: None, column: None, suggestion: None })?;
    Ok(cfg)
}

pub fn to_json(cfg: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("scenario serializes")
}
