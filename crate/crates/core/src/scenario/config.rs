//! Low-level parser for the scenario config format: flat sectioned
//! key-value text.
//!
//! ```text
//! # comment
//! name = my-scenario          globals before any section
//! [network]                   a section
//! family = cycle
//! edge = 0 1 1.0              some keys may repeat
//! [protocol]                  sections may repeat too
//! ...
//! ```
//!
//! `#` starts a comment anywhere on a line; keys and values are trimmed.
//! Which keys are allowed where, and which may repeat, is decided by the
//! typed layer on top.

use super::ScenarioError;

#[derive(Debug, Clone)]
pub struct RawEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct RawSection {
    pub name: String,
    pub line: usize,
    pub entries: Vec<RawEntry>,
}

#[derive(Debug, Clone)]
pub struct RawConfig {
    pub globals: Vec<RawEntry>,
    pub sections: Vec<RawSection>,
}

pub fn parse_raw(text: &str) -> Result<RawConfig, ScenarioError> {
    let mut globals = Vec::new();
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| ScenarioError::Parse {
                line,
                message: "section header must look like `[name]`".into(),
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(ScenarioError::Parse {
                    line,
                    message: "empty section name".into(),
                });
            }
            sections.push(RawSection {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ScenarioError::Parse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let entry = RawEntry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line,
        };
        if entry.key.is_empty() {
            return Err(ScenarioError::Parse {
                line,
                message: "empty key".into(),
            });
        }
        if entry.value.is_empty() {
            return Err(ScenarioError::Parse {
                line,
                message: format!("key `{}` has an empty value", entry.key),
            });
        }
        match sections.last_mut() {
            Some(section) => section.entries.push(entry),
            None => globals.push(entry),
        }
    }
    Ok(RawConfig { globals, sections })
}

/// Typed access to one section's entries, tracking which keys were consumed
/// so leftovers (typos) can be reported.
pub struct SectionReader<'a> {
    pub section: &'a str,
    entries: &'a [RawEntry],
    used: Vec<bool>,
}

impl<'a> SectionReader<'a> {
    pub fn new(section: &'a str, entries: &'a [RawEntry]) -> Self {
        Self {
            section,
            entries,
            used: vec![false; entries.len()],
        }
    }

    fn err(&self, line: usize, message: String) -> ScenarioError {
        ScenarioError::Validation {
            section: self.section.to_string(),
            line,
            message,
        }
    }

    /// The last occurrence of a unique key, or None.
    pub fn optional_str(&mut self, key: &str) -> Result<Option<&'a str>, ScenarioError> {
        let mut found: Option<(usize, &RawEntry)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if e.key == key {
                if let Some((_, prev)) = found {
                    return Err(self.err(
                        e.line,
                        format!("key `{key}` appears twice (first at line {})", prev.line),
                    ));
                }
                found = Some((i, e));
            }
        }
        if let Some((i, e)) = found {
            self.used[i] = true;
            return Ok(Some(e.value.as_str()));
        }
        Ok(None)
    }

    pub fn require_str(&mut self, key: &str) -> Result<&'a str, ScenarioError> {
        self.optional_str(key)?.ok_or_else(|| {
            self.err(
                self.entries.first().map_or(0, |e| e.line),
                format!("missing required key `{key}`"),
            )
        })
    }

    pub fn optional_parse<T: std::str::FromStr>(
        &mut self,
        key: &str,
    ) -> Result<Option<T>, ScenarioError> {
        let line = self.line_of(key);
        match self.optional_str(key)? {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                self.err(
                    line,
                    format!(
                        "cannot parse `{v}` for key `{key}` as {}",
                        std::any::type_name::<T>()
                    ),
                )
            }),
        }
    }

    pub fn require_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ScenarioError> {
        let line = self.line_of(key);
        let v = self.require_str(key)?;
        v.parse::<T>().map_err(|_| {
            self.err(
                line,
                format!(
                    "cannot parse `{v}` for key `{key}` as {}",
                    std::any::type_name::<T>()
                ),
            )
        })
    }

    pub fn parse_with_default<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: T,
    ) -> Result<T, ScenarioError> {
        Ok(self.optional_parse(key)?.unwrap_or(default))
    }

    /// Every occurrence of a repeatable key, in order.
    pub fn multi(&mut self, key: &str) -> Vec<(&'a str, usize)> {
        let mut out = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.key == key {
                self.used[i] = true;
                out.push((e.value.as_str(), e.line));
            }
        }
        out
    }

    /// Whitespace-separated f64 list under a single key.
    pub fn optional_f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ScenarioError> {
        let line = self.line_of(key);
        match self.optional_str(key)? {
            None => Ok(None),
            Some(v) => {
                let vals: Result<Vec<f64>, _> =
                    v.split_whitespace().map(|t| t.parse::<f64>()).collect();
                vals.map(Some).map_err(|_| {
                    self.err(line, format!("cannot parse `{v}` as a list of numbers"))
                })
            }
        }
    }

    pub fn optional_bool(&mut self, key: &str, default: bool) -> Result<bool, ScenarioError> {
        let line = self.line_of(key);
        match self.optional_str(key)? {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => Err(self.err(line, format!("key `{key}` must be true/false, got `{other}`"))),
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries
            .iter()
            .find(|e| e.key == key)
            .map_or(0, |e| e.line)
    }

    /// Error on any key nothing consumed (catches typos).
    pub fn finish(self) -> Result<(), ScenarioError> {
        for (i, e) in self.entries.iter().enumerate() {
            if !self.used[i] {
                return Err(ScenarioError::Validation {
                    section: self.section.to_string(),
                    line: e.line,
                    message: format!("unknown key `{}`", e.key),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_globals_sections_and_comments() {
        let cfg = parse_raw(
            "# header comment\nname = demo\n\n[network]\nn = 4 # trailing\nedge = 0 1 1.0\nedge = 1 2 2.0\n[protocol]\ngain = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.globals.len(), 1);
        assert_eq!(cfg.globals[0].key, "name");
        assert_eq!(cfg.sections.len(), 2);
        assert_eq!(cfg.sections[0].entries.len(), 3);
        assert_eq!(cfg.sections[0].entries[0].value, "4");
    }

    #[test]
    fn reports_line_numbers_for_bad_lines() {
        let err = parse_raw("name = ok\nnot a kv line\n").unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reader_flags_unknown_and_duplicate_keys() {
        let cfg = parse_raw("[s]\na = 1\nb = 2\n").unwrap();
        let mut r = SectionReader::new("s", &cfg.sections[0].entries);
        assert_eq!(r.require_parse::<u32>("a").unwrap(), 1);
        assert!(r.finish().is_err()); // `b` unused

        let cfg = parse_raw("[s]\na = 1\na = 2\n").unwrap();
        let mut r = SectionReader::new("s", &cfg.sections[0].entries);
        assert!(r.optional_str("a").is_err());
    }
}
