//! Minimal `key = value` files with `[section]` headers.
//!
//! Keys before the first header live in the section named `""`. `#` and `;`
//! start comments. Every key must be read by the consumer, so typos surface
//! as errors instead of silently falling back to defaults.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
    order: Vec<String>,
    used: RefCell<BTreeSet<(String, String)>>,
}

impl Ini {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut ini = Ini::default();
        let mut current = String::new();
        ini.order.push(current.clone());
        ini.sections.insert(current.clone(), BTreeMap::new());
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        CliError::config(format!(
                            "line {}: unterminated section header",
                            lineno + 1
                        ))
                    })?
                    .trim();
                if name.is_empty() || ini.sections.contains_key(name) {
                    return Err(CliError::config(format!(
                        "line {}: empty or repeated section [{name}]",
                        lineno + 1
                    )));
                }
                current = name.to_string();
                ini.order.push(current.clone());
                ini.sections.insert(current.clone(), BTreeMap::new());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(CliError::config(format!("line {}: empty key", lineno + 1)));
            }
            let section = ini.sections.get_mut(&current).expect("section registered");
            if section
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(CliError::config(format!(
                    "line {}: repeated key {key}",
                    lineno + 1
                )));
            }
        }
        Ok(ini)
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    pub fn keys(&self, section: &str) -> Vec<String> {
        self.sections
            .get(section)
            .map(|s| s.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Section names starting with `prefix`, in file order.
    pub fn sections_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.order
            .iter()
            .filter(|s| s.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        let v = self.sections.get(section)?.get(key)?;
        self.used
            .borrow_mut()
            .insert((section.to_string(), key.to_string()));
        Some(v)
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::config(format!("[{section}] {key} = {v}: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, section: &str, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(section, key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::config(format!("[{section}] {key}: {s}: {e}")))
            })
            .collect::<CliResult<Vec<T>>>()
            .map(Some)
    }

    /// Fails on any key that was never read.
    pub fn ensure_consumed(&self) -> CliResult<()> {
        let used = self.used.borrow();
        for (name, keys) in &self.sections {
            for key in keys.keys() {
                if !used.contains(&(name.clone(), key.clone())) {
                    let shown = if name.is_empty() {
                        "top level".to_string()
                    } else {
                        format!("[{name}]")
                    };
                    return Err(CliError::config(format!("unknown key {key} in {shown}")));
                }
            }
        }
        Ok(())
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(i) => &line[..i],
        None => line,
    }
}
