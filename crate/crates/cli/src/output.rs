//! CSV tables with a `# key=value` metadata block.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Shortest decimal that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, columns: &[&str]) -> Self {
        Table { file: file.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width for {}", self.file);
        self.rows.push(row);
    }

    pub fn render(&self, meta: &[(String, String)]) -> String {
        let mut s = String::new();
        for (k, v) in meta {
            writeln!(s, "# {k}={v}").unwrap();
        }
        writeln!(s, "{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            writeln!(s, "{}", r.join(",")).unwrap();
        }
        s
    }

    /// Index of a column by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Everything one command writes.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub meta: Vec<(String, String)>,
    pub tables: Vec<Table>,
    /// Non-CSV artifacts, `(file name, contents)`.
    pub extras: Vec<(String, String)>,
    /// Per-item failures that did not stop the command.
    pub failures: Vec<String>,
}

impl Bundle {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        let mut meta = vec![
            ("tool".to_string(), format!("ptm-tomolab {}", env!("CARGO_PKG_VERSION"))),
            ("command".to_string(), command.to_string()),
        ];
        meta.extend(cfg.canonical().into_iter().map(|(k, v)| (k.to_string(), v)));
        meta.push(("config_hash".into(), cfg.hash()));
        Bundle { meta, tables: Vec::new(), extras: Vec::new(), failures: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: String) -> Self {
        let at = self.meta.len() - 1;
        self.meta.insert(at, (key.into(), value));
        self
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }

    /// `(file name, bytes)` for every artifact, in write order.
    pub fn rendered(&self) -> Vec<(String, String)> {
        let mut out: Vec<_> = self.tables.iter().map(|t| (t.file.clone(), t.render(&self.meta))).collect();
        out.extend(self.extras.iter().cloned());
        out
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut paths = Vec::new();
        for (name, body) in self.rendered() {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// A parsed table: metadata pairs, header, rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedCsv {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ParsedCsv {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn parse_csv(text: &str) -> Result<ParsedCsv> {
    let mut meta = Vec::new();
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(m) = line.strip_prefix('#') {
            if let Some((k, v)) = m.trim().split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        match &columns {
            None => columns = Some(fields),
            Some(c) if c.len() != fields.len() => {
                return Err(CliError::Failed(format!("line {}: {} fields, header has {}", lineno + 1, fields.len(), c.len())));
            }
            Some(_) => rows.push(fields),
        }
    }
    let columns = columns.ok_or_else(|| CliError::Failed("no header row".into()))?;
    Ok(ParsedCsv { meta, columns, rows })
}
