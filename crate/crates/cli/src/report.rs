//! Versioned JSON reports with deterministic formatting.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nlrepr::doc::write_process_csv;
use nlrepr::Tree;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Map, Value};

pub const SCHEMA: &str = "nlrepr/1";

/// Pretty-printer that writes every float with 17 significant digits.
struct SciFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SciFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes with sorted keys; non-finite floats become `null`.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value)?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

/// Report under construction for one command.
pub struct Report {
    command: String,
    results: Map<String, Value>,
    checks: Vec<Check>,
    files: Vec<String>,
    out: PathBuf,
}

impl Report {
    pub fn new(command: &str, out: &Path) -> Result<Report> {
        fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
        Ok(Report {
            command: command.to_string(),
            results: Map::new(),
            checks: Vec::new(),
            files: Vec::new(),
            out: out.to_path_buf(),
        })
    }

    pub fn set<T: Serialize>(&mut self, key: &str, value: T) -> Result<()> {
        self.results.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Records `value <= tolerance` under `name`.
    pub fn check_le(&mut self, name: &str, value: f64, tolerance: f64) {
        self.checks.push(Check {
            name: name.to_string(),
            passed: value <= tolerance,
            value,
            tolerance,
        });
    }

    /// Records `value >= bound` under `name`.
    pub fn check_ge(&mut self, name: &str, value: f64, bound: f64) {
        self.checks.push(Check {
            name: name.to_string(),
            passed: value >= bound,
            value,
            tolerance: bound,
        });
    }

    pub fn check_true(&mut self, name: &str, ok: bool) {
        self.checks.push(Check {
            name: name.to_string(),
            passed: ok,
            value: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
        });
    }

    pub fn write_process(&mut self, name: &str, tree: &Tree, values: &[f64]) -> Result<()> {
        let path = self.out.join(name);
        let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        write_process_csv(tree, values, BufWriter::new(file))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    /// Writes `report.json` and returns whether every check passed.
    pub fn finish(mut self) -> Result<bool> {
        let failed: Vec<String> = self.failed().into_iter().map(str::to_string).collect();
        let passed = failed.is_empty();
        self.files.push("report.json".to_string());
        self.files.sort();
        let doc = json!({
            "schema": SCHEMA,
            "command": self.command,
            "results": Value::Object(std::mem::take(&mut self.results)),
            "checks": self.checks,
            "failed": failed,
            "passed": passed,
            "files": self.files,
        });
        let path = self.out.join("report.json");
        fs::write(&path, to_json_string(&doc)?).with_context(|| format!("cannot write {}", path.display()))?;
        for name in &failed {
            eprintln!("check failed: {name}");
        }
        Ok(passed)
    }
}
