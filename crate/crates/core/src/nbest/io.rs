//! Line-delimited JSON n-best files and whitespace-tokenized corpus files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::{Hypothesis, NBestGroup};
use crate::error::{Error, Result};

const GROUP_FIELDS: [&str; 3] = ["id", "reference", "hypotheses"];
const HYP_FIELDS: [&str; 2] = ["tokens", "task_score"];

pub fn write_nbest_to<W: Write>(groups: &[NBestGroup], mut out: W) -> Result<()> {
    for g in groups {
        if let Some(h) = g.hypotheses.iter().find(|h| !h.task_score.is_finite()) {
            return Err(Error::invalid(format!(
                "group `{}` has non-finite task score {}",
                g.id, h.task_score
            )));
        }
        let line = serde_json::to_string(g).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<n-best writer>", e))?;
    }
    out.flush().map_err(|e| Error::io("<n-best writer>", e))
}

pub fn write_nbest(groups: &[NBestGroup], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_nbest_to(groups, BufWriter::new(file)).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

struct LineCtx<'a> {
    source: &'a str,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.source.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn warn_unknown(&self, obj: &Map<String, Value>, known: &[&str], what: &str) {
        for key in obj.keys().filter(|k| !known.contains(&k.as_str())) {
            log::warn!(
                "{}:{}: ignoring unknown {what} field `{key}`",
                self.source,
                self.line
            );
        }
    }

    fn tokens(&self, value: Option<&Value>, field: &str) -> Result<Vec<String>> {
        let arr = value
            .ok_or_else(|| self.err(format!("missing field `{field}`")))?
            .as_array()
            .ok_or_else(|| self.err(format!("field `{field}` must be an array of strings")))?;
        if arr.is_empty() {
            return Err(self.err(format!("field `{field}` must not be empty")));
        }
        arr.iter()
            .map(|t| {
                t.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| self.err(format!("field `{field}` must contain only strings")))
            })
            .collect()
    }

    fn group(&self, value: Value) -> Result<NBestGroup> {
        let obj = value
            .as_object()
            .ok_or_else(|| self.err("record must be a JSON object"))?;
        self.warn_unknown(obj, &GROUP_FIELDS, "record");
        let id = obj
            .get("id")
            .ok_or_else(|| self.err("missing field `id`"))?
            .as_str()
            .ok_or_else(|| self.err("field `id` must be a string"))?
            .to_string();
        let reference = self.tokens(obj.get("reference"), "reference")?;
        let hyps = obj
            .get("hypotheses")
            .ok_or_else(|| self.err("missing field `hypotheses`"))?
            .as_array()
            .ok_or_else(|| self.err("field `hypotheses` must be an array"))?;
        if hyps.is_empty() {
            return Err(self.err("field `hypotheses` must not be empty"));
        }
        let hypotheses = hyps
            .iter()
            .enumerate()
            .map(|(j, h)| {
                let field = format!("hypotheses[{j}]");
                let h = h
                    .as_object()
                    .ok_or_else(|| self.err(format!("field `{field}` must be an object")))?;
                self.warn_unknown(h, &HYP_FIELDS, "hypothesis");
                let tokens = self.tokens(h.get("tokens"), &format!("{field}.tokens"))?;
                let task_score = h
                    .get("task_score")
                    .ok_or_else(|| self.err(format!("missing field `{field}.task_score`")))?
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        self.err(format!(
                            "field `{field}.task_score` must be a finite number"
                        ))
                    })?;
                Ok(Hypothesis { tokens, task_score })
            })
            .collect::<Result<_>>()?;
        Ok(NBestGroup {
            id,
            reference,
            hypotheses,
        })
    }
}

/// Parses n-best records; `source` names the input in error messages. Blank
/// lines are skipped.
pub fn read_nbest_from<R: BufRead>(reader: R, source: &str) -> Result<Vec<NBestGroup>> {
    let mut groups = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let ctx = LineCtx {
            source,
            line: i + 1,
        };
        let line = line.map_err(|e| ctx.err(format!("unreadable line: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| ctx.err(format!("invalid JSON: {e}")))?;
        groups.push(ctx.group(value)?);
    }
    Ok(groups)
}

pub fn read_nbest(path: impl AsRef<Path>) -> Result<Vec<NBestGroup>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_nbest_from(BufReader::new(file), &path.display().to_string())
}

/// One whitespace-tokenized sentence per line; blank lines are skipped.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !tokens.is_empty() {
            corpus.push(tokens);
        }
    }
    Ok(corpus)
}

pub fn write_corpus<S: AsRef<str>>(corpus: &[Vec<S>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for sentence in corpus {
        let line: Vec<&str> = sentence.iter().map(AsRef::as_ref).collect();
        writeln!(out, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
