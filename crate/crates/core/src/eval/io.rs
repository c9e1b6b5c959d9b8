//! Text formats for embeddings and verification pairs.
//!
//! Embeddings: a header `hsemb v1 <n> <d>` followed by `n` lines
//! `<id> <f64 × d>`. Pairs: one `<id_a> <id_b> <0|1>` per line. Blank lines
//! and lines starting with `#` are skipped in both.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::roc::PairProtocol;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Identity label of each entry: the id up to its first `#`.
    pub fn labels(&self) -> Vec<&str> {
        self.ids
            .iter()
            .map(|id| id.split('#').next().unwrap_or(id))
            .collect()
    }

    fn index(&self) -> Result<HashMap<&str, usize>> {
        let mut map = HashMap::with_capacity(self.ids.len());
        for (i, id) in self.ids.iter().enumerate() {
            if map.insert(id.as_str(), i).is_some() {
                return Err(Error::Format(format!("duplicate embedding id {id:?}")));
            }
        }
        Ok(map)
    }
}

fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| {
            r.as_ref().map_or(true, |(_, l)| {
                !l.trim().is_empty() && !l.trim_start().starts_with('#')
            })
        })
}

fn parse_count(tok: Option<&str>, what: &str) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format(format!("header: bad {what}")))
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingSet> {
    let mut lines = content_lines(reader);
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("missing hsemb header".into()))??;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("hsemb") || tok.next() != Some("v1") {
        return Err(Error::Format(format!(
            "expected 'hsemb v1 <n> <d>', got {header:?}"
        )));
    }
    let n = parse_count(tok.next(), "n")?;
    let d = parse_count(tok.next(), "d")?;
    let mut set = EmbeddingSet::default();
    for item in lines {
        let (lineno, line) = item?;
        let mut tok = line.split_whitespace();
        let id = tok.next().unwrap_or_default().to_string();
        let v = tok
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Format(format!("line {lineno}: {e}")))?;
        if v.len() != d {
            return Err(Error::Format(format!(
                "line {lineno}: expected {d} values, got {}",
                v.len()
            )));
        }
        set.ids.push(id);
        set.vectors.push(v);
    }
    if set.len() != n {
        return Err(Error::Format(format!(
            "header declares {n} embeddings, found {}",
            set.len()
        )));
    }
    set.index()?;
    Ok(set)
}

pub fn write_embeddings<W: Write>(mut w: W, set: &EmbeddingSet) -> Result<()> {
    writeln!(w, "hsemb v1 {} {}", set.len(), set.dim())?;
    for (id, v) in set.ids.iter().zip(&set.vectors) {
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::Format(format!(
                "embedding id {id:?} must be non-empty without whitespace"
            )));
        }
        write!(w, "{id}")?;
        for x in v {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads pairs and resolves their ids against `set`.
pub fn read_pairs<R: BufRead>(reader: R, set: &EmbeddingSet) -> Result<PairProtocol> {
    let index = set.index()?;
    let mut pairs = Vec::new();
    for item in content_lines(reader) {
        let (lineno, line) = item?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        let [a, b, flag] = tok[..] else {
            return Err(Error::Format(format!(
                "line {lineno}: expected '<id_a> <id_b> <0|1>'"
            )));
        };
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Format(format!("line {lineno}: unknown id {id:?}")))
        };
        let same = match flag {
            "1" => true,
            "0" => false,
            _ => {
                return Err(Error::Format(format!(
                    "line {lineno}: label must be 0 or 1, got {flag:?}"
                )))
            }
        };
        pairs.push((lookup(a)?, lookup(b)?, same));
    }
    Ok(PairProtocol::new(pairs))
}
