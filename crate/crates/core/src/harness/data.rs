use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::trees::{parse_bracketed_with, TreeLayout};

/// One record: a sentence (or pair) with its label or target sequence, and
/// optional parse trees.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Example {
    pub text: Vec<String>,
    pub text2: Option<Vec<String>>,
    pub label: Option<usize>,
    pub target: Option<Vec<String>>,
    pub tree: Option<TreeLayout>,
    pub tree2: Option<TreeLayout>,
}

impl Example {
    pub fn classify(text: Vec<String>, label: usize) -> Self {
        Example {
            text,
            label: Some(label),
            ..Default::default()
        }
    }

    pub fn seq2seq(text: Vec<String>, target: Vec<String>) -> Self {
        Example {
            text,
            target: Some(target),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn header(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Classify => &["text", "label"],
        TaskKind::PairClassify => &["text1", "text2", "label"],
        TaskKind::Seq2Seq => &["src", "tgt"],
    }
}

fn data_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn tsv_reader(file: File) -> csv::Reader<File> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_reader(file)
}

/// Reads a tab-separated file whose header names the task's columns (in any
/// order; extra columns are ignored). Labels are class indices.
pub fn read_examples(path: &Path, task: TaskKind) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = tsv_reader(file);
    let head = rdr.headers().map_err(|e| data_err(path, 1, e.to_string()))?.clone();
    let mut cols = Vec::new();
    for want in header(task) {
        let i = head
            .iter()
            .position(|h| h.trim() == *want)
            .ok_or_else(|| data_err(path, 1, format!("missing column `{want}` for a {task} dataset")))?;
        cols.push(i);
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            data_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| rec.get(cols[k]).unwrap_or("");
        let sentence = |k: usize| -> Result<Vec<String>> {
            let t = tokenize(field(k));
            if t.is_empty() {
                return Err(data_err(path, line, format!("empty `{}` field", header(task)[k])));
            }
            Ok(t)
        };
        let label = |k: usize| -> Result<usize> {
            field(k)
                .trim()
                .parse()
                .map_err(|_| data_err(path, line, format!("label `{}` is not a class index", field(k))))
        };
        out.push(match task {
            TaskKind::Classify => Example::classify(sentence(0)?, label(1)?),
            TaskKind::PairClassify => Example {
                text: sentence(0)?,
                text2: Some(sentence(1)?),
                label: Some(label(2)?),
                ..Default::default()
            },
            TaskKind::Seq2Seq => Example::seq2seq(sentence(0)?, sentence(1)?),
        });
    }
    Ok(out)
}

pub fn write_examples(path: &Path, task: TaskKind, examples: &[Example]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let join = |t: &[String]| t.join(" ");
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header(task).join("\t")).map_err(io)?;
    for (i, ex) in examples.iter().enumerate() {
        let missing = |what: &str| Error::invalid(format!("example {i} lacks a {what} for a {task} dataset"));
        let line = match task {
            TaskKind::Classify => format!("{}\t{}", join(&ex.text), ex.label.ok_or_else(|| missing("label"))?),
            TaskKind::PairClassify => format!(
                "{}\t{}\t{}",
                join(&ex.text),
                join(ex.text2.as_deref().ok_or_else(|| missing("second sentence"))?),
                ex.label.ok_or_else(|| missing("label"))?
            ),
            TaskKind::Seq2Seq => format!(
                "{}\t{}",
                join(&ex.text),
                join(ex.target.as_deref().ok_or_else(|| missing("target"))?)
            ),
        };
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Attaches trees from a parallel file: one bracketed tree per example line,
/// two tab-separated trees for pairs. Unary and n-ary groups are binarized;
/// leaf counts must match the sentences.
pub fn read_trees(path: &Path, examples: &mut [Example]) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, l) in BufReader::new(file).lines().enumerate() {
        let l = l.map_err(|e| Error::io(path, e))?;
        if !l.trim().is_empty() {
            lines.push((i + 1, l));
        }
    }
    if lines.len() != examples.len() {
        return Err(data_err(
            path,
            lines.len(),
            format!("{} trees for {} examples", lines.len(), examples.len()),
        ));
    }
    for ((line, text), ex) in lines.iter().zip(examples.iter_mut()) {
        let mut parts = text.split('\t');
        let parse = |t: Option<&str>, want: usize| -> Result<TreeLayout> {
            let t = t.ok_or_else(|| data_err(path, *line, "missing tree"))?;
            let (_, layout) = parse_bracketed_with(t, false).map_err(|e| data_err(path, *line, e.to_string()))?;
            if layout.n_leaves() != want {
                return Err(data_err(
                    path,
                    *line,
                    format!("tree has {} leaves but the sentence has {want} tokens", layout.n_leaves()),
                ));
            }
            Ok(layout)
        };
        ex.tree = Some(parse(parts.next(), ex.text.len())?);
        if let Some(t2) = &ex.text2 {
            ex.tree2 = Some(parse(parts.next(), t2.len())?);
        }
    }
    Ok(())
}

pub fn write_trees(path: &Path, examples: &[Example]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for (i, ex) in examples.iter().enumerate() {
        let render = |tree: &Option<TreeLayout>, text: &[String]| -> Result<String> {
            tree.as_ref()
                .ok_or_else(|| Error::invalid(format!("example {i} has no tree")))?
                .render(text)
        };
        let mut line = render(&ex.tree, &ex.text)?;
        if let Some(t2) = &ex.text2 {
            line.push('\t');
            line.push_str(&render(&ex.tree2, t2)?);
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}
