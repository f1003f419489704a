//! Sentence sources for the commands that do not need gold tags.

use std::path::Path;

use lattice_ner::data::parse_columns;
use lattice_ner::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Column format when every non-blank line starts with a single-character token,
/// otherwise one sentence per non-blank line.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<char>>> {
    let text = read_text(path)?;
    let columns = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .all(|l| l.split(['\t', ' ']).next().is_some_and(|t| t.chars().count() == 1));
    if columns {
        return parse_columns(&text, path);
    }
    Ok(text
        .lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.chars().filter(|c| !c.is_whitespace()).collect())
        .collect())
}

/// A line of a column file: a character, or a sentence separator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Line {
    Char(char),
    Blank,
}

/// Lines of a column file in order, so output can mirror the input line for line.
pub fn read_lines(path: &Path) -> Result<Vec<Line>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            out.push(Line::Blank);
            continue;
        }
        let token = line.split(['\t', ' ']).next().unwrap_or("");
        let mut it = token.chars();
        match (it.next(), it.next()) {
            (Some(ch), None) => out.push(Line::Char(ch)),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected a single character, found '{token}'"),
                })
            }
        }
    }
    Ok(out)
}

/// Groups consecutive characters into sentences.
pub fn sentences_of(lines: &[Line]) -> Vec<Vec<char>> {
    lines
        .split(|l| *l == Line::Blank)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.iter()
                .map(|l| match l {
                    Line::Char(c) => *c,
                    Line::Blank => unreachable!("split on blanks"),
                })
                .collect()
        })
        .collect()
}

pub fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| Error::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}
