//! Whitespace-separated text embeddings: one `token v1 ... vd` line per row,
//! optionally preceded by an `n d` header line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextFormat {
    /// Header present iff the first line is exactly two positive integers.
    #[default]
    Auto,
    /// No header.
    Glove,
    /// Mandatory `n d` header.
    Fasttext,
}

impl FromStr for TextFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TextFormat::Auto),
            "glove" => Ok(TextFormat::Glove),
            "fasttext" => Ok(TextFormat::Fasttext),
            _ => Err(Error::InvalidArgument(format!(
                "unknown text format {s:?}; expected auto, glove or fasttext"
            ))),
        }
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split_ascii_whitespace();
    let n = parts.next()?.parse::<usize>().ok()?;
    let d = parts.next()?.parse::<usize>().ok()?;
    (parts.next().is_none() && n > 0 && d > 0).then_some((n, d))
}

/// Reads a GloVe- or fastText-style file.
pub fn read_text_embedding(path: &Path, format: TextFormat) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut header = None;
    let mut dim = None;
    let mut tokens = Vec::new();
    let mut data = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => fail(lineno, "line is not valid UTF-8".into()),
            _ => Error::io(path, e),
        })?;
        if idx == 0 {
            match format {
                TextFormat::Auto => header = parse_header(&line),
                TextFormat::Fasttext => {
                    header = Some(parse_header(&line).ok_or_else(|| {
                        fail(
                            lineno,
                            "expected a header of two positive integers \"n d\"".into(),
                        )
                    })?);
                }
                TextFormat::Glove => {}
            }
            if let Some((_, d)) = header {
                dim = Some(d);
                continue;
            }
        }
        let mut parts = line.split_ascii_whitespace();
        let Some(token) = parts.next() else {
            return Err(fail(lineno, "empty line".into()));
        };
        let start = data.len();
        for (col, field) in parts.enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                fail(
                    lineno,
                    format!("field {} ({field:?}) is not a number", col + 2),
                )
            })?;
            if !v.is_finite() {
                return Err(fail(
                    lineno,
                    format!("field {} ({field:?}) is not finite", col + 2),
                ));
            }
            data.push(v);
        }
        let got = data.len() - start;
        match dim {
            Some(d) if d != got => {
                return Err(fail(lineno, format!("row has {got} values, expected {d}")));
            }
            None if got == 0 => return Err(fail(lineno, "row has no values".into())),
            None => dim = Some(got),
            _ => {}
        }
        tokens.push(token.to_string());
    }
    let Some(d) = dim else {
        return Err(fail(1, "file contains no embedding rows".into()));
    };
    if let Some((n, _)) = header {
        if n != tokens.len() {
            return Err(fail(
                1,
                format!("header declares {n} rows but the file has {}", tokens.len()),
            ));
        }
    }
    let first_line = |i: usize| i + 1 + header.is_some() as usize;
    let vocab = Vocabulary::new(tokens.clone()).map_err(|_| {
        let mut seen = std::collections::HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if let Some(prev) = seen.insert(t, i) {
                return fail(
                    first_line(i),
                    format!(
                        "duplicate token {t:?} (first seen on line {})",
                        first_line(prev)
                    ),
                );
            }
        }
        fail(1, "invalid vocabulary".into())
    })?;
    let matrix = DenseMatrix::new(tokens.len(), d, data)?;
    EmbeddingMatrix::new(matrix, Some(vocab))
}

// Shortest representation that parses back to the same value.
fn format_value(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Writes headerless `token v1 ... vd` lines. Rows without a vocabulary are
/// named by their index.
pub fn write_text_embedding(
    path: &Path,
    matrix: &DenseMatrix,
    vocab: Option<&Vocabulary>,
) -> Result<()> {
    if let Some(v) = vocab {
        if v.len() != matrix.rows() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary has {} tokens but the matrix has {} rows",
                v.len(),
                matrix.rows()
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for i in 0..matrix.rows() {
        line.clear();
        match vocab {
            Some(v) => line.push_str(v.get(i).expect("length checked")),
            None => line.push_str(&i.to_string()),
        }
        for &x in matrix.row(i) {
            line.push(' ');
            line.push_str(&format_value(x));
        }
        line.push('\n');
        w.write_all(line.as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn headerless_and_headered_agree() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(&dir, "a.txt", "the 0.1 0.2 0.3\nof -1 2.5 3e-2\n");
        let b = write(&dir, "b.txt", "2 3\nthe 0.1 0.2 0.3\nof -1 2.5 3e-2\n");
        let ea = read_text_embedding(&a, TextFormat::Auto).unwrap();
        let eb = read_text_embedding(&b, TextFormat::Auto).unwrap();
        assert_eq!(ea.matrix().shape(), (2, 3));
        assert_eq!(ea, eb);
        assert_eq!(ea.vocab().unwrap().get(1), Some("of"));
        assert!(read_text_embedding(&a, TextFormat::Fasttext).is_err());
        assert!(read_text_embedding(&b, TextFormat::Glove).is_err());
    }

    #[test]
    fn errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let short = write(&dir, "s.txt", "a 1 2 3\nb 1 2\n");
        let err = read_text_embedding(&short, TextFormat::Auto).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let nan = write(&dir, "n.txt", "a 1 x 3\n");
        assert!(matches!(
            read_text_embedding(&nan, TextFormat::Auto),
            Err(Error::Parse { line: 1, .. })
        ));
        let dup = write(&dir, "d.txt", "3 1\na 1\nb 2\na 3\n");
        // "3 1" is a header, so the duplicate sits on line 4
        let err = read_text_embedding(&dup, TextFormat::Auto).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        let count = write(&dir, "c.txt", "3 1\na 1\nb 2\n");
        assert!(read_text_embedding(&count, TextFormat::Auto).is_err());
    }

    #[test]
    fn two_dim_integer_token_needs_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.txt", "7 1.5\n8 2.5\n");
        // "7 1.5" is not two integers, so it is data
        assert_eq!(read_text_embedding(&p, TextFormat::Auto).unwrap().n(), 2);
        let p = write(&dir, "u.txt", "7 1\n8 2\n");
        assert!(read_text_embedding(&p, TextFormat::Auto).is_err());
        assert_eq!(read_text_embedding(&p, TextFormat::Glove).unwrap().n(), 2);
    }

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let vals = vec![
            vec![0.1, -2.0 / 3.0, 1e300],
            vec![-5e-324, f64::MIN_POSITIVE / 3.0, -0.0],
            vec![123456789.123456789, 1e-5, 9.999999999999999e15],
        ];
        let m = DenseMatrix::from_rows(&vals).unwrap();
        let v = Vocabulary::new(vec!["x".into(), "ÿ".into(), "z,z".into()]).unwrap();
        let p = dir.path().join("rt.txt");
        write_text_embedding(&p, &m, Some(&v)).unwrap();
        let back = read_text_embedding(&p, TextFormat::Auto).unwrap();
        assert_eq!(
            back.matrix()
                .data()
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>(),
            m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.vocab(), Some(&v));

        let headered = write(&dir, "h.txt", "2 2\na 1.25 -3\nb 0.5 7\n");
        let e = read_text_embedding(&headered, TextFormat::Auto).unwrap();
        let out = dir.path().join("h2.txt");
        write_text_embedding(&out, e.matrix(), e.vocab()).unwrap();
        assert_eq!(
            std::fs::read_to_string(&out).unwrap(),
            "a 1.25 -3\nb 0.5 7\n"
        );
    }
}
