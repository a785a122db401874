use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    /// Ordinary (non-reserved) vocabulary entries found in the file.
    pub found: usize,
    pub total: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.found as f64 / self.total as f64
        }
    }
}

/// Overwrites the rows of `table` whose tokens appear in a text embedding
/// file (`token v1 … vd` per line); other rows keep their initial values.
/// Every line must carry exactly the table's width of values.
pub fn load_embeddings<T: Real>(path: &Path, vocab: &Vocab, table: &mut Tensor<T>) -> Result<Coverage> {
    if table.rank() != 2 || table.rows() != vocab.len() {
        return Err(Error::invalid(format!(
            "embedding table of shape {:?} does not fit a vocabulary of {}",
            table.shape(),
            vocab.len()
        )));
    }
    let dim = table.cols();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let data_err = |line: usize, message: String| Error::Data {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut seen = vec![false; vocab.len()];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(tok) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(data_err(i + 1, format!("expected {dim} values, found {}", values.len())));
        }
        let Some(id) = vocab.get(tok).filter(|&id| id >= crate::vocab::EOS + 1) else {
            continue;
        };
        let row = &mut table.data_mut()[id * dim..(id + 1) * dim];
        for (slot, v) in row.iter_mut().zip(&values) {
            let x: f64 = v
                .parse()
                .map_err(|_| data_err(i + 1, format!("`{v}` is not a number")))?;
            *slot = T::from_f64_lossy(x);
        }
        seen[id] = true;
    }
    let total = vocab.len() - (crate::vocab::EOS + 1);
    Ok(Coverage {
        found: seen.iter().filter(|&&s| s).count(),
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        std::fs::write(&p, content).unwrap();
        (dir, p)
    }

    #[test]
    fn full_and_empty_overlap() {
        let vocab = Vocab::from_tokens(["a", "b"]).unwrap();
        let (_d, p) = setup("a 1 2\nb 3 4\nzz 5 6\n");
        let mut t = Tensor::<f64>::full(&[6, 2], 9.0);
        let c = load_embeddings(&p, &vocab, &mut t).unwrap();
        assert_eq!(c.fraction(), 1.0);
        assert_eq!(t.row(4), &[1.0, 2.0]);
        assert_eq!(t.row(5), &[3.0, 4.0]);
        assert_eq!(t.row(0), &[9.0, 9.0]);

        let (_d, p) = setup("x 1 2\n");
        let mut t = Tensor::<f64>::full(&[6, 2], 9.0);
        let c = load_embeddings(&p, &vocab, &mut t).unwrap();
        assert_eq!((c.found, c.fraction()), (0, 0.0));
        assert!(t.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let vocab = Vocab::from_tokens(["a"]).unwrap();
        let mut t = Tensor::<f32>::zeros(&[5, 3]);
        let (_d, p) = setup("a 1 2 3\nb 1 2\n");
        match load_embeddings(&p, &vocab, &mut t) {
            Err(Error::Data { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let (_d, p) = setup("a 1 x 3\n");
        assert!(matches!(load_embeddings(&p, &vocab, &mut t), Err(Error::Data { line: 1, .. })));
    }
}
