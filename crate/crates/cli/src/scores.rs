//! Score tables as CSV: `sample_id,score_0,…,score_{C-1}`.

use std::fmt::Write as _;
use std::path::Path;

use sgcn_core::Tensor;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub ids: Vec<usize>,
    pub scores: Tensor,
}

impl ScoreTable {
    pub fn num_classes(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn to_csv(&self) -> String {
        let c = self.num_classes();
        let mut out = String::from("sample_id");
        for k in 0..c {
            let _ = write!(out, ",score_{k}");
        }
        out.push('\n');
        for (id, row) in self.ids.iter().zip(self.scores.data().chunks(c)) {
            let _ = write!(out, "{id}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| CliError::Data(format!("{origin}: empty score file")))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"sample_id") || cols.len() < 2 {
            return Err(CliError::Data(format!("{origin}: header must start with sample_id and list scores")));
        }
        let c = cols.len() - 1;
        let (mut ids, mut data) = (Vec::new(), Vec::new());
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != c + 1 {
                return Err(CliError::Data(format!(
                    "{origin} line {}: {} fields, expected {}",
                    n + 1,
                    fields.len(),
                    c + 1
                )));
            }
            let bad = |f: &str| CliError::Data(format!("{origin} line {}: cannot parse {f:?}", n + 1));
            ids.push(fields[0].parse().map_err(|_| bad(fields[0]))?);
            for f in &fields[1..] {
                data.push(f.parse::<f64>().map_err(|_| bad(f))?);
            }
        }
        if ids.is_empty() {
            return Err(CliError::Data(format!("{origin}: no score rows")));
        }
        let scores = Tensor::new([ids.len(), c], data)?;
        Ok(ScoreTable { ids, scores })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let t = ScoreTable {
            ids: vec![0, 1],
            scores: Tensor::new([2, 3], vec![0.1, 0.2, 0.7, 1.0 / 3.0, 1e-17, 0.5]).unwrap(),
        };
        assert_eq!(ScoreTable::from_csv(&t.to_csv(), "t").unwrap(), t);
    }
}
