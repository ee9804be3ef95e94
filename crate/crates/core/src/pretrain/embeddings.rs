use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::encoder::Encoder;
use crate::numcore::{container, DiffArray};
use crate::trajdata::{Normalizer, RecordFeatures, Trajectory};
use crate::{Error, Result};

/// Trajectory ids with their embedding rows, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Frozen-parameter embeddings of `trajs`.
pub fn embed_dataset(encoder: &Encoder, normalizer: &Normalizer, trajs: &[&Trajectory]) -> Result<EmbeddingTable> {
    let features: Vec<Vec<RecordFeatures>> = trajs.iter().map(|t| normalizer.features(t)).collect();
    let refs: Vec<&[RecordFeatures]> = features.iter().map(Vec::as_slice).collect();
    let rows = if refs.is_empty() { Vec::new() } else { encoder.embed(&refs)? };
    Ok(EmbeddingTable {
        ids: trajs.iter().map(|t| t.id().to_owned()).collect(),
        dim: encoder.output_dim(),
        rows,
    })
}

impl EmbeddingTable {
    /// `traj_id,e_0,…,e_{d−1}`, floats in shortest round-trip form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        let header: Vec<String> = std::iter::once("traj_id".to_owned())
            .chain((0..self.dim).map(|i| format!("e_{i}")))
            .collect();
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            write!(out, "{id}").map_err(io)?;
            for v in row {
                write!(out, ",{v:?}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// One container entry per trajectory: name = id, shape = [d].
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let arrays: Vec<DiffArray> = self
            .rows
            .iter()
            .map(|r| DiffArray::new(vec![self.dim], r.clone()))
            .collect::<Result<_>>()?;
        container::write_entries(path, self.ids.iter().map(String::as_str).zip(&arrays))
    }

    pub fn read_binary(path: &Path) -> Result<EmbeddingTable> {
        let entries = container::read_entries(path)?;
        let dim = entries.first().map_or(0, |(_, a)| a.len());
        if entries.iter().any(|(_, a)| a.shape() != [dim]) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "embedding rows differ in width".into(),
            });
        }
        let (ids, rows) = entries.into_iter().map(|(id, a)| (id, a.values().to_vec())).unzip();
        Ok(EmbeddingTable { ids, dim, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_and_csv_exports() {
        let t = EmbeddingTable {
            ids: vec!["a".into(), "b".into()],
            dim: 2,
            rows: vec![vec![0.1, -2.0], vec![1e-300, 3.5]],
        };
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("e.bin");
        t.write_binary(&bin).unwrap();
        assert_eq!(EmbeddingTable::read_binary(&bin).unwrap(), t);
        let csv = dir.path().join("e.csv");
        t.write_csv(&csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text, "traj_id,e_0,e_1\na,0.1,-2.0\nb,1e-300,3.5\n");
    }
}
