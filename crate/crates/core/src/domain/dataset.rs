use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rng::SeedTree;
use super::types::{Control, NoiseParam, PolicyParams, State};
use crate::error::{Error, Result};

/// One visited state with its noiseless supervisor label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub iteration: usize,
    pub trajectory_id: usize,
    pub t: usize,
    pub state: State,
    /// `pi*(x_t)` without noise; this is what learners regress on.
    pub label: Control,
    /// The control actually applied during collection.
    pub executed: Control,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_id: String,
    pub horizon: usize,
    pub seed: u64,
    pub noise_history: Vec<NoiseParam>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<Record>,
}

#[derive(Serialize, Deserialize)]
struct Header<T> {
    header: T,
}

#[derive(Serialize, Deserialize)]
struct PolicyHeader {
    kind: String,
    env_id: String,
}

impl Dataset {
    pub fn new(meta: DatasetMeta) -> Self {
        Dataset {
            meta,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends another dataset's records and noise history.
    pub fn extend(&mut self, other: Dataset) {
        self.records.extend(other.records);
        self.meta.noise_history.extend(other.meta.noise_history);
    }

    /// Number of distinct `(iteration, trajectory_id)` pairs.
    pub fn trajectory_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| (r.iteration, r.trajectory_id))
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Keeps `count` records per trajectory, drawn without replacement and
    /// kept in time order. Trajectories shorter than `count` are kept whole.
    pub fn subsample_per_trajectory(&self, count: usize, seeds: SeedTree) -> Dataset {
        let mut out = Dataset::new(self.meta.clone());
        let mut start = 0;
        while start < self.records.len() {
            let key = (
                self.records[start].iteration,
                self.records[start].trajectory_id,
            );
            let end = start
                + self.records[start..]
                    .iter()
                    .take_while(|r| (r.iteration, r.trajectory_id) == key)
                    .count();
            let group = &self.records[start..end];
            if group.len() <= count {
                out.records.extend_from_slice(group);
            } else {
                let mut rng = seeds.child(key.0 as u64).child(key.1 as u64).rng();
                let mut picked = rand::seq::index::sample(&mut rng, group.len(), count).into_vec();
                picked.sort_unstable();
                out.records
                    .extend(picked.into_iter().map(|i| group[i].clone()));
            }
            start = end;
        }
        out
    }

    /// Header line with the metadata, then one JSON object per record.
    /// Refuses to overwrite an existing file.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = create_new(path)?;
        let mut emit = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
        emit(to_json(&Header { header: &self.meta })?)?;
        for r in &self.records {
            emit(to_json(r)?)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or(Error::Empty("dataset file has no header"))?
            .map_err(|e| Error::io(path, e))?;
        let header: Header<DatasetMeta> =
            serde_json::from_str(&first).map_err(|e| Error::Parse(format!("header: {e}")))?;
        let mut ds = Dataset::new(header.header);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("record on line {}: {e}", i + 2)))?;
            ds.records.push(rec);
        }
        Ok(ds)
    }
}

/// Policies use the same line-delimited layout as datasets.
pub fn write_policy_jsonl(path: &Path, env_id: &str, theta: &PolicyParams) -> Result<()> {
    let mut w = create_new(path)?;
    let header = Header {
        header: PolicyHeader {
            kind: "policy".into(),
            env_id: env_id.into(),
        },
    };
    writeln!(w, "{}", to_json(&header)?).map_err(|e| Error::io(path, e))?;
    writeln!(w, "{}", to_json(theta)?).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_policy_jsonl(path: &Path) -> Result<PolicyParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Header<PolicyHeader> = serde_json::from_str(
        lines
            .next()
            .ok_or(Error::Empty("policy file has no header"))?,
    )
    .map_err(|e| Error::Parse(format!("policy header: {e}")))?;
    if header.header.kind != "policy" {
        return Err(Error::Parse(format!(
            "expected a policy file, found '{}'",
            header.header.kind
        )));
    }
    serde_json::from_str(
        lines
            .next()
            .ok_or(Error::Empty("policy file has no parameters"))?,
    )
    .map_err(|e| Error::Parse(format!("policy parameters: {e}")))
}

pub(crate) fn create_new(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sample() -> Dataset {
        let mut ds = Dataset::new(DatasetMeta {
            env_id: "test".into(),
            horizon: 3,
            seed: 7,
            noise_history: vec![NoiseParam::Gaussian {
                sigma: DMatrix::identity(1, 1),
            }],
        });
        for traj in 0..2 {
            for t in 0..3 {
                ds.records.push(Record {
                    iteration: 0,
                    trajectory_id: traj,
                    t,
                    state: State::scalar(t as f64),
                    label: Control::scalar(-(t as f64)),
                    executed: Control::scalar(0.5),
                });
            }
        }
        ds
    }

    #[test]
    fn jsonl_round_trip_and_no_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = sample();
        ds.write_jsonl(&path).unwrap();
        assert_eq!(Dataset::read_jsonl(&path).unwrap(), ds);
        assert!(ds.write_jsonl(&path).is_err());
    }

    #[test]
    fn subsample_keeps_order_and_count() {
        let ds = sample();
        let sub = ds.subsample_per_trajectory(2, SeedTree::new(1));
        assert_eq!(sub.len(), 4);
        assert_eq!(sub.trajectory_count(), 2);
        for w in sub.records.windows(2) {
            if w[0].trajectory_id == w[1].trajectory_id {
                assert!(w[0].t < w[1].t);
            }
        }
        assert_eq!(sub, ds.subsample_per_trajectory(2, SeedTree::new(1)));
        assert_eq!(ds.subsample_per_trajectory(5, SeedTree::new(1)), ds);
    }

    #[test]
    fn policy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let theta = PolicyParams::DiscreteTabular {
            actions: vec![Some(1), None, Some(3)],
            default_action: 0,
        };
        write_policy_jsonl(&path, "grid", &theta).unwrap();
        assert_eq!(read_policy_jsonl(&path).unwrap(), theta);
    }
}
