use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations over a fixed node set, sampled at a constant interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalDataset {
    /// `[T, N, F]`
    pub observations: Array3<f64>,
    /// `[N, N]`, non-negative.
    pub adjacency: Array2<f64>,
    /// `[N, 2]`: latitude and longitude in degrees.
    pub node_coords: Array2<f64>,
    pub node_ids: Vec<i64>,
    /// Epoch seconds, strictly increasing with constant spacing.
    pub timestamps: Vec<i64>,
    pub interval_seconds: i64,
    pub feature_units: Vec<String>,
    pub projection_seed: u64,
    pub self_loops: bool,
}

/// `manifest.json` of a dataset bundle.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub n_nodes: usize,
    pub n_steps: usize,
    pub n_features: usize,
    pub interval_seconds: i64,
    pub feature_units: Vec<String>,
    pub projection_seed: u64,
    #[serde(default)]
    pub self_loops: bool,
}

impl SpatioTemporalDataset {
    pub fn n_steps(&self) -> usize {
        self.observations.dim().0
    }

    pub fn n_nodes(&self) -> usize {
        self.observations.dim().1
    }

    pub fn n_features(&self) -> usize {
        self.observations.dim().2
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            n_nodes: self.n_nodes(),
            n_steps: self.n_steps(),
            n_features: self.n_features(),
            interval_seconds: self.interval_seconds,
            feature_units: self.feature_units.clone(),
            projection_seed: self.projection_seed,
            self_loops: self.self_loops,
        }
    }

    /// Checks every structural invariant of the dataset.
    pub fn validate(&self) -> Result<()> {
        let (t, n, f) = self.observations.dim();
        if n < 2 {
            return Err(Error::Schema(format!("need at least 2 nodes, got {n}")));
        }
        if t < 2 {
            return Err(Error::Schema(format!("need at least 2 steps, got {t}")));
        }
        if f == 0 {
            return Err(Error::Schema("no features".into()));
        }
        if self.adjacency.dim() != (n, n) {
            return Err(Error::Schema(format!(
                "adjacency is {:?}, expected {n}x{n}",
                self.adjacency.dim()
            )));
        }
        if self.node_coords.dim() != (n, 2) {
            return Err(Error::Schema(format!(
                "node coordinates are {:?}, expected {n}x2",
                self.node_coords.dim()
            )));
        }
        if self.node_ids.len() != n {
            return Err(Error::Schema(format!("{} node ids for {n} nodes", self.node_ids.len())));
        }
        if self.timestamps.len() != t {
            return Err(Error::Schema(format!("{} timestamps for {t} steps", self.timestamps.len())));
        }
        if self.feature_units.len() != f {
            return Err(Error::Schema(format!("{} feature units for {f} features", self.feature_units.len())));
        }
        if self.interval_seconds <= 0 {
            return Err(Error::Schema("interval_seconds must be positive".into()));
        }
        for w in self.timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Schema(format!("timestamps not increasing: {} then {}", w[0], w[1])));
            }
            if w[1] - w[0] != self.interval_seconds {
                return Err(Error::Schema(format!(
                    "timestamp spacing {} differs from interval {}",
                    w[1] - w[0],
                    self.interval_seconds
                )));
            }
        }
        if self.adjacency.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::Schema("adjacency must be finite and non-negative".into()));
        }
        if !self.self_loops && (0..n).any(|i| self.adjacency[[i, i]] != 0.0) {
            return Err(Error::Schema("adjacency has a non-zero diagonal without the self_loops flag".into()));
        }
        if self.observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("observations contain non-finite values".into()));
        }
        Ok(())
    }

    /// Restricts the dataset to the given nodes (in the given order).
    pub fn select_nodes(&self, nodes: &[usize]) -> SpatioTemporalDataset {
        let adjacency = Array2::from_shape_fn((nodes.len(), nodes.len()), |(i, j)| {
            self.adjacency[[nodes[i], nodes[j]]]
        });
        SpatioTemporalDataset {
            observations: self.observations.select(Axis(1), nodes),
            adjacency,
            node_coords: self.node_coords.select(Axis(0), nodes),
            node_ids: nodes.iter().map(|&i| self.node_ids[i]).collect(),
            timestamps: self.timestamps.clone(),
            interval_seconds: self.interval_seconds,
            feature_units: self.feature_units.clone(),
            projection_seed: self.projection_seed,
            self_loops: self.self_loops,
        }
    }
}

fn load_err(path: &Path, reason: impl ToString) -> Error {
    Error::Load { path: path.to_path_buf(), reason: reason.to_string() }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| load_err(path, e))
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Schema(format!("{}: bad number {field:?}: {e}", path.display())))
}

/// Reads a dataset bundle directory and validates it against its manifest.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SpatioTemporalDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&read_file(&manifest_path)?)
        .map_err(|e| Error::Schema(format!("manifest.json: {e}")))?;
    let (t, n, f) = (manifest.n_steps, manifest.n_nodes, manifest.n_features);

    let obs_path = dir.join("observations.csv");
    let mut observations = Array3::from_elem((t, n, f), f64::NAN);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&obs_path)
        .map_err(|e| load_err(&obs_path, e))?;
    let mut seen = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != f + 2 {
            return Err(Error::Schema(format!(
                "observations.csv: expected {} columns, got {}",
                f + 2,
                record.len()
            )));
        }
        let step: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("observations.csv: bad step {:?}", &record[0])))?;
        let node: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("observations.csv: bad node {:?}", &record[1])))?;
        if step >= t || node >= n {
            return Err(Error::Schema(format!(
                "observations.csv: (step {step}, node {node}) outside manifest bounds ({t}, {n})"
            )));
        }
        for k in 0..f {
            observations[[step, node, k]] = parse_f64(&record[k + 2], &obs_path)?;
        }
        seen += 1;
    }
    if seen != t * n {
        return Err(Error::Schema(format!("observations.csv: {seen} rows, expected {}", t * n)));
    }

    let adj_path = dir.join("adjacency.csv");
    let adj_text = read_file(&adj_path)?;
    let rows: Vec<Vec<f64>> = adj_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| parse_f64(v, &adj_path)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Schema(format!(
            "adjacency.csv is {}x{}, manifest says {n} nodes",
            rows.len(),
            rows.first().map_or(0, Vec::len)
        )));
    }
    let adjacency = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]);

    let nodes_path = dir.join("nodes.csv");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&nodes_path)
        .map_err(|e| load_err(&nodes_path, e))?;
    let mut node_ids = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(2 * n);
    for record in reader.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Schema("nodes.csv: expected node_id,lat,long".into()));
        }
        node_ids.push(
            record[0]
                .trim()
                .parse::<i64>()
                .map_err(|_| Error::Schema(format!("nodes.csv: bad node id {:?}", &record[0])))?,
        );
        coords.push(parse_f64(&record[1], &nodes_path)?);
        coords.push(parse_f64(&record[2], &nodes_path)?);
    }
    if node_ids.len() != n {
        return Err(Error::Schema(format!("nodes.csv has {} rows, manifest says {n}", node_ids.len())));
    }
    let node_coords = Array2::from_shape_vec((n, 2), coords).expect("length checked");

    let ts_path = dir.join("timestamps.csv");
    let timestamps = read_file(&ts_path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<i64>()
                .map_err(|_| Error::Schema(format!("timestamps.csv: bad value {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if timestamps.len() != t {
        return Err(Error::Schema(format!("timestamps.csv has {} rows, manifest says {t}", timestamps.len())));
    }

    let ds = SpatioTemporalDataset {
        observations,
        adjacency,
        node_coords,
        node_ids,
        timestamps,
        interval_seconds: manifest.interval_seconds,
        feature_units: manifest.feature_units,
        projection_seed: manifest.projection_seed,
        self_loops: manifest.self_loops,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset bundle. Floats use the shortest representation that
/// round-trips exactly.
pub fn save_dataset(ds: &SpatioTemporalDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&ds.manifest())?)?;

    let (t, n, f) = ds.observations.dim();
    let mut out = std::io::BufWriter::new(fs::File::create(dir.join("observations.csv"))?);
    let header: Vec<String> = ["step".to_string(), "node".to_string()]
        .into_iter()
        .chain((0..f).map(|k| format!("f{k}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for s in 0..t {
        for i in 0..n {
            write!(out, "{s},{i}")?;
            for k in 0..f {
                write!(out, ",{}", ds.observations[[s, i, k]])?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;

    let mut out = std::io::BufWriter::new(fs::File::create(dir.join("adjacency.csv"))?);
    for row in ds.adjacency.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;

    let mut out = std::io::BufWriter::new(fs::File::create(dir.join("nodes.csv"))?);
    writeln!(out, "node_id,lat,long")?;
    for i in 0..n {
        writeln!(out, "{},{},{}", ds.node_ids[i], ds.node_coords[[i, 0]], ds.node_coords[[i, 1]])?;
    }
    out.flush()?;

    let mut out = std::io::BufWriter::new(fs::File::create(dir.join("timestamps.csv"))?);
    for ts in &ds.timestamps {
        writeln!(out, "{ts}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(t: usize, n: usize) -> SpatioTemporalDataset {
        let mut adjacency = Array2::ones((n, n));
        for i in 0..n {
            adjacency[[i, i]] = 0.0;
        }
        SpatioTemporalDataset {
            observations: Array3::from_shape_fn((t, n, 1), |(s, i, _)| s as f64 * 0.1 + i as f64 / 3.0),
            adjacency,
            node_coords: Array2::from_shape_fn((n, 2), |(i, j)| 31.0 + i as f64 * 0.01 + j as f64 * 89.0),
            node_ids: (0..n as i64).collect(),
            timestamps: (0..t as i64).map(|s| 1_700_000_000 + 300 * s).collect(),
            interval_seconds: 300,
            feature_units: vec!["veh/5min".into()],
            projection_seed: 7,
            self_loops: false,
        }
    }

    #[test]
    fn bundle_round_trip_is_value_exact() {
        let ds = tiny(100, 4);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.observations.dim(), (100, 4, 1));
        assert_eq!(back, ds);
    }

    #[test]
    fn adjacency_size_mismatch_is_schema_error() {
        let ds = tiny(10, 4);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        fs::write(dir.path().join("adjacency.csv"), "0,1,1\n1,0,1\n1,1,0\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn repeated_timestamp_is_schema_error() {
        let mut ds = tiny(3, 2);
        ds.timestamps = vec![0, 300, 300];
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_bundle_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path().join("nope")), Err(Error::Load { .. })));
    }

    #[test]
    fn diagonal_requires_self_loop_flag() {
        let mut ds = tiny(4, 2);
        ds.adjacency[[0, 0]] = 1.0;
        assert!(ds.validate().is_err());
        ds.self_loops = true;
        assert!(ds.validate().is_ok());
    }
}
