//! CSV trajectories and fields, dataset directories, and the binary model container.
//!
//! Container layout: the 8-byte magic `ROCKBIN\x01`, a little-endian `u64`
//! header length, a JSON header, then every array as column-major
//! little-endian `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{Dataset, Generator};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::ode::{RockModel, Trajectory, TrajectorySet};
use crate::pde::{FeatureSpec, FieldGrid, PdeModel};

pub const MAGIC: &[u8; 8] = b"ROCKBIN\x01";
pub const MODEL_FORMAT: &str = "rock-model-v1";
pub const PDE_MODEL_FORMAT: &str = "rock-pde-model-v1";
pub const DATASET_FORMAT: &str = "rock-dataset-v1";

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_cell(path: &Path, line: u64, col: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format_err(path, format!("line {line}, column {}: cannot parse {s:?} as a number", col + 1)))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))
}

type CsvRows = (Vec<String>, Vec<(u64, Vec<f64>)>);

fn csv_rows(path: &Path) -> Result<CsvRows> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => format_err(path, format!("{other:?}")),
        })?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| format_err(path, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            format_err(path, format!("line {line}: {e}"))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(format_err(
                path,
                format!("line {line}: expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, s)| parse_cell(path, line, c, s))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, vals));
    }
    Ok((header, rows))
}

/// Writes `t,x_1,…,x_d`, one row per sample.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.dim()).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(|e| format_err(path, e.to_string()))?;
    for (k, t) in traj.ts.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        row.extend(traj.xs.column(k).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let (header, rows) = csv_rows(path)?;
    if header.first().map(String::as_str) != Some("t") || header.len() < 2 {
        return Err(format_err(path, "line 1: header must start with t followed by state columns"));
    }
    if rows.is_empty() {
        return Err(format_err(path, "no samples"));
    }
    let d = header.len() - 1;
    for w in rows.windows(2) {
        if !(w[1].1[0] > w[0].1[0]) {
            return Err(format_err(path, format!("line {}: times must be strictly increasing", w[1].0)));
        }
    }
    let ts = rows.iter().map(|r| r.1[0]).collect();
    let xs = DMatrix::from_fn(d, rows.len(), |i, k| rows[k].1[i + 1]);
    Trajectory::new(ts, xs)
}

/// Writes a field as `t,<x positions>` with one row per time.
pub fn write_field_csv(path: &Path, grid: &FieldGrid) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(grid.xs.iter().map(|x| fmt_f64(*x)));
    w.write_record(&header).map_err(|e| format_err(path, e.to_string()))?;
    for (j, t) in grid.ts.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        row.extend(grid.u.row(j).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_csv(path: &Path, periodic: bool) -> Result<FieldGrid> {
    let (header, rows) = csv_rows(path)?;
    if header.first().map(String::as_str) != Some("t") {
        return Err(format_err(path, "line 1: header must start with t"));
    }
    let xs = header[1..]
        .iter()
        .enumerate()
        .map(|(c, s)| parse_cell(path, 1, c + 1, s))
        .collect::<Result<Vec<f64>>>()?;
    let ts = rows.iter().map(|r| r.1[0]).collect();
    let u = DMatrix::from_fn(rows.len(), xs.len(), |j, i| rows[j].1[i + 1]);
    FieldGrid::new(u, ts, xs, periodic).map_err(|e| format_err(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    /// `trajectories` or `field`.
    pub kind: String,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn trajectory_file(k: usize) -> String {
    format!("traj_{k:04}.csv")
}

/// Writes a dataset directory and its `manifest.json`.
pub fn write_dataset(
    dir: &Path,
    data: &Dataset,
    generator: Option<&Generator>,
    config_hash: Option<&str>,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let (kind, files, periodic) = match data {
        Dataset::Ode(set) => {
            let mut files = Vec::new();
            for (k, t) in set.trajectories().iter().enumerate() {
                let name = trajectory_file(k);
                write_trajectory_csv(&dir.join(&name), t)?;
                files.push(name);
            }
            ("trajectories", files, None)
        }
        Dataset::Pde(grid) => {
            write_field_csv(&dir.join("field.csv"), grid)?;
            ("field", vec!["field.csv".to_string()], Some(grid.periodic))
        }
    };
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        kind: kind.into(),
        files,
        periodic,
        generator: generator.cloned(),
        params: generator.map(|g| g.system.resolved_params()).unwrap_or_default(),
        config_hash: config_hash.map(str::to_string),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| format_err(&path, e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| format_err(&path, e.to_string()))?;
    if m.format != DATASET_FORMAT {
        return Err(format_err(&path, format!("unknown dataset format {:?}", m.format)));
    }
    Ok(m)
}

/// Reads a dataset directory. Without a manifest, every `*.csv` file in
/// name order is read as a trajectory.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.join("manifest.json").exists() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(format_err(dir, "no manifest.json and no CSV files"));
        }
        let trajs = files.iter().map(|f| read_trajectory_csv(f)).collect::<Result<_>>()?;
        return Ok(Dataset::Ode(TrajectorySet::new(trajs)?));
    }
    let m = read_manifest(dir)?;
    match m.kind.as_str() {
        "trajectories" => {
            let trajs = m
                .files
                .iter()
                .map(|f| read_trajectory_csv(&dir.join(f)))
                .collect::<Result<_>>()?;
            Ok(Dataset::Ode(TrajectorySet::new(trajs)?))
        }
        "field" => {
            let file = m
                .files
                .first()
                .ok_or_else(|| format_err(&dir.join("manifest.json"), "field dataset lists no file"))?;
            Ok(Dataset::Pde(read_field_csv(&dir.join(file), m.periodic.unwrap_or(true))?))
        }
        other => Err(format_err(&dir.join("manifest.json"), format!("unknown dataset kind {other:?}"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Position in the payload, counted in `f64` values.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContainerHeader {
    format: String,
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

pub fn write_container(path: &Path, format: &str, meta: Value, arrays: &[(&str, &DMatrix<f64>)]) -> Result<()> {
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, m) in arrays {
        entries.push(ArrayEntry {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            offset,
        });
        offset += m.len();
    }
    let header = ContainerHeader {
        format: format.into(),
        meta,
        arrays: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| format_err(path, e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, m) in arrays {
        for v in m.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a container and checks its format tag.
pub fn read_container(path: &Path, expected_format: &str) -> Result<(Value, BTreeMap<String, DMatrix<f64>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| format_err(path, "truncated file"))?;
    if &magic != MAGIC {
        return Err(format_err(path, "not a model container (bad magic)"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| format_err(path, "truncated header length"))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| format_err(path, "truncated header"))?;
    let header: ContainerHeader = serde_json::from_slice(&json).map_err(|e| format_err(path, e.to_string()))?;
    if header.format != expected_format {
        return Err(format_err(
            path,
            format!("expected format {expected_format:?}, found {:?}", header.format),
        ));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(format_err(path, "payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut arrays = BTreeMap::new();
    for e in header.arrays {
        let end = e.offset + e.rows * e.cols;
        if end > values.len() {
            return Err(format_err(path, format!("array {} extends past the payload", e.name)));
        }
        arrays.insert(
            e.name,
            DMatrix::from_column_slice(e.rows, e.cols, &values[e.offset..end]),
        );
    }
    Ok((header.meta, arrays))
}

fn take(arrays: &mut BTreeMap<String, DMatrix<f64>>, path: &Path, name: &str) -> Result<DMatrix<f64>> {
    arrays
        .remove(name)
        .ok_or_else(|| format_err(path, format!("missing array {name}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    kernel: KernelSpec,
    lambda: f64,
    p: usize,
    block_lengths: Vec<usize>,
    #[serde(default)]
    extra: Value,
}

/// Saves an ODE model; `extra` is stored verbatim (e.g. a config hash).
pub fn save_model(path: &Path, model: &RockModel, extra: Value) -> Result<()> {
    let times: Vec<f64> = model.block_times().iter().flatten().copied().collect();
    let meta = ModelMeta {
        kernel: *model.kernel(),
        lambda: model.lambda(),
        p: model.p(),
        block_lengths: model.block_times().iter().map(Vec::len).collect(),
        extra,
    };
    let times = DMatrix::from_row_slice(1, times.len(), &times);
    write_container(
        path,
        MODEL_FORMAT,
        serde_json::to_value(meta).expect("metadata serializes"),
        &[
            ("train_points", model.train_points()),
            ("coeffs", model.coeffs()),
            ("block_times", &times),
        ],
    )
}

pub fn load_model(path: &Path) -> Result<(RockModel, Value)> {
    let (meta, mut arrays) = read_container(path, MODEL_FORMAT)?;
    let meta: ModelMeta = serde_json::from_value(meta).map_err(|e| format_err(path, e.to_string()))?;
    let times = take(&mut arrays, path, "block_times")?;
    let train_points = take(&mut arrays, path, "train_points")?;
    let coeffs = take(&mut arrays, path, "coeffs")?;
    if meta.block_lengths.iter().sum::<usize>() != times.len() {
        return Err(format_err(path, "block lengths do not match the stored times"));
    }
    let mut block_times = Vec::new();
    let mut start = 0;
    for len in &meta.block_lengths {
        block_times.push(times.as_slice()[start..start + len].to_vec());
        start += len;
    }
    let model = RockModel::from_stored(meta.kernel, meta.lambda, meta.p, block_times, train_points, coeffs)?;
    Ok((model, meta.extra))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PdeMeta {
    features: FeatureSpec,
    lambda: f64,
    coarsen: usize,
    dx: f64,
    periodic: bool,
    fd_order: usize,
    #[serde(default)]
    extra: Value,
}

pub fn save_pde_model(path: &Path, model: &PdeModel, extra: Value) -> Result<()> {
    let meta = PdeMeta {
        features: model.features,
        lambda: model.lambda,
        coarsen: model.coarsen,
        dx: model.dx,
        periodic: model.periodic,
        fd_order: model.fd_order,
        extra,
    };
    let alpha = DMatrix::from_column_slice(model.alpha.len(), 1, &model.alpha);
    write_container(
        path,
        PDE_MODEL_FORMAT,
        serde_json::to_value(meta).expect("metadata serializes"),
        &[("alpha", &alpha)],
    )
}

pub fn load_pde_model(path: &Path) -> Result<(PdeModel, Value)> {
    let (meta, mut arrays) = read_container(path, PDE_MODEL_FORMAT)?;
    let meta: PdeMeta = serde_json::from_value(meta).map_err(|e| format_err(path, e.to_string()))?;
    let alpha = take(&mut arrays, path, "alpha")?;
    let model = PdeModel::new(
        meta.features,
        alpha.as_slice().to_vec(),
        meta.lambda,
        meta.coarsen,
        meta.dx,
        meta.periodic,
    )?;
    Ok((model, meta.extra))
}

/// Reads the format tag of a container without loading the payload.
pub fn container_format(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| format_err(path, "truncated file"))?;
    if &head[..8] != MAGIC {
        return Err(format_err(path, "not a model container (bad magic)"));
    }
    let len = u64::from_le_bytes(head[8..].try_into().expect("8 bytes")) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| format_err(path, "truncated header"))?;
    let header: ContainerHeader = serde_json::from_slice(&json).map_err(|e| format_err(path, e.to_string()))?;
    Ok(header.format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate, SystemName, SystemSpec};
    use crate::integrate::Integrator;
    use crate::ode::train;

    fn small_set() -> TrajectorySet {
        let gen = Generator {
            system: SystemSpec::new(SystemName::FitzHughNagumo).with_noise(0.01),
            n_traj: 3,
            samples: 12,
            dt: 0.1,
            transient: 0.0,
            seed: 2,
        };
        match generate(&gen).unwrap() {
            Dataset::Ode(s) => s,
            Dataset::Pde(_) => unreachable!(),
        }
    }

    #[test]
    fn trajectory_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let set = small_set();
        let t = &set.trajectories()[0];
        let path = dir.path().join("a.csv");
        write_trajectory_csv(&path, t).unwrap();
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(&back, t);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x_1,x_2\n"));
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x_1\n0.0,1.0\n0.1,abc\n").unwrap();
        let msg = read_trajectory_csv(&path).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        std::fs::write(&path, "t,x_1\n0.0,1.0\n0.1,2.0,3.0\n").unwrap();
        let err = read_trajectory_csv(&path).unwrap_err();
        assert_eq!(err.category(), "format");
        assert!(err.to_string().contains("line 3"), "{err}");
        std::fs::write(&path, "t,x_1\n0.0,1.0\n0.0,2.0\n").unwrap();
        assert!(read_trajectory_csv(&path).unwrap_err().to_string().contains("line 3"));
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = Dataset::Ode(small_set());
        let m = write_dataset(dir.path(), &data, None, Some("abc")).unwrap();
        assert_eq!(m.files[0], "traj_0000.csv");
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
        std::fs::remove_file(dir.path().join("manifest.json")).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let xs: Vec<f64> = (0..8).map(|i| i as f64 * 0.25).collect();
        let u = DMatrix::from_fn(3, 8, |j, i| (j as f64 + 1.0) * (xs[i]).sin() / 3.0);
        let grid = FieldGrid::new(u, vec![0.0, 0.1, 0.2], xs, true).unwrap();
        write_dataset(dir.path(), &Dataset::Pde(grid.clone()), None, None).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), Dataset::Pde(grid));
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_set();
        let kernel = KernelSpec::gaussian(1.3).unwrap();
        let model = train(&data, &kernel, 1e-4, 3).unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &model, serde_json::json!({"config_hash": "x"})).unwrap();
        assert_eq!(container_format(&path).unwrap(), MODEL_FORMAT);
        let (back, extra) = load_model(&path).unwrap();
        assert_eq!(extra["config_hash"], "x");
        assert_eq!(back.coeffs(), model.coeffs());
        let ts: Vec<f64> = (0..30).map(|k| k as f64 * 0.05).collect();
        let x0 = data.trajectories()[1].state(0);
        let a = model.forecast(&x0, &ts, Integrator::Rk4).unwrap();
        let b = back.forecast(&x0, &ts, Integrator::Rk4).unwrap();
        assert_eq!(a, b);
        assert!(matches!(load_pde_model(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn pde_model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FeatureSpec::polynomial(2, 1);
        let model = PdeModel::new(spec, vec![0.0, 0.1, -0.2, 0.05], 1e-6, 4, 0.1, true).unwrap();
        let path = dir.path().join("pde.bin");
        save_pde_model(&path, &model, Value::Null).unwrap();
        let (back, _) = load_pde_model(&path).unwrap();
        assert_eq!(back.alpha, model.alpha);
        assert_eq!(back.features, model.features);
        assert_eq!(back.dx, model.dx);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"NOTROCK!").unwrap();
        assert!(matches!(read_container(&path, MODEL_FORMAT), Err(Error::Format { .. })));
        let m = DMatrix::from_element(2, 2, 1.0);
        write_container(&path, MODEL_FORMAT, Value::Null, &[("m", &m)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_container(&path, MODEL_FORMAT).is_err());
    }
}
