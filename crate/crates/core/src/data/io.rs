use std::path::Path;

use super::{
    compute_risk_scores, CrashRecord, DataError, Dataset, FeatureTensor, Result, RiskTensor,
    RoadGraph, TrueParams,
};

pub const EDGES_FILE: &str = "edges.csv";
pub const CRASHES_FILE: &str = "crashes.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const TRUE_PARAMS_FILE: &str = "true_params.csv";

fn parse_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, row: usize, rec: &csv::StringRecord, k: usize) -> Result<T> {
    let raw = rec
        .get(k)
        .ok_or_else(|| parse_err(path, format!("row {row}: missing column {k}")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, format!("row {row}: cannot parse {raw:?} in column {k}")))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(parse_err(path, format!("expected header {expected:?}, got {got:?}")));
    }
    Ok(())
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| parse_err(path, e.to_string()))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

/// Loads `edges.csv`, `crashes.csv` and `features.csv` from `dir`. Road and
/// slot counts come from the feature grid, which must be complete.
pub fn load_dataset(dir: &Path, severity_weights: [f64; 3]) -> Result<Dataset> {
    let features = read_features(&dir.join(FEATURES_FILE))?;
    let (n, t) = (features.n_roads(), features.n_slots());
    let graph = read_edges(&dir.join(EDGES_FILE), n)?;
    let records = read_crashes(&dir.join(CRASHES_FILE))?;
    let risk = compute_risk_scores(&records, severity_weights, n, t)?;
    Dataset::new(graph, features, risk)
}

fn read_edges(path: &Path, n: usize) -> Result<RoadGraph> {
    let mut rdr = open(path)?;
    check_header(path, &mut rdr, &["road_a", "road_b"])?;
    let mut edges = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        edges.push((field(path, row, &rec, 0)?, field(path, row, &rec, 1)?));
    }
    RoadGraph::build(n, &edges)
}

fn read_crashes(path: &Path) -> Result<Vec<CrashRecord>> {
    let mut rdr = open(path)?;
    check_header(path, &mut rdr, &["road", "time_slot", "minor", "serious", "fatal"])?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        out.push(CrashRecord {
            road: field(path, row, &rec, 0)?,
            time: field(path, row, &rec, 1)?,
            counts: [
                field(path, row, &rec, 2)?,
                field(path, row, &rec, 3)?,
                field(path, row, &rec, 4)?,
            ],
        });
    }
    Ok(out)
}

fn read_features(path: &Path) -> Result<FeatureTensor> {
    let mut rdr = open(path)?;
    check_header(path, &mut rdr, &["road", "time_slot"])?;
    let dim = rdr.headers()?.len() - 2;
    if dim == 0 {
        return Err(parse_err(path, "no feature columns"));
    }
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let road: usize = field(path, row, &rec, 0)?;
        let slot: usize = field(path, row, &rec, 1)?;
        let vals = (0..dim)
            .map(|k| field(path, row, &rec, k + 2))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((road, slot, vals));
    }
    let n = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let t = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    if rows.len() != n * t {
        return Err(parse_err(
            path,
            format!("expected a full {n}x{t} grid, got {} rows", rows.len()),
        ));
    }
    let mut values = vec![f64::NAN; n * t * dim];
    let mut seen = vec![false; n * t];
    for (road, slot, vals) in rows {
        let cell = road * t + slot;
        if seen[cell] {
            return Err(parse_err(path, format!("duplicate cell ({road}, {slot})")));
        }
        seen[cell] = true;
        values[cell * dim..(cell + 1) * dim].copy_from_slice(&vals);
    }
    FeatureTensor::from_values(n, t, dim, values)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_edges(path: &Path, graph: &RoadGraph) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["road_a", "road_b"])?;
    for &(a, b) in graph.edges() {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per nonzero cell with the whole score in the `minor` column.
pub fn write_crashes(path: &Path, risk: &RiskTensor) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["road", "time_slot", "minor", "serious", "fatal"])?;
    for i in 0..risk.n_roads() {
        for s in 0..risk.n_slots() {
            let y = risk.get(i, s);
            if y > 0.0 {
                w.write_record([i.to_string(), s.to_string(), y.to_string(), "0".into(), "0".into()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_features(path: &Path, features: &FeatureTensor) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["road".to_string(), "time_slot".to_string()];
    header.extend((0..features.dim()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for i in 0..features.n_roads() {
        for s in 0..features.n_slots() {
            let mut rec = vec![i.to_string(), s.to_string()];
            rec.extend((0..features.dim()).map(|k| features.raw(i, s, k).to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_true_params(path: &Path, truth: &TrueParams) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["road", "time_slot", "pi", "mu", "phi", "rho"])?;
    for i in 0..truth.n_roads {
        for s in 0..truth.n_slots {
            let z = truth.get(i, s);
            w.write_record([
                i.to_string(),
                s.to_string(),
                z.pi.to_string(),
                z.td.mu.to_string(),
                z.td.phi.to_string(),
                z.td.rho.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    #[test]
    fn synthetic_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = synth_generate(
            &SynthConfig {
                n_roads: 6,
                n_slots: 20,
                ..SynthConfig::default()
            },
            5,
        )
        .unwrap();
        write_edges(&dir.path().join(EDGES_FILE), &out.dataset.graph).unwrap();
        write_crashes(&dir.path().join(CRASHES_FILE), &out.dataset.risk).unwrap();
        write_features(&dir.path().join(FEATURES_FILE), &out.dataset.features).unwrap();
        let back = load_dataset(dir.path(), crate::data::DEFAULT_SEVERITY_WEIGHTS).unwrap();
        assert_eq!(back.graph, out.dataset.graph);
        assert_eq!(back.risk, out.dataset.risk);
        assert_eq!(back.features, out.dataset.features);
    }

    #[test]
    fn incomplete_feature_grid_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(FEATURES_FILE);
        std::fs::write(&p, "road,time_slot,f0\n0,0,1.0\n1,1,2.0\n").unwrap();
        assert!(matches!(read_features(&p), Err(DataError::Parse { .. })));
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(EDGES_FILE);
        std::fs::write(&p, "a,b\n0,1\n").unwrap();
        assert!(matches!(read_edges(&p, 2), Err(DataError::Parse { .. })));
    }
}
