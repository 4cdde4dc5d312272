//! On-disk dataset formats.
//!
//! * Edge list: UTF-8 text, one `src<TAB>dst` decimal pair per line, each
//!   undirected edge written once as (min, max); self-loops are not written
//!   (the loader adds them).
//! * Features: magic `GNNF`, u64 rows, u64 cols, row-major little-endian f32.
//! * Labels: magic `GNNL`, u64 n, then n little-endian i64 (−1 = unlabeled).
//! * Split: JSON object with integer arrays `train`, `val`, `test`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{build_csr, Dataset, Split, UNLABELED};
use crate::error::{Error, Result};

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.gnnf";
pub const LABELS_FILE: &str = "labels.gnnl";
pub const SPLIT_FILE: &str = "split.json";

/// Locations of the four dataset files.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub split: PathBuf,
}

impl DatasetPaths {
    /// The canonical file names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            edges: dir.join(EDGES_FILE),
            features: dir.join(FEATURES_FILE),
            labels: dir.join(LABELS_FILE),
            split: dir.join(SPLIT_FILE),
        }
    }
}

pub fn write_edge_list(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &(u, v) in edges {
        writeln!(w, "{u}\t{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let r = BufReader::new(File::open(path)?);
    let mut edges = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|t| t.parse().ok()).ok_or_else(|| {
                Error::Format(format!("{}:{}: expected 'src<TAB>dst'", path.display(), lineno + 1))
            })
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::Format(format!(
                "{}:{}: trailing fields after 'src<TAB>dst'",
                path.display(),
                lineno + 1
            )));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn read_magic(r: &mut impl Read, expect: &[u8; 4], path: &Path) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: file too short for magic", path.display())))?;
    if &magic != expect {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            magic,
            expect
        )));
    }
    Ok(())
}

fn read_u64(r: &mut impl Read, path: &Path, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("{}: truncated {what}", path.display())))?;
    Ok(u64::from_le_bytes(buf))
}

/// Writes features as f32 (the in-memory f64 values are narrowed).
pub fn write_features(path: &Path, features: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"GNNF")?;
    w.write_all(&(features.nrows() as u64).to_le_bytes())?;
    w.write_all(&(features.ncols() as u64).to_le_bytes())?;
    for &v in features.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, b"GNNF", path)?;
    let rows = read_u64(&mut r, path, "row count")? as usize;
    let cols = read_u64(&mut r, path, "column count")? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 4];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_labels(path: &Path, labels: &[i64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"GNNL")?;
    w.write_all(&(labels.len() as u64).to_le_bytes())?;
    for &l in labels {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, b"GNNL", path)?;
    let n = read_u64(&mut r, path, "label count")? as usize;
    let mut labels = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
        labels.push(i64::from_le_bytes(buf));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    Ok(labels)
}

pub fn write_split(path: &Path, split: &Split) -> Result<()> {
    let json = serde_json::to_string_pretty(split)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<Split> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes the four dataset files into `dir` under their canonical names.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = DatasetPaths::in_dir(dir);
    let plain: Vec<(usize, usize)> =
        ds.graph.undirected_edges().into_iter().filter(|&(u, v)| u != v).collect();
    write_edge_list(&paths.edges, &plain)?;
    write_features(&paths.features, &ds.features)?;
    write_labels(&paths.labels, &ds.labels)?;
    write_split(&paths.split, &ds.split)?;
    Ok(paths)
}

/// Loads a dataset. Node count comes from the label file; the undirected
/// graph gets self-loops added. `num_classes` defaults to max label + 1.
pub fn load_dataset(paths: &DatasetPaths, num_classes: Option<usize>) -> Result<Dataset> {
    let labels = read_labels(&paths.labels)?;
    let features = read_features(&paths.features)?;
    let split = read_split(&paths.split)?;
    let n = labels.len();
    let edges = read_edge_list(&paths.edges)?;
    let graph = build_csr(n, &edges, true)?.with_self_loops();
    let classes = match num_classes {
        Some(c) => c,
        None => labels
            .iter()
            .filter(|&&l| l != UNLABELED)
            .max()
            .map(|&l| l as usize + 1)
            .ok_or_else(|| Error::Config("cannot infer num_classes: no labels".into()))?,
    };
    Dataset::new(graph, features, labels, classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstore::{generate_sbm, SbmConfig};

    fn toy() -> Dataset {
        generate_sbm(
            &SbmConfig {
                blocks: 2,
                nodes_per_block: 10,
                p_in: 0.6,
                p_out: 0.1,
                feature_dim: 2,
                feature_noise: 0.25,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let ds = toy();
        let dir = tempfile::tempdir().unwrap();
        let paths = save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&paths, None).unwrap();
        assert_eq!(back.graph, ds.graph, "self-loops restored at load");
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.num_classes, 2);
        assert_eq!(back.split, ds.split);
        // Features survive the f32 narrowing within f32 precision.
        for (a, b) in back.features.iter().zip(ds.features.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn edge_list_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.tsv");
        write_edge_list(&path, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(read_edge_list(&path).unwrap(), vec![(0, 1), (2, 3)]);

        std::fs::write(&path, "0\t1\nbroken line\n").unwrap();
        assert!(matches!(read_edge_list(&path), Err(Error::Format(_))));
        std::fs::write(&path, "0\t1\t2\n").unwrap();
        assert!(matches!(read_edge_list(&path), Err(Error::Format(_))));
    }

    #[test]
    fn binary_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.gnnf");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_features(&path), Err(Error::Format(_))));

        write_features(&path, &Array2::zeros((2, 2))).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_features(&path), Err(Error::Format(_))));

        let lpath = dir.path().join("l.gnnl");
        write_labels(&lpath, &[0, UNLABELED, 3]).unwrap();
        assert_eq!(read_labels(&lpath).unwrap(), vec![0, UNLABELED, 3]);
        let mut bytes = std::fs::read(&lpath).unwrap();
        bytes.extend_from_slice(&[0u8]);
        std::fs::write(&lpath, &bytes).unwrap();
        assert!(matches!(read_labels(&lpath), Err(Error::Format(_))));
    }
}
