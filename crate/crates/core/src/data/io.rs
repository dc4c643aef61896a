//! Text formats for matrices, labels, partitions and dataset manifests.
//!
//! * matrix: CSV or TSV, header `sample_id,<feature ids...>`, one row per
//!   sample; empty cells and `NA` are missing values.
//! * labels: CSV `sample_id,label`; class indices follow sorted label order.
//! * partition: CSV `feature_id,subset_id` with subset ids `0..K`.
//! * manifest: JSON naming the per-view files relative to itself.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, WriterBuilder};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{first_duplicate, MultiOmicsDataset, OmicsMatrix, SubsetPartition};
use crate::error::{Error, Result};

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn sniff_delimiter(bytes: &[u8]) -> u8 {
    let first_line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    if first_line.contains(&b'\t') {
        b'\t'
    } else {
        b','
    }
}

/// Reads every record, tagging each with its 1-based line number.
fn records(bytes: &[u8], delimiter: u8, origin: &str) -> Result<Vec<(usize, StringRecord)>> {
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_reader(bytes);
    let mut out = Vec::new();
    for rec in reader.records() {
        match rec {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line() as usize);
                out.push((line, r));
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return Err(Error::parse(origin, line, e.to_string()));
            }
        }
    }
    Ok(out)
}

fn parse_cell(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return Some(f64::NAN);
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses matrix text; the delimiter is a tab if the header line has one, else a comma.
pub fn parse_omics_matrix(bytes: &[u8], view_id: &str, origin: &str) -> Result<OmicsMatrix> {
    let rows = records(bytes, sniff_delimiter(bytes), origin)?;
    let mut rows = rows.into_iter();
    let (line, header) = rows
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "empty file, expected a header"))?;
    if header.get(0).map(str::trim) != Some("sample_id") {
        return Err(Error::parse(origin, line, "header must start with `sample_id`"));
    }
    let feature_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_owned()).collect();
    if feature_ids.is_empty() {
        return Err(Error::parse(origin, line, "header names no features"));
    }
    if let Some(pos) = feature_ids.iter().position(String::is_empty) {
        return Err(Error::parse(origin, line, format!("empty feature id in column {}", pos + 2)));
    }
    if let Some(dup) = first_duplicate(&feature_ids) {
        return Err(Error::parse(origin, line, format!("duplicate feature id `{dup}`")));
    }
    let width = feature_ids.len();
    let mut sample_ids = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashMap::new();
    for (line, rec) in rows {
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != width + 1 {
            return Err(Error::parse(
                origin,
                line,
                format!("ragged row: expected {} fields, found {}", width + 1, rec.len()),
            ));
        }
        let id = rec[0].trim().to_owned();
        if id.is_empty() {
            return Err(Error::parse(origin, line, "empty sample id"));
        }
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(Error::parse(
                origin,
                line,
                format!("duplicate sample id `{id}` (first seen on line {prev})"),
            ));
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v = parse_cell(cell).ok_or_else(|| {
                Error::parse(
                    origin,
                    line,
                    format!("non-numeric value `{}` for feature `{}`", cell, feature_ids[j]),
                )
            })?;
            data.push(v);
        }
        sample_ids.push(id);
    }
    if sample_ids.is_empty() {
        return Err(Error::parse(origin, line, "no sample rows"));
    }
    let values = Array2::from_shape_vec((sample_ids.len(), width), data)
        .expect("row widths checked above");
    OmicsMatrix::new(view_id, feature_ids, sample_ids, values)
}

pub fn load_omics_matrix(path: impl AsRef<Path>, view_id: &str) -> Result<OmicsMatrix> {
    let path = path.as_ref();
    parse_omics_matrix(&read_file(path)?, view_id, &path.display().to_string())
}

/// Parses `sample_id,label` rows into `(sample_id, label)` pairs.
pub fn parse_labels(bytes: &[u8], origin: &str) -> Result<Vec<(String, String)>> {
    let rows = records(bytes, b',', origin)?;
    let mut rows = rows.into_iter();
    let (line, header) = rows
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "empty file, expected a header"))?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != ["sample_id", "label"] {
        return Err(Error::parse(origin, line, "header must be `sample_id,label`"));
    }
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, rec) in rows {
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::parse(
                origin,
                line,
                format!("expected 2 fields, found {}", rec.len()),
            ));
        }
        let id = rec[0].trim().to_owned();
        let label = rec[1].trim().to_owned();
        if id.is_empty() || label.is_empty() {
            return Err(Error::parse(origin, line, "empty sample id or label"));
        }
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(Error::parse(
                origin,
                line,
                format!("duplicate sample id `{id}` (first seen on line {prev})"),
            ));
        }
        out.push((id, label));
    }
    Ok(out)
}

/// Parses a `feature_id,subset_id` file against the features of one view.
pub fn parse_partition(
    bytes: &[u8],
    origin: &str,
    view_id: &str,
    feature_ids: &[String],
) -> Result<SubsetPartition> {
    let rows = records(bytes, b',', origin)?;
    let mut rows = rows.into_iter();
    let (line, header) = rows
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "empty file, expected a header"))?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != ["feature_id", "subset_id"] {
        return Err(Error::parse(origin, line, "header must be `feature_id,subset_id`"));
    }
    let index: HashMap<&str, usize> = feature_ids
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();
    let mut assignment: Vec<Option<usize>> = vec![None; feature_ids.len()];
    for (line, rec) in rows {
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::parse(
                origin,
                line,
                format!("expected 2 fields, found {}", rec.len()),
            ));
        }
        let feature = rec[0].trim();
        let subset: usize = rec[1].trim().parse().map_err(|_| {
            Error::parse(origin, line, format!("subset id `{}` is not a non-negative integer", &rec[1]))
        })?;
        if subset >= feature_ids.len() {
            return Err(Error::parse(
                origin,
                line,
                format!("subset id {subset} exceeds the feature count {}", feature_ids.len()),
            ));
        }
        let &j = index
            .get(feature)
            .ok_or_else(|| Error::parse(origin, line, format!("unknown feature id `{feature}`")))?;
        if assignment[j].replace(subset).is_some() {
            return Err(Error::parse(origin, line, format!("feature `{feature}` assigned twice")));
        }
    }
    let assignment = assignment
        .into_iter()
        .enumerate()
        .map(|(j, a)| a.ok_or_else(|| Error::Data(format!("feature {} unassigned", feature_ids[j]))))
        .collect::<Result<Vec<_>>>()?;
    SubsetPartition::new(view_id, assignment)
}

pub fn load_partition(
    path: impl AsRef<Path>,
    view_id: &str,
    feature_ids: &[String],
) -> Result<SubsetPartition> {
    let path = path.as_ref();
    parse_partition(&read_file(path)?, &path.display().to_string(), view_id, feature_ids)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub id: String,
    pub matrix: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PathBuf>,
}

/// Dataset manifest. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub views: Vec<ViewEntry>,
    pub labels: PathBuf,
}

impl Manifest {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(bytes)?;
        if m.views.is_empty() {
            return Err(Error::Data("manifest lists no views".into()));
        }
        let ids: Vec<String> = m.views.iter().map(|v| v.id.clone()).collect();
        if let Some(dup) = first_duplicate(&ids) {
            return Err(Error::Data(format!("manifest lists view `{dup}` twice")));
        }
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_file(path.as_ref())?)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every file named by a manifest. Views are reordered to the sample
/// order of the first view; all views and the labels must cover the same samples.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<MultiOmicsDataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut views = Vec::with_capacity(manifest.views.len());
    let mut partitions = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let mut m = load_omics_matrix(resolve(base, &entry.matrix), &entry.id)?;
        if let Some(first) = views.first() {
            m = align_samples(m, first)?;
        }
        let partition = match &entry.partition {
            Some(p) => Some(load_partition(resolve(base, p), &entry.id, &m.feature_ids)?),
            None => None,
        };
        views.push(m);
        partitions.push(partition);
    }
    let labels_path = resolve(base, &manifest.labels);
    let pairs = parse_labels(&read_file(&labels_path)?, &labels_path.display().to_string())?;
    let class_names: Vec<String> = pairs
        .iter()
        .map(|(_, l)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_of: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let by_sample: HashMap<&str, usize> = pairs
        .iter()
        .map(|(s, l)| (s.as_str(), class_of[l.as_str()]))
        .collect();
    let labels = views[0]
        .sample_ids
        .iter()
        .map(|s| {
            by_sample
                .get(s.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("sample {s} has no label")))
        })
        .collect::<Result<Vec<_>>>()?;
    MultiOmicsDataset::new(views, labels, class_names, partitions)
}

fn align_samples(m: OmicsMatrix, reference: &OmicsMatrix) -> Result<OmicsMatrix> {
    if m.sample_ids == reference.sample_ids {
        return Ok(m);
    }
    if m.n_samples() != reference.n_samples() {
        return Err(Error::Data(format!(
            "view {} has {} samples, view {} has {}",
            m.view_id,
            m.n_samples(),
            reference.view_id,
            reference.n_samples()
        )));
    }
    let pos: HashMap<&str, usize> = m
        .sample_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let order = reference
        .sample_ids
        .iter()
        .map(|s| {
            pos.get(s.as_str()).copied().ok_or_else(|| {
                Error::Data(format!("sample {s} missing from view {}", m.view_id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let values = m.rows(&order);
    OmicsMatrix::new(m.view_id, m.feature_ids, reference.sample_ids.clone(), values)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows<I, R>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = WriterBuilder::new()
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NA".to_owned()
    } else {
        v.to_string()
    }
}

pub fn write_omics_matrix(path: impl AsRef<Path>, m: &OmicsMatrix) -> Result<()> {
    let header = std::iter::once("sample_id".to_owned()).chain(m.feature_ids.iter().cloned());
    let body = m.sample_ids.iter().zip(m.values.outer_iter()).map(|(id, row)| {
        std::iter::once(id.clone())
            .chain(row.iter().map(|&v| format_value(v)))
            .collect::<Vec<_>>()
    });
    write_rows(
        path.as_ref(),
        std::iter::once(header.collect::<Vec<_>>()).chain(body),
    )
}

pub fn write_labels(path: impl AsRef<Path>, ds: &MultiOmicsDataset) -> Result<()> {
    let rows = std::iter::once(vec!["sample_id".to_owned(), "label".to_owned()]).chain(
        ds.sample_ids()
            .iter()
            .zip(&ds.labels)
            .map(|(s, &l)| vec![s.clone(), ds.class_names[l].clone()]),
    );
    write_rows(path.as_ref(), rows)
}

pub fn write_partition(
    path: impl AsRef<Path>,
    p: &SubsetPartition,
    feature_ids: &[String],
) -> Result<()> {
    let rows = std::iter::once(vec!["feature_id".to_owned(), "subset_id".to_owned()]).chain(
        feature_ids
            .iter()
            .zip(&p.assignment)
            .map(|(f, s)| vec![f.clone(), s.to_string()]),
    );
    write_rows(path.as_ref(), rows)
}

/// Writes one matrix (and partition, when present) per view, the labels,
/// and a `manifest.json` tying them together. Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &MultiOmicsDataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::new();
    for (i, (m, p)) in ds.views.iter().zip(&ds.partitions).enumerate() {
        let matrix = PathBuf::from(format!("view_{i}.csv"));
        write_omics_matrix(dir.join(&matrix), m)?;
        let partition = match p {
            Some(p) => {
                let path = PathBuf::from(format!("partition_{i}.csv"));
                write_partition(dir.join(&path), p, &m.feature_ids)?;
                Some(path)
            }
            None => None,
        };
        views.push(ViewEntry {
            id: m.view_id.clone(),
            matrix,
            partition,
        });
    }
    write_labels(dir.join("labels.csv"), ds)?;
    let manifest = Manifest {
        views,
        labels: PathBuf::from("labels.csv"),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_toy_matrix() {
        let text = b"sample_id,g1,g2,g3\ns1,1.5,,3\ns2,NA,2,-4e-1\n";
        let m = parse_omics_matrix(text, "expr", "toy").unwrap();
        assert_eq!(m.feature_ids, ids(&["g1", "g2", "g3"]));
        assert_eq!(m.sample_ids, ids(&["s1", "s2"]));
        assert_eq!(m.values.dim(), (2, 3));
        assert_eq!(m.values[[0, 0]], 1.5);
        assert!(m.values[[0, 1]].is_nan());
        assert!(m.values[[1, 0]].is_nan());
        assert_eq!(m.values[[1, 2]], -0.4);
    }

    #[test]
    fn parses_tsv() {
        let text = b"sample_id\tg1\tg2\ns1\t1\t2\n";
        let m = parse_omics_matrix(text, "expr", "toy").unwrap();
        assert_eq!(m.values.dim(), (1, 2));
    }

    #[test]
    fn matrix_errors_name_the_line() {
        let ragged = b"sample_id,a,b\ns1,1,2\ns2,1\n";
        let err = parse_omics_matrix(ragged, "v", "f.csv").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("ragged"), "{err}");

        let dup = b"sample_id,a,a\ns1,1,2\n";
        let err = parse_omics_matrix(dup, "v", "f.csv").unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("duplicate feature"), "{err}");

        let dup_sample = b"sample_id,a\ns1,1\ns1,2\n";
        let err = parse_omics_matrix(dup_sample, "v", "f.csv").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("duplicate sample"), "{err}");

        let bad_header = b"id,a\ns1,1\n";
        assert!(parse_omics_matrix(bad_header, "v", "f.csv").is_err());

        let bad_value = b"sample_id,a\ns1,x\n";
        let err = parse_omics_matrix(bad_value, "v", "f.csv").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn partition_contract_cases() {
        let features = ids(&["f0", "f1", "f2", "f3"]);
        let ok = b"feature_id,subset_id\nf0,0\nf1,0\nf2,1\nf3,1\n";
        let p = parse_partition(ok, "p", "v", &features).unwrap();
        assert_eq!(p.n_subsets, 2);
        assert_eq!(p.assignment, vec![0, 0, 1, 1]);

        let missing = b"feature_id,subset_id\nf0,0\nf1,0\nf2,1\n";
        let err = parse_partition(missing, "p", "v", &features).unwrap_err().to_string();
        assert!(err.contains("feature f3 unassigned"), "{err}");

        let gap = b"feature_id,subset_id\nf0,0\nf1,0\nf2,2\nf3,2\n";
        let err = parse_partition(gap, "p", "v", &features).unwrap_err().to_string();
        assert!(err.contains("subset 1 empty"), "{err}");

        let unknown = b"feature_id,subset_id\nf0,0\nf9,0\n";
        let err = parse_partition(unknown, "p", "v", &features).unwrap_err().to_string();
        assert!(err.contains("unknown feature id"), "{err}");
    }

    #[test]
    fn labels_require_header() {
        assert!(parse_labels(b"a,b\n", "l").is_err());
        let pairs = parse_labels(b"sample_id,label\ns1,LUAD\ns2,BRCA\n", "l").unwrap();
        assert_eq!(pairs[1], ("s2".to_owned(), "BRCA".to_owned()));
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let bad = br#"{"views":[{"id":"a","matrix":"a.csv"}],"labels":"l.csv","extra":1}"#;
        assert!(Manifest::from_json(bad).is_err());
        let dup = br#"{"views":[{"id":"a","matrix":"a.csv"},{"id":"a","matrix":"b.csv"}],"labels":"l.csv"}"#;
        assert!(Manifest::from_json(dup).is_err());
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "sample_id,x,y\ns1,1,2\ns2,3,NA\n").unwrap();
        // second view lists samples in the other order
        fs::write(dir.path().join("b.csv"), "sample_id,z\ns2,5\ns1,6\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "sample_id,label\ns2,beta\ns1,alpha\n").unwrap();
        fs::write(dir.path().join("pa.csv"), "feature_id,subset_id\nx,0\ny,1\n").unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            r#"{"views":[{"id":"a","matrix":"a.csv","partition":"pa.csv"},{"id":"b","matrix":"b.csv"}],"labels":"labels.csv"}"#,
        )
        .unwrap();
        let ds = load_dataset(dir.path().join("manifest.json")).unwrap();
        assert_eq!(ds.class_names, ids(&["alpha", "beta"]));
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.views[1].values[[0, 0]], 6.0);
        assert_eq!(ds.partitions[0].as_ref().unwrap().n_subsets, 2);
        assert!(ds.partitions[1].is_none());

        let out = tempfile::tempdir().unwrap();
        let manifest = write_dataset(out.path(), &ds).unwrap();
        let again = load_dataset(manifest).unwrap();
        assert_eq!(again.labels, ds.labels);
        assert_eq!(again.views[0].sample_ids, ds.views[0].sample_ids);
        assert!(again.views[0].values[[1, 1]].is_nan());
        assert_eq!(again.views[1].values, ds.views[1].values);
    }
}
