//! Observational and twin trajectory datasets, plus JSONL ingestion.
//!
//! Observational records look like
//! `{"x0":[..],"steps":[{"a":0,"x":[..]},..]}` and twin records like
//! `{"x0":[..],"actions":[..],"states":[[..],..]}`, one per line.
//! Numbers are written in shortest round-trip form, so a write followed by a
//! load reproduces every `f64` bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng;

/// Shape of every trajectory in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    /// Horizon `T`.
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Observation dimensions `d_0..=d_T`.
    pub dims: Vec<usize>,
    /// Action-set sizes `|A_1|..=|A_T|`.
    pub action_cardinalities: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_names: Option<Vec<Vec<String>>>,
}

impl SchemaSpec {
    pub fn new(horizon: usize, dims: Vec<usize>, action_cardinalities: Vec<u32>) -> Result<Self> {
        let schema = SchemaSpec { horizon, dims, action_cardinalities, feature_names: None };
        schema.validate()?;
        Ok(schema)
    }

    /// Same dimension `d` at every timestep and `k` actions at every step.
    pub fn uniform(horizon: usize, d: usize, k: u32) -> Result<Self> {
        Self::new(horizon, vec![d; horizon + 1], vec![k; horizon])
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Schema("T must be at least 1".into()));
        }
        if self.dims.len() != self.horizon + 1 {
            return Err(Error::Schema(format!(
                "expected {} dims (d_0..d_T), got {}",
                self.horizon + 1,
                self.dims.len()
            )));
        }
        if self.action_cardinalities.len() != self.horizon {
            return Err(Error::Schema(format!(
                "expected {} action cardinalities, got {}",
                self.horizon,
                self.action_cardinalities.len()
            )));
        }
        if let Some(t) = self.dims.iter().position(|&d| d == 0) {
            return Err(Error::Schema(format!("d_{t} must be at least 1")));
        }
        if let Some(s) = self.action_cardinalities.iter().position(|&k| k == 0) {
            return Err(Error::Schema(format!("|A_{}| must be at least 1", s + 1)));
        }
        if let Some(names) = &self.feature_names {
            if names.len() != self.horizon + 1 {
                return Err(Error::Schema(format!("feature_names must have {} entries", self.horizon + 1)));
            }
            for (t, (list, &d)) in names.iter().zip(&self.dims).enumerate() {
                if list.len() != d {
                    return Err(Error::Schema(format!("feature_names[{t}] has {} names, expected {d}", list.len())));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self, t: usize) -> usize {
        self.dims[t]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: SchemaSpec = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(rename = "a")]
    pub action: u32,
    #[serde(rename = "x")]
    pub observation: Vec<f64>,
}

/// One real-world episode: `X_0, A_1, X_1, .., A_T, X_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedTrajectory {
    pub x0: Vec<f64>,
    pub steps: Vec<Step>,
}

impl ObservedTrajectory {
    /// Observation at timestep `t` (`t = 0` is the initial observation).
    pub fn state(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.x0
        } else {
            &self.steps[t - 1].observation
        }
    }

    pub fn action(&self, s: usize) -> u32 {
        self.steps[s - 1].action
    }

    pub fn actions(&self) -> impl Iterator<Item = u32> + '_ {
        self.steps.iter().map(|s| s.action)
    }
}

/// One simulator episode under a fixed action sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinTrajectory {
    pub x0: Vec<f64>,
    pub actions: Vec<u32>,
    pub states: Vec<Vec<f64>>,
}

impl TwinTrajectory {
    pub fn state(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.x0
        } else {
            &self.states[t - 1]
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: SchemaSpec,
    pub records: Vec<ObservedTrajectory>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinDataset {
    pub schema: SchemaSpec,
    pub actions: Vec<u32>,
    pub records: Vec<TwinTrajectory>,
    pub provenance: Provenance,
}

/// Twin datasets keyed by their action sequence.
#[derive(Debug, Clone, Default)]
pub struct TwinCollection {
    sets: BTreeMap<Vec<u32>, TwinDataset>,
}

impl TwinCollection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, twin: TwinDataset) {
        self.sets.insert(twin.actions.clone(), twin);
    }

    pub fn get(&self, actions: &[u32]) -> Option<&TwinDataset> {
        self.sets.get(actions)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TwinDataset> {
        self.sets.values()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

impl FromIterator<TwinDataset> for TwinCollection {
    fn from_iter<I: IntoIterator<Item = TwinDataset>>(iter: I) -> Self {
        let mut c = TwinCollection::new();
        for t in iter {
            c.insert(t);
        }
        c
    }
}

fn check_vector(v: &[f64], dim: usize, field: &str) -> std::result::Result<(), String> {
    if v.len() != dim {
        return Err(format!("dimension mismatch in {field}: expected {dim}, got {}", v.len()));
    }
    if let Some(j) = v.iter().position(|x| !x.is_finite()) {
        return Err(format!("non-finite value in {field}[{j}]"));
    }
    Ok(())
}

fn check_action(a: u32, s: usize, schema: &SchemaSpec, field: &str) -> std::result::Result<(), String> {
    let k = schema.action_cardinalities[s - 1];
    if a >= k {
        return Err(format!("action id out of range in {field}: {a} (valid ids 0..{})", k - 1));
    }
    Ok(())
}

impl ObservedTrajectory {
    pub fn validate(&self, schema: &SchemaSpec) -> std::result::Result<(), String> {
        if self.steps.len() != schema.horizon {
            return Err(format!("expected {} steps, got {}", schema.horizon, self.steps.len()));
        }
        check_vector(&self.x0, schema.dims[0], "x0")?;
        for (i, step) in self.steps.iter().enumerate() {
            let s = i + 1;
            check_action(step.action, s, schema, &format!("steps[{i}].a"))?;
            check_vector(&step.observation, schema.dims[s], &format!("steps[{i}].x"))?;
        }
        Ok(())
    }
}

impl TwinTrajectory {
    pub fn validate(&self, schema: &SchemaSpec) -> std::result::Result<(), String> {
        if self.actions.len() > schema.horizon {
            return Err(format!("{} actions exceed horizon {}", self.actions.len(), schema.horizon));
        }
        if self.states.len() != self.actions.len() {
            return Err(format!("expected {} states, got {}", self.actions.len(), self.states.len()));
        }
        check_vector(&self.x0, schema.dims[0], "x0")?;
        for (i, (&a, x)) in self.actions.iter().zip(&self.states).enumerate() {
            let s = i + 1;
            check_action(a, s, schema, &format!("actions[{i}]"))?;
            check_vector(x, schema.dims[s], &format!("states[{i}]"))?;
        }
        Ok(())
    }
}

// Field-level decoding so errors can name the offending field.

fn field<'a>(obj: &'a Value, key: &str) -> std::result::Result<&'a Value, String> {
    obj.get(key).ok_or_else(|| format!("missing field {key}"))
}

fn decode_vector(v: &Value, name: &str) -> std::result::Result<Vec<f64>, String> {
    let arr = v.as_array().ok_or_else(|| format!("{name} must be an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(j, x)| match x.as_f64() {
            Some(f) if f.is_finite() => Ok(f),
            Some(_) => Err(format!("non-finite value in {name}[{j}]")),
            None => Err(format!("non-finite or non-numeric value in {name}[{j}]: {x}")),
        })
        .collect()
}

fn decode_action(v: &Value, name: &str) -> std::result::Result<u32, String> {
    v.as_u64()
        .and_then(|a| u32::try_from(a).ok())
        .ok_or_else(|| format!("{name} must be a non-negative integer, got {v}"))
}

fn decode_observed(v: &Value) -> std::result::Result<ObservedTrajectory, String> {
    let x0 = decode_vector(field(v, "x0")?, "x0")?;
    let steps = field(v, "steps")?
        .as_array()
        .ok_or("steps must be an array")?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(Step {
                action: decode_action(field(s, "a")?, &format!("steps[{i}].a"))?,
                observation: decode_vector(field(s, "x")?, &format!("steps[{i}].x"))?,
            })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    Ok(ObservedTrajectory { x0, steps })
}

fn decode_twin(v: &Value) -> std::result::Result<TwinTrajectory, String> {
    let x0 = decode_vector(field(v, "x0")?, "x0")?;
    let actions = field(v, "actions")?
        .as_array()
        .ok_or("actions must be an array")?
        .iter()
        .enumerate()
        .map(|(i, a)| decode_action(a, &format!("actions[{i}]")))
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let states = field(v, "states")?
        .as_array()
        .ok_or("states must be an array")?
        .iter()
        .enumerate()
        .map(|(i, x)| decode_vector(x, &format!("states[{i}]")))
        .collect::<std::result::Result<Vec<_>, String>>()?;
    Ok(TwinTrajectory { x0, actions, states })
}

fn read_records<T>(
    path: &Path,
    decode: impl Fn(&Value) -> std::result::Result<T, String>,
    validate: impl Fn(&T) -> std::result::Result<(), String>,
) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |message: String| Error::Record { path: path.to_path_buf(), line: line_no, message };
        let value: Value = serde_json::from_str(&line).map_err(|e| record_err(format!("malformed record: {e}")))?;
        let record = decode(&value).map_err(record_err)?;
        validate(&record).map_err(record_err)?;
        records.push(record);
    }
    Ok(records)
}

fn provenance_for(path: &Path) -> Provenance {
    Provenance { source: Some(path.display().to_string()), seed: None }
}

/// Loads an observational JSONL file, validating each record against `schema`.
pub fn load_observational(path: impl AsRef<Path>, schema: &SchemaSpec) -> Result<Dataset> {
    let path = path.as_ref();
    schema.validate()?;
    let records = read_records(path, decode_observed, |r| r.validate(schema))?;
    Ok(Dataset { schema: schema.clone(), records, provenance: provenance_for(path) })
}

/// Loads a twin JSONL file whose records must all use `expected_actions`.
pub fn load_twin(path: impl AsRef<Path>, schema: &SchemaSpec, expected_actions: &[u32]) -> Result<TwinDataset> {
    let path = path.as_ref();
    schema.validate()?;
    let records = read_records(path, decode_twin, |r| r.validate(schema))?;
    if let Some(idx) = records.iter().position(|r| r.actions != expected_actions) {
        return Err(Error::InvalidArgument(format!(
            "{}: record {idx} has actions {:?}, expected {:?}",
            path.display(),
            records[idx].actions,
            expected_actions
        )));
    }
    Ok(TwinDataset {
        schema: schema.clone(),
        actions: expected_actions.to_vec(),
        records,
        provenance: provenance_for(path),
    })
}

/// Loads a twin JSONL file holding any number of action sequences and groups
/// the records by sequence, preserving file order within each group.
pub fn load_twin_collection(path: impl AsRef<Path>, schema: &SchemaSpec) -> Result<TwinCollection> {
    let path = path.as_ref();
    schema.validate()?;
    let records = read_records(path, decode_twin, |r| r.validate(schema))?;
    let mut groups: BTreeMap<Vec<u32>, Vec<TwinTrajectory>> = BTreeMap::new();
    for r in records {
        groups.entry(r.actions.clone()).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(actions, records)| TwinDataset {
            schema: schema.clone(),
            actions,
            records,
            provenance: provenance_for(path),
        })
        .collect())
}

fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_observational(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_lines(path.as_ref(), &data.records)
}

pub fn write_twin(path: impl AsRef<Path>, twin: &TwinDataset) -> Result<()> {
    write_lines(path.as_ref(), &twin.records)
}

/// Writes every dataset of a collection into one file, grouped by sequence.
pub fn write_twin_collection(path: impl AsRef<Path>, twins: &TwinCollection) -> Result<()> {
    write_lines(path.as_ref(), twins.iter().flat_map(|t| t.records.iter()))
}

impl Dataset {
    pub fn new(schema: SchemaSpec, records: Vec<ObservedTrajectory>) -> Result<Self> {
        schema.validate()?;
        for (i, r) in records.iter().enumerate() {
            r.validate(&schema).map_err(|message| Error::InvalidArgument(format!("record {i}: {message}")))?;
        }
        Ok(Dataset { schema, records, provenance: Provenance::default() })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn subset(&self, indices: &[usize], tag: &str) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: Provenance {
                source: self.provenance.source.as_ref().map(|s| format!("{s}#{tag}")),
                seed: self.provenance.seed,
            },
        }
    }
}

impl TwinDataset {
    pub fn empty(schema: SchemaSpec, actions: Vec<u32>) -> Self {
        TwinDataset { schema, actions, records: Vec::new(), provenance: Provenance::default() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Splits off a seeded random holdout of `round(fraction * N)` records.
///
/// Returns `(holdout, remainder)`; both keep the input's record order.
pub fn split_holdout(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    if data.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let n = data.len();
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = rng::stream(seed, &[rng::tag::SPLIT]);
    let mut chosen = index::sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    let mut in_holdout = vec![false; n];
    for &i in &chosen {
        in_holdout[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !in_holdout[i]).collect();
    Ok((data.subset(&chosen, "holdout"), data.subset(&rest, "rest")))
}

/// Path helper used by writers that want a sibling manifest or log.
pub fn sibling(path: &Path, file_name: &str) -> PathBuf {
    path.parent().map(|p| p.join(file_name)).unwrap_or_else(|| PathBuf::from(file_name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> SchemaSpec {
        SchemaSpec::new(2, vec![1, 1, 1], vec![25, 25]).unwrap()
    }

    fn write_file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn traj(x0: f64, a: [u32; 2], x: [f64; 2]) -> ObservedTrajectory {
        ObservedTrajectory {
            x0: vec![x0],
            steps: vec![Step { action: a[0], observation: vec![x[0]] }, Step { action: a[1], observation: vec![x[1]] }],
        }
    }

    #[test]
    fn writer_then_loader_roundtrips() {
        let data = Dataset::new(
            schema(),
            vec![
                traj(0.1, [1, 2], [0.3, 1.0 / 3.0]),
                traj(-2.5e-300, [0, 24], [1e300, 7.0]),
                traj(f64::MIN_POSITIVE, [3, 3], [-0.0, 2.0f64.sqrt()]),
            ],
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_observational(f.path(), &data).unwrap();
        let back = load_observational(f.path(), &schema()).unwrap();
        assert_eq!(back.records.len(), 3);
        for (a, b) in data.records.iter().zip(&back.records) {
            assert_eq!(a.x0[0].to_bits(), b.x0[0].to_bits());
            for (sa, sb) in a.steps.iter().zip(&b.steps) {
                assert_eq!(sa.observation[0].to_bits(), sb.observation[0].to_bits());
                assert_eq!(sa.action, sb.action);
            }
        }
    }

    #[test]
    fn action_out_of_range_is_rejected() {
        let f = write_file(&[r#"{"x0":[0],"steps":[{"a":25,"x":[1]},{"a":0,"x":[1]}]}"#]);
        let err = load_observational(f.path(), &schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("action id out of range"), "{msg}");
        assert!(msg.contains("valid ids 0..24"), "{msg}");
        assert!(matches!(err, Error::Record { line: 1, .. }));
    }

    #[test]
    fn non_finite_token_names_line() {
        let f = write_file(&[
            r#"{"x0":[0],"steps":[{"a":1,"x":[1]},{"a":0,"x":[1]}]}"#,
            r#"{"x0":[0],"steps":[{"a":1,"x":[NaN]},{"a":0,"x":[1]}]}"#,
        ]);
        let err = load_observational(f.path(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Record { line: 2, .. }), "{err}");

        let f = write_file(&[r#"{"x0":[0],"steps":[{"a":1,"x":["Infinity"]},{"a":0,"x":[1]}]}"#]);
        let err = load_observational(f.path(), &schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":1:") && msg.contains("steps[0].x[0]"), "{msg}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let f = write_file(&[r#"{"x0":[0,1],"steps":[{"a":1,"x":[1]},{"a":0,"x":[1]}]}"#]);
        let err = load_observational(f.path(), &schema()).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch in x0"));
    }

    #[test]
    fn twin_loader_checks_action_sequence() {
        let ok = r#"{"x0":[0],"actions":[3,3],"states":[[1],[2]]}"#;
        let bad = r#"{"x0":[0],"actions":[3,4],"states":[[1],[2]]}"#;
        let f = write_file(&[ok, ok, ok, ok, ok]);
        assert_eq!(load_twin(f.path(), &schema(), &[3, 3]).unwrap().len(), 5);

        let f = write_file(&[ok, bad]);
        let err = load_twin(f.path(), &schema(), &[3, 3]).unwrap_err();
        assert!(err.to_string().contains("record 1"), "{err}");

        let f = write_file(&[]);
        assert!(load_twin(f.path(), &schema(), &[3, 3]).unwrap().is_empty());
    }

    #[test]
    fn twin_collection_groups_by_sequence() {
        let f = write_file(&[
            r#"{"x0":[0],"actions":[3],"states":[[1]]}"#,
            r#"{"x0":[1],"actions":[3,4],"states":[[1],[2]]}"#,
            r#"{"x0":[2],"actions":[3],"states":[[5]]}"#,
        ]);
        let c = load_twin_collection(f.path(), &schema()).unwrap();
        assert_eq!(c.len(), 2);
        let short = c.get(&[3]).unwrap();
        assert_eq!(short.records[0].x0, vec![0.0]);
        assert_eq!(short.records[1].x0, vec![2.0]);
    }

    #[test]
    fn schema_invariants() {
        assert!(SchemaSpec::new(0, vec![1], vec![]).is_err());
        assert!(SchemaSpec::new(1, vec![1, 0], vec![2]).is_err());
        assert!(SchemaSpec::new(1, vec![1, 1], vec![0]).is_err());
        let mut s = SchemaSpec::uniform(1, 2, 2).unwrap();
        s.feature_names = Some(vec![vec!["a".into(), "b".into()], vec!["a".into()]]);
        assert!(s.validate().is_err());
    }

    fn numbered(n: usize) -> Dataset {
        let records = (0..n).map(|i| traj(i as f64, [0, 0], [0.0, 0.0])).collect();
        Dataset::new(schema(), records).unwrap()
    }

    #[test]
    fn holdout_sizes() {
        let (h, r) = split_holdout(&numbered(100), 0.05, 11).unwrap();
        assert_eq!((h.len(), r.len()), (5, 95));
        let (h, r) = split_holdout(&numbered(2), 0.5, 3).unwrap();
        assert_eq!((h.len(), r.len()), (1, 1));
        assert!(split_holdout(&numbered(2), 1.0, 3).is_err());
        assert!(split_holdout(&numbered(2), 0.0, 3).is_err());
    }

    #[test]
    fn holdout_is_deterministic_partition() {
        let data = numbered(50);
        let (h1, r1) = split_holdout(&data, 0.3, 99).unwrap();
        let (h2, _) = split_holdout(&data, 0.3, 99).unwrap();
        assert_eq!(h1, h2);
        let mut ids: Vec<f64> = h1.records.iter().chain(&r1.records).map(|t| t.x0[0]).collect();
        ids.sort_by(f64::total_cmp);
        assert_eq!(ids, (0..50).map(|i| i as f64).collect::<Vec<_>>());
    }
}
