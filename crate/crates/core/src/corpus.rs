//! Corpus representation: units, JSONL ingestion, validation and pair linking.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Which arm a unit belongs to. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Treatment {
    Control,
    Treated,
}

impl Treatment {
    pub fn is_treated(self) -> bool {
        self == Treatment::Treated
    }

    pub fn as_u8(self) -> u8 {
        self.into()
    }
}

impl TryFrom<u8> for Treatment {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Treatment::Control),
            1 => Ok(Treatment::Treated),
            other => Err(format!("treatment must be 0 or 1, got {other}")),
        }
    }
}

impl From<Treatment> for u8 {
    fn from(t: Treatment) -> u8 {
        match t {
            Treatment::Control => 0,
            Treatment::Treated => 1,
        }
    }
}

/// Pre-treatment covariates: a multi-hot indicator vector or a scalar category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariates {
    Category(u32),
    Vector(Vec<u8>),
}

impl Default for Covariates {
    fn default() -> Self {
        Covariates::Vector(Vec::new())
    }
}

impl Covariates {
    pub fn is_empty_vector(&self) -> bool {
        matches!(self, Covariates::Vector(v) if v.is_empty())
    }

    /// Number of covariate dimensions (1 for a category).
    pub fn dims(&self) -> usize {
        match self {
            Covariates::Category(_) => 1,
            Covariates::Vector(v) => v.len(),
        }
    }
}

/// One text observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: String,
    pub text: String,
    pub treatment: Treatment,
    #[serde(default, skip_serializing_if = "Covariates::is_empty_vector")]
    pub covariates: Covariates,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_counterfactual: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<f64>,
    /// Fields not named above, kept verbatim so that a read/write cycle is lossless.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Unit {
    pub fn new(id: impl Into<String>, text: impl Into<String>, treatment: Treatment) -> Self {
        Unit {
            id: id.into(),
            text: text.into(),
            treatment,
            covariates: Covariates::default(),
            outcome: None,
            outcome_counterfactual: None,
            pair_id: None,
            propensity: None,
            extra: Map::new(),
        }
    }

    pub fn with_outcome(mut self, y: u8) -> Self {
        self.outcome = Some(y);
        self
    }

    pub fn with_covariates(mut self, c: Covariates) -> Self {
        self.covariates = c;
        self
    }

    pub fn with_pair(mut self, source: impl Into<String>) -> Self {
        self.pair_id = Some(source.into());
        self
    }

    /// Potential outcome under the given arm, when known.
    pub fn potential_outcome(&self, arm: Treatment) -> Option<u8> {
        if arm == self.treatment {
            self.outcome
        } else {
            self.outcome_counterfactual
        }
    }

    /// Integer star rating stored in the `star` extra field, if any.
    pub fn star(&self) -> Option<u8> {
        self.extra
            .get("star")
            .and_then(Value::as_u64)
            .and_then(|s| u8::try_from(s).ok())
    }

    fn check(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("outcome", self.outcome),
            ("outcome_counterfactual", self.outcome_counterfactual),
        ] {
            if let Some(y) = v {
                if y > 1 {
                    return Err(format!("{name} must be 0 or 1, got {y}"));
                }
            }
        }
        if let Covariates::Vector(v) = &self.covariates {
            if v.iter().any(|&b| b > 1) {
                return Err("covariate vector entries must be 0 or 1".into());
            }
        }
        if let Some(p) = self.propensity {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("propensity must lie in [0,1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Vector,
    Category,
}

/// Names and arity of the covariate dimensions shared by every unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub kind: CovariateKind,
    pub names: Vec<String>,
}

impl CovariateSchema {
    pub fn vector(names: Vec<String>) -> Self {
        CovariateSchema {
            kind: CovariateKind::Vector,
            names,
        }
    }

    pub fn category() -> Self {
        CovariateSchema {
            kind: CovariateKind::Category,
            names: vec!["category".into()],
        }
    }

    pub fn dims(&self) -> usize {
        self.names.len()
    }

    fn infer(units: &[Unit]) -> Result<Self> {
        let Some(first) = units.first() else {
            return Ok(CovariateSchema::vector(Vec::new()));
        };
        let schema = match &first.covariates {
            Covariates::Category(_) => CovariateSchema::category(),
            Covariates::Vector(v) => {
                CovariateSchema::vector((0..v.len()).map(|i| format!("c{i}")).collect())
            }
        };
        for u in units {
            let same_kind = matches!(
                (&u.covariates, schema.kind),
                (Covariates::Category(_), CovariateKind::Category)
                    | (Covariates::Vector(_), CovariateKind::Vector)
            );
            if !same_kind || u.covariates.dims() != schema.dims() {
                return Err(Error::CovariateShape {
                    unit: u.id.clone(),
                    expected: schema.dims(),
                    found: u.covariates.dims(),
                });
            }
        }
        Ok(schema)
    }
}

/// An ordered, id-unique collection of units.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    units: Vec<Unit>,
    schema: CovariateSchema,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness and covariate shape.
    pub fn new(units: Vec<Unit>) -> Result<Self> {
        let schema = CovariateSchema::infer(&units)?;
        Self::with_schema(units, schema)
    }

    pub fn with_schema(units: Vec<Unit>, schema: CovariateSchema) -> Result<Self> {
        let mut index = HashMap::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if index.insert(u.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(u.id.clone()));
            }
            if u.covariates.dims() != schema.dims() {
                return Err(Error::CovariateShape {
                    unit: u.id.clone(),
                    expected: schema.dims(),
                    found: u.covariates.dims(),
                });
            }
        }
        Ok(Corpus {
            units,
            schema,
            index,
        })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn into_units(self) -> Vec<Unit> {
        self.units
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Unit> {
        self.index.get(id).map(|&i| &self.units[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn arm(&self, t: Treatment) -> impl Iterator<Item = &Unit> {
        self.units.iter().filter(move |u| u.treatment == t)
    }

    /// Rebuilds the corpus after mutating units in place.
    pub fn map_units(self, f: impl FnMut(&mut Unit)) -> Result<Self> {
        let schema = self.schema;
        let mut units = self.units;
        units.iter_mut().for_each(f);
        Corpus::with_schema(units, schema)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut units = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::MalformedRecord {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let unit: Unit = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: lineno,
                message: e.to_string(),
            })?;
            unit.check().map_err(|message| Error::MalformedRecord {
                line: lineno,
                message,
            })?;
            if !seen.insert(unit.id.clone()) {
                return Err(Error::DuplicateId(unit.id));
            }
            units.push(unit);
        }
        Corpus::new(units)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for u in &self.units {
            serde_json::to_writer(&mut w, u)?;
            w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Jsonl,
}

/// Reads a corpus file, preserving record order.
pub fn ingest_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    match format {
        CorpusFormat::Jsonl => {
            let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            Corpus::from_reader(f)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    Observational,
    SyntheticGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub unit_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mode: ValidationMode,
    pub valid: bool,
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

/// Checks that outcome fields are consistent with what the mode may observe.
/// Content problems are reported, never raised.
pub fn validate_corpus(corpus: &Corpus, mode: ValidationMode) -> ValidationReport {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let issue = |u: &Unit, m: &str| Issue {
        unit_id: u.id.clone(),
        message: m.to_string(),
    };
    for u in corpus.units() {
        match mode {
            ValidationMode::Observational => match (u.treatment, u.outcome) {
                (Treatment::Control, None) => errors.push(issue(u, "control unit has no outcome")),
                (Treatment::Treated, Some(_)) => warnings.push(issue(
                    u,
                    "treated unit carries an outcome; trainers ignore it",
                )),
                _ => {}
            },
            ValidationMode::SyntheticGroundTruth => {
                if u.outcome.is_none() {
                    errors.push(issue(u, "missing outcome"));
                }
                if u.outcome_counterfactual.is_none() {
                    errors.push(issue(u, "missing outcome_counterfactual"));
                }
            }
        }
    }
    ValidationReport {
        mode,
        valid: errors.is_empty(),
        errors,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionTask {
    AngerTransformation,
    Rephrasing,
    StarSampling,
    TopVsRandomComment,
}

/// Links a control unit `W` to its transformed counterpart `g(W)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionPair {
    pub source_id: String,
    pub transformed_id: String,
    /// Read from the treated unit's `task` field when present.
    pub task: Option<InterventionTask>,
}

/// One pair per treated unit, in corpus order.
pub fn link_pairs(corpus: &Corpus) -> Result<Vec<InterventionPair>> {
    let mut pairs = Vec::new();
    for u in corpus.arm(Treatment::Treated) {
        let pid = u
            .pair_id
            .as_ref()
            .ok_or_else(|| Error::MissingPairId(u.id.clone()))?;
        let src = corpus.get(pid).ok_or_else(|| Error::DanglingPair {
            unit: u.id.clone(),
            pair_id: pid.clone(),
        })?;
        if src.treatment != Treatment::Control {
            return Err(Error::NonControlSource {
                unit: u.id.clone(),
                source_id: pid.clone(),
            });
        }
        let task = u
            .extra
            .get("task")
            .and_then(|v| serde_json::from_value(v.clone()).ok());
        pairs.push(InterventionPair {
            source_id: pid.clone(),
            transformed_id: u.id.clone(),
            task,
        });
    }
    Ok(pairs)
}

/// True when every treated unit has a pair_id (a transformation-built corpus).
pub fn is_paired(corpus: &Corpus) -> bool {
    let mut any = false;
    for u in corpus.arm(Treatment::Treated) {
        any = true;
        if u.pair_id.is_none() {
            return false;
        }
    }
    any
}

/// Distinct covariate values in first-seen order; used as propensity groups.
pub fn covariate_groups(corpus: &Corpus) -> Vec<Covariates> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for u in corpus.units() {
        let key = serde_json::to_string(&u.covariates).expect("covariates serialize");
        if seen.insert(key) {
            out.push(u.covariates.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Corpus> {
        Corpus::from_reader(s.as_bytes())
    }

    #[test]
    fn parses_fixture_line() {
        let c = parse(r#"{"id":"a","text":"hi","treatment":0,"outcome":1,"covariates":[0,1]}"#)
            .unwrap();
        let u = &c.units()[0];
        assert_eq!(u.id, "a");
        assert_eq!(u.treatment, Treatment::Control);
        assert_eq!(u.outcome, Some(1));
        assert_eq!(u.covariates, Covariates::Vector(vec![0, 1]));
        assert_eq!(c.schema().dims(), 2);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse(
            "{\"id\":\"a\",\"text\":\"x\",\"treatment\":0}\n{\"id\":\"a\",\"text\":\"y\",\"treatment\":1}\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("{\"id\":\"a\",\"text\":\"x\",\"treatment\":0}\n{\"id\":\"b\",\"treatment\":7,\"text\":\"\"}\n")
            .unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 2, .. }), "{err}");
        let err = parse("{\"id\":\"a\",\"text\":\"x\",\"treatment\":0,\"propensity\":1.5}").unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 1, .. }));
        let err = parse("not json").unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 1, .. }));
    }

    #[test]
    fn mixed_covariate_shapes_rejected() {
        let err = parse(
            "{\"id\":\"a\",\"text\":\"x\",\"treatment\":0,\"covariates\":[1]}\n{\"id\":\"b\",\"text\":\"x\",\"treatment\":0,\"covariates\":[1,0]}",
        )
        .unwrap_err();
        assert!(matches!(err, Error::CovariateShape { .. }));
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let line = r#"{"id":"a","text":"hi","treatment":0,"covariates":3,"star":5,"meta":{"k":[1,2]}}"#;
        let c = parse(line).unwrap();
        assert_eq!(c.units()[0].star(), Some(5));
        assert_eq!(c.to_jsonl().trim(), line);
    }

    #[test]
    fn observational_validation() {
        let ok = Corpus::new(vec![
            Unit::new("a", "x", Treatment::Control).with_outcome(1),
            Unit::new("b", "y", Treatment::Treated).with_pair("a"),
        ])
        .unwrap();
        assert!(validate_corpus(&ok, ValidationMode::Observational).valid);

        let bad = Corpus::new(vec![
            Unit::new("a", "x", Treatment::Control),
            Unit::new("b", "y", Treatment::Treated).with_outcome(0),
        ])
        .unwrap();
        let r = validate_corpus(&bad, ValidationMode::Observational);
        assert!(!r.valid);
        assert_eq!(r.errors[0].unit_id, "a");
        assert_eq!(r.warnings[0].unit_id, "b");
    }

    #[test]
    fn synthetic_validation_needs_counterfactual() {
        let c = Corpus::new(vec![Unit::new("a", "x", Treatment::Control).with_outcome(1)]).unwrap();
        let r = validate_corpus(&c, ValidationMode::SyntheticGroundTruth);
        assert!(!r.valid);
        assert!(r.errors[0].message.contains("outcome_counterfactual"));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["errors"][0]["unit_id"], "a");
    }

    #[test]
    fn link_pairs_cases() {
        let c = Corpus::new(vec![
            Unit::new("a", "x", Treatment::Control),
            Unit::new("b", "y", Treatment::Treated).with_pair("a"),
        ])
        .unwrap();
        let pairs = link_pairs(&c).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].source_id.as_str(), pairs[0].transformed_id.as_str()), ("a", "b"));

        let dangling = Corpus::new(vec![
            Unit::new("a", "x", Treatment::Control),
            Unit::new("b", "y", Treatment::Treated).with_pair("zzz"),
        ])
        .unwrap();
        assert!(matches!(link_pairs(&dangling), Err(Error::DanglingPair { .. })));

        let non_control = Corpus::new(vec![
            Unit::new("a", "x", Treatment::Treated).with_pair("b"),
            Unit::new("b", "y", Treatment::Treated).with_pair("a"),
        ])
        .unwrap();
        assert!(matches!(link_pairs(&non_control), Err(Error::NonControlSource { .. })));
    }
}
