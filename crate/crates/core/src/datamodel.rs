//! Generation logs and the views the rest of the crate consumes.
//!
//! A dataset is a set of answer strings recorded per (model, problem) pair,
//! together with one gold answer per problem. Datasets are immutable after
//! loading; every derived view (counts, empirical distributions) borrows from
//! the dataset or copies out of it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Reserved answer string for generations whose answer could not be parsed.
/// It is never accepted as a gold answer, so it can never count as correct.
pub const UNPARSEABLE: &str = "UNPARSEABLE";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("problem {problem}: conflicting gold answers {first:?} and {second:?}")]
    GoldConflict {
        problem: String,
        first: String,
        second: String,
    },
    #[error("problem {0}: no gold answer given")]
    MissingGold(String),
    #[error("problem {0}: gold answer is the reserved UNPARSEABLE marker")]
    UnparseableGold(String),
    #[error("problem {problem}: gold {gold:?} is not in the declared answer domain")]
    GoldOutsideDomain { problem: String, gold: String },
    #[error("answer string is empty after trimming")]
    EmptyAnswer,
    #[error("no records for model {model:?} on problem {problem:?}")]
    EmptySelection { model: String, problem: String },
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("unknown problem {0:?}")]
    UnknownProblem(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Canonical answer string. Construction trims surrounding whitespace; no
/// other normalisation is applied.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnswerKey(Arc<str>);

impl AnswerKey {
    pub fn new(raw: &str) -> Result<Self, DataError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(DataError::EmptyAnswer);
        }
        Ok(AnswerKey(Arc::from(trimmed)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_unparseable(&self) -> bool {
        &*self.0 == UNPARSEABLE
    }
}

impl fmt::Display for AnswerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for AnswerKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for AnswerKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        AnswerKey::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// One recorded generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRecord {
    pub model: String,
    pub problem: String,
    pub answer: AnswerKey,
    pub tokens: u64,
}

/// A problem with its gold answer and an optional declared answer domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemSpec {
    pub id: String,
    pub gold: AnswerKey,
    pub domain: Option<BTreeSet<AnswerKey>>,
}

impl ProblemSpec {
    pub fn new(
        id: String,
        gold: AnswerKey,
        domain: Option<BTreeSet<AnswerKey>>,
    ) -> Result<Self, DataError> {
        if gold.is_unparseable() {
            return Err(DataError::UnparseableGold(id));
        }
        if let Some(dom) = &domain {
            if !dom.contains(&gold) {
                return Err(DataError::GoldOutsideDomain {
                    problem: id,
                    gold: gold.to_string(),
                });
            }
        }
        Ok(ProblemSpec { id, gold, domain })
    }
}

/// Multiset of answers. Stored counts are always >= 1 and `n` is their sum.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnswerCounts {
    counts: BTreeMap<AnswerKey, u64>,
    n: u64,
}

impl AnswerCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_answers<I: IntoIterator<Item = AnswerKey>>(answers: I) -> Self {
        let mut c = Self::new();
        for a in answers {
            c.add(a);
        }
        c
    }

    pub fn add(&mut self, answer: AnswerKey) {
        *self.counts.entry(answer).or_insert(0) += 1;
        self.n += 1;
    }

    /// Number of distinct answers observed.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    pub fn get(&self, answer: &AnswerKey) -> u64 {
        self.counts.get(answer).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AnswerKey, u64)> {
        self.counts.iter().map(|(k, &v)| (k, v))
    }

    /// Counts ordered by (count desc, key asc). The first entry is the
    /// designated plurality answer: ties at the top go to the
    /// lexicographically smallest key, which makes the designation
    /// deterministic.
    pub fn sorted_desc(&self) -> Vec<(&AnswerKey, u64)> {
        let mut v: Vec<(&AnswerKey, u64)> = self.iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// All answers tied for the highest count, in key order.
    pub fn leaders(&self) -> Vec<&AnswerKey> {
        let top = self.counts.values().copied().max().unwrap_or(0);
        self.counts
            .iter()
            .filter(|(_, &c)| c == top)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Empirical answer distribution for one (model, problem) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    probs: BTreeMap<AnswerKey, f64>,
}

impl EmpiricalDist {
    fn from_counts(counts: &AnswerCounts) -> Self {
        let n = counts.total() as f64;
        let probs = counts
            .iter()
            .map(|(k, c)| (k.clone(), c as f64 / n))
            .collect();
        EmpiricalDist { probs }
    }

    pub fn prob(&self, answer: &AnswerKey) -> f64 {
        self.probs.get(answer).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AnswerKey, f64)> {
        self.probs.iter().map(|(k, &p)| (k, p))
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// What `load_dataset` saw while reading, for ingest reports.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub lines: usize,
    pub records: usize,
    /// Lines that carried no token count; such records default to 0 tokens.
    pub missing_tokens: usize,
}

/// Immutable collection of generation records plus per-problem gold answers.
///
/// Models and problems keep their first-appearance order, so reloading the
/// same file reproduces the same dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationDataset {
    models: Vec<String>,
    problems: Vec<ProblemSpec>,
    model_index: BTreeMap<String, usize>,
    problem_index: BTreeMap<String, usize>,
    // records[model][problem] in index order
    records: Vec<Vec<Vec<(AnswerKey, u64)>>>,
    report: LoadReport,
}

#[derive(Deserialize)]
struct RawRecord {
    model: String,
    problem: String,
    answer: String,
    #[serde(default)]
    tokens: Option<u64>,
    #[serde(default)]
    gold: Option<String>,
}

#[derive(Deserialize)]
struct RawProblem {
    problem: String,
    gold: String,
    #[serde(default)]
    domain: Option<Vec<String>>,
}

impl GenerationDataset {
    /// Reads a JSONL generation log. Each line holds `model`, `problem`,
    /// `answer`, optional `tokens` and optional `gold`. The first gold seen
    /// for a problem wins; later lines must agree.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::load_with_problems(path, None)
    }

    /// Like [`GenerationDataset::load`], with golds (and optional answer
    /// domains) taken from a separate JSONL problems file. Golds from the
    /// problems file and inline golds must agree.
    pub fn load_with_problems(
        path: &Path,
        problems_path: Option<&Path>,
    ) -> Result<Self, DataError> {
        let mut builder = DatasetBuilder::new();
        if let Some(pp) = problems_path {
            let reader = BufReader::new(File::open(pp)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let malformed = |e: String| DataError::Malformed {
                    line: i + 1,
                    msg: e,
                };
                let raw: RawProblem =
                    serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
                let gold = AnswerKey::new(&raw.gold).map_err(|e| malformed(e.to_string()))?;
                let domain = match raw.domain {
                    None => None,
                    Some(d) => {
                        let mut set = BTreeSet::new();
                        for s in d {
                            set.insert(AnswerKey::new(&s).map_err(|e| malformed(e.to_string()))?);
                        }
                        Some(set)
                    }
                };
                builder.declare(&raw.problem, gold, domain)?;
            }
        }

        let reader = BufReader::new(File::open(path)?);
        let mut lines = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            lines += 1;
            let malformed = |e: String| DataError::Malformed {
                line: i + 1,
                msg: e,
            };
            let raw: RawRecord =
                serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            let answer = AnswerKey::new(&raw.answer).map_err(|e| malformed(e.to_string()))?;
            let gold = match raw.gold {
                None => None,
                Some(g) => Some(AnswerKey::new(&g).map_err(|e| malformed(e.to_string()))?),
            };
            builder.push(&raw.model, &raw.problem, answer, raw.tokens, gold)?;
        }
        builder.finish(lines)
    }

    /// Builds a dataset directly from records and per-problem golds; used by
    /// tests and synthetic experiments.
    pub fn from_records(
        records: Vec<GenerationRecord>,
        golds: Vec<(String, AnswerKey)>,
    ) -> Result<Self, DataError> {
        let mut builder = DatasetBuilder::new();
        for (problem, gold) in golds {
            builder.declare(&problem, gold, None)?;
        }
        let n = records.len();
        for r in records {
            builder.push(&r.model, &r.problem, r.answer, Some(r.tokens), None)?;
        }
        builder.finish(n)
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn problems(&self) -> &[ProblemSpec] {
        &self.problems
    }

    pub fn report(&self) -> &LoadReport {
        &self.report
    }

    pub fn model_index(&self, model: &str) -> Result<usize, DataError> {
        self.model_index
            .get(model)
            .copied()
            .ok_or_else(|| DataError::UnknownModel(model.to_string()))
    }

    pub fn problem_index(&self, problem: &str) -> Result<usize, DataError> {
        self.problem_index
            .get(problem)
            .copied()
            .ok_or_else(|| DataError::UnknownProblem(problem.to_string()))
    }

    pub fn gold(&self, problem: &str) -> Result<&AnswerKey, DataError> {
        Ok(&self.problems[self.problem_index(problem)?].gold)
    }

    /// Recorded (answer, tokens) pairs for one (model, problem) pair, in file
    /// order. Errors if the pair has no records.
    pub fn records_for(
        &self,
        model: &str,
        problem: &str,
    ) -> Result<&[(AnswerKey, u64)], DataError> {
        let mi = self.model_index(model)?;
        let pi = self.problem_index(problem)?;
        let recs = &self.records[mi][pi];
        if recs.is_empty() {
            return Err(DataError::EmptySelection {
                model: model.to_string(),
                problem: problem.to_string(),
            });
        }
        Ok(recs)
    }

    /// Answer counts for one (model, problem) pair.
    pub fn counts_of(&self, model: &str, problem: &str) -> Result<AnswerCounts, DataError> {
        let recs = self.records_for(model, problem)?;
        Ok(AnswerCounts::from_answers(
            recs.iter().map(|(a, _)| a.clone()),
        ))
    }

    /// Empirical answer distribution for one (model, problem) pair.
    pub fn empirical_dist(&self, model: &str, problem: &str) -> Result<EmpiricalDist, DataError> {
        Ok(EmpiricalDist::from_counts(&self.counts_of(model, problem)?))
    }

    /// Fraction of records for (model, problem) that hit the gold answer.
    pub fn gold_prob(&self, model: &str, problem: &str) -> Result<f64, DataError> {
        let gold = self.gold(problem)?.clone();
        Ok(self.empirical_dist(model, problem)?.prob(&gold))
    }

    /// Copy of the dataset with all UNPARSEABLE records removed. Problems and
    /// models are kept even if they lose all records.
    pub fn without_unparseable(&self) -> GenerationDataset {
        let mut out = self.clone();
        let mut removed = 0usize;
        for per_model in &mut out.records {
            for recs in per_model.iter_mut() {
                let before = recs.len();
                recs.retain(|(a, _)| !a.is_unparseable());
                removed += before - recs.len();
            }
        }
        out.report.records -= removed;
        out
    }
}

struct PendingProblem {
    id: String,
    gold: Option<AnswerKey>,
    domain: Option<BTreeSet<AnswerKey>>,
}

struct DatasetBuilder {
    models: Vec<String>,
    problems: Vec<PendingProblem>,
    model_index: BTreeMap<String, usize>,
    problem_index: BTreeMap<String, usize>,
    records: Vec<Vec<Vec<(AnswerKey, u64)>>>,
    missing_tokens: usize,
    record_count: usize,
}

impl DatasetBuilder {
    fn new() -> Self {
        DatasetBuilder {
            models: Vec::new(),
            problems: Vec::new(),
            model_index: BTreeMap::new(),
            problem_index: BTreeMap::new(),
            records: Vec::new(),
            missing_tokens: 0,
            record_count: 0,
        }
    }

    fn problem_entry(&mut self, id: &str) -> usize {
        match self.problem_index.get(id) {
            Some(&i) => i,
            None => {
                let i = self.problems.len();
                self.problem_index.insert(id.to_string(), i);
                self.problems.push(PendingProblem {
                    id: id.to_string(),
                    gold: None,
                    domain: None,
                });
                for per_model in &mut self.records {
                    per_model.push(Vec::new());
                }
                i
            }
        }
    }

    fn set_gold(&mut self, pi: usize, gold: AnswerKey) -> Result<(), DataError> {
        match &self.problems[pi].gold {
            None => {
                self.problems[pi].gold = Some(gold);
                Ok(())
            }
            Some(existing) if *existing == gold => Ok(()),
            Some(existing) => Err(DataError::GoldConflict {
                problem: self.problems[pi].id.clone(),
                first: existing.to_string(),
                second: gold.to_string(),
            }),
        }
    }

    fn declare(
        &mut self,
        id: &str,
        gold: AnswerKey,
        domain: Option<BTreeSet<AnswerKey>>,
    ) -> Result<(), DataError> {
        let pi = self.problem_entry(id);
        self.set_gold(pi, gold)?;
        if domain.is_some() {
            self.problems[pi].domain = domain;
        }
        Ok(())
    }

    fn push(
        &mut self,
        model: &str,
        problem: &str,
        answer: AnswerKey,
        tokens: Option<u64>,
        gold: Option<AnswerKey>,
    ) -> Result<(), DataError> {
        let mi = match self.model_index.get(model) {
            Some(&i) => i,
            None => {
                let i = self.models.len();
                self.model_index.insert(model.to_string(), i);
                self.models.push(model.to_string());
                self.records.push(vec![Vec::new(); self.problems.len()]);
                i
            }
        };
        let pi = self.problem_entry(problem);
        if let Some(g) = gold {
            self.set_gold(pi, g)?;
        }
        if tokens.is_none() {
            self.missing_tokens += 1;
        }
        self.records[mi][pi].push((answer, tokens.unwrap_or(0)));
        self.record_count += 1;
        Ok(())
    }

    fn finish(self, lines: usize) -> Result<GenerationDataset, DataError> {
        let mut problems = Vec::with_capacity(self.problems.len());
        for p in self.problems {
            let gold = p.gold.ok_or_else(|| DataError::MissingGold(p.id.clone()))?;
            problems.push(ProblemSpec::new(p.id, gold, p.domain)?);
        }
        let report = LoadReport {
            lines,
            records: self.record_count,
            missing_tokens: self.missing_tokens,
        };
        Ok(GenerationDataset {
            models: self.models,
            problems,
            model_index: self.model_index,
            problem_index: self.problem_index,
            records: self.records,
            report,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn key(s: &str) -> AnswerKey {
        AnswerKey::new(s).unwrap()
    }

    fn write_jsonl(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_minimal_file() {
        let f = write_jsonl(&[
            r#"{"model":"m1","problem":"p1","answer":"42","tokens":7,"gold":"42"}"#,
        ]);
        let ds = GenerationDataset::load(f.path()).unwrap();
        assert_eq!(ds.models(), &["m1".to_string()]);
        assert_eq!(ds.problems().len(), 1);
        assert_eq!(ds.gold("p1").unwrap(), &key("42"));
        assert_eq!(ds.report().records, 1);
        assert_eq!(ds.report().missing_tokens, 0);
        let dist = ds.empirical_dist("m1", "p1").unwrap();
        assert_eq!(dist.prob(&key("42")), 1.0);
    }

    #[test]
    fn empty_answer_fails_with_line_number() {
        let f = write_jsonl(&[
            r#"{"model":"m1","problem":"p1","answer":"42","gold":"42"}"#,
            r#"{"model":"m1","problem":"p1","answer":"   ","gold":"42"}"#,
        ]);
        let err = GenerationDataset::load(f.path()).unwrap_err();
        match err {
            DataError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Malformed, got {other:?}"),
        }
    }

    #[test]
    fn conflicting_golds_fail() {
        let f = write_jsonl(&[
            r#"{"model":"m1","problem":"p1","answer":"1","gold":"1"}"#,
            r#"{"model":"m1","problem":"p1","answer":"2","gold":"2"}"#,
        ]);
        let err = GenerationDataset::load(f.path()).unwrap_err();
        assert!(matches!(err, DataError::GoldConflict { .. }));
    }

    #[test]
    fn missing_gold_fails() {
        let f = write_jsonl(&[r#"{"model":"m1","problem":"p1","answer":"1"}"#]);
        let err = GenerationDataset::load(f.path()).unwrap_err();
        assert!(matches!(err, DataError::MissingGold(p) if p == "p1"));
    }

    #[test]
    fn gold_may_arrive_late() {
        let f = write_jsonl(&[
            r#"{"model":"m1","problem":"p1","answer":"1"}"#,
            r#"{"model":"m1","problem":"p1","answer":"2","gold":"2"}"#,
        ]);
        let ds = GenerationDataset::load(f.path()).unwrap();
        assert_eq!(ds.gold("p1").unwrap(), &key("2"));
    }

    #[test]
    fn unparseable_gold_rejected() {
        let f = write_jsonl(&[
            r#"{"model":"m1","problem":"p1","answer":"1","gold":"UNPARSEABLE"}"#,
        ]);
        let err = GenerationDataset::load(f.path()).unwrap_err();
        assert!(matches!(err, DataError::UnparseableGold(_)));
    }

    #[test]
    fn problems_file_supplies_gold_and_domain() {
        let probs = write_jsonl(&[r#"{"problem":"p1","gold":"3","domain":["1","2","3"]}"#]);
        let recs = write_jsonl(&[
            r#"{"model":"m1","problem":"p1","answer":"3"}"#,
            r#"{"model":"m1","problem":"p1","answer":"1"}"#,
        ]);
        let ds = GenerationDataset::load_with_problems(recs.path(), Some(probs.path())).unwrap();
        assert_eq!(ds.gold("p1").unwrap(), &key("3"));
        assert!(ds.problems()[0].domain.is_some());
        assert_eq!(ds.report().missing_tokens, 2);
    }

    #[test]
    fn gold_outside_domain_rejected() {
        let probs = write_jsonl(&[r#"{"problem":"p1","gold":"9","domain":["1","2"]}"#]);
        let recs = write_jsonl(&[r#"{"model":"m1","problem":"p1","answer":"1"}"#]);
        let err =
            GenerationDataset::load_with_problems(recs.path(), Some(probs.path())).unwrap_err();
        assert!(matches!(err, DataError::GoldOutsideDomain { .. }));
    }

    #[test]
    fn counts_and_dist_match_by_hand() {
        let f = write_jsonl(&[
            r#"{"model":"m1","problem":"p1","answer":"a","gold":"a"}"#,
            r#"{"model":"m1","problem":"p1","answer":"a"}"#,
            r#"{"model":"m1","problem":"p1","answer":"b"}"#,
            r#"{"model":"m1","problem":"p1","answer":"a"}"#,
        ]);
        let ds = GenerationDataset::load(f.path()).unwrap();
        let counts = ds.counts_of("m1", "p1").unwrap();
        assert_eq!(counts.total(), 4);
        assert_eq!(counts.distinct(), 2);
        assert_eq!(counts.get(&key("a")), 3);
        assert_eq!(counts.get(&key("b")), 1);
        let dist = ds.empirical_dist("m1", "p1").unwrap();
        assert_eq!(dist.prob(&key("a")), 0.75);
        assert_eq!(dist.prob(&key("b")), 0.25);
        assert_eq!(dist.prob(&key("zzz")), 0.0);
    }

    #[test]
    fn empty_selection_is_an_error() {
        let f = write_jsonl(&[
            r#"{"model":"m1","problem":"p1","answer":"a","gold":"a"}"#,
            r#"{"model":"m2","problem":"p2","answer":"b","gold":"b"}"#,
        ]);
        let ds = GenerationDataset::load(f.path()).unwrap();
        assert!(matches!(
            ds.counts_of("m1", "p2"),
            Err(DataError::EmptySelection { .. })
        ));
        assert!(matches!(
            ds.counts_of("nope", "p1"),
            Err(DataError::UnknownModel(_))
        ));
    }

    #[test]
    fn reload_reproduces_dataset() {
        let f = write_jsonl(&[
            r#"{"model":"m2","problem":"p2","answer":"y","gold":"y","tokens":3}"#,
            r#"{"model":"m1","problem":"p1","answer":"x","gold":"x","tokens":5}"#,
            r#"{"model":"m1","problem":"p2","answer":"y"}"#,
        ]);
        let a = GenerationDataset::load(f.path()).unwrap();
        let b = GenerationDataset::load(f.path()).unwrap();
        assert_eq!(a, b);
        // first-appearance order preserved
        assert_eq!(a.models(), &["m2".to_string(), "m1".to_string()]);
        assert_eq!(a.problems()[0].id, "p2");
    }

    #[test]
    fn plurality_designation_breaks_ties_lexicographically() {
        let counts = AnswerCounts::from_answers(vec![key("b"), key("a"), key("a"), key("b")]);
        let sorted = counts.sorted_desc();
        assert_eq!(sorted[0].0, &key("a"));
        assert_eq!(counts.leaders(), vec![&key("a"), &key("b")]);
    }

    #[test]
    fn unparseable_filter_drops_only_unparseable() {
        let f = write_jsonl(&[
            r#"{"model":"m1","problem":"p1","answer":"a","gold":"a"}"#,
            r#"{"model":"m1","problem":"p1","answer":"UNPARSEABLE"}"#,
            r#"{"model":"m1","problem":"p1","answer":"b"}"#,
        ]);
        let ds = GenerationDataset::load(f.path()).unwrap();
        assert_eq!(ds.gold_prob("m1", "p1").unwrap(), 1.0 / 3.0);
        let filtered = ds.without_unparseable();
        assert_eq!(filtered.gold_prob("m1", "p1").unwrap(), 0.5);
        assert_eq!(filtered.report().records, 2);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_answer() -> impl Strategy<Value = String> {
            prop_oneof![
                3 => "[a-e]{1,2}",
                1 => Just(UNPARSEABLE.to_string()),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            // Dropping UNPARSEABLE records can only help the gold answer.
            #[test]
            fn unparseable_removal_never_hurts_gold(
                answers in proptest::collection::vec(arb_answer(), 1..40)
            ) {
                prop_assume!(answers.iter().any(|a| a != UNPARSEABLE));
                let records: Vec<GenerationRecord> = answers
                    .iter()
                    .map(|a| GenerationRecord {
                        model: "m".into(),
                        problem: "p".into(),
                        answer: AnswerKey::new(a).unwrap(),
                        tokens: 1,
                    })
                    .collect();
                let ds = GenerationDataset::from_records(
                    records,
                    vec![("p".into(), AnswerKey::new("a").unwrap())],
                )
                .unwrap();
                let before = ds.gold_prob("m", "p").unwrap();
                let after = ds.without_unparseable().gold_prob("m", "p").unwrap();
                prop_assert!(after >= before - 1e-15);
            }

            // The empirical distribution is the exact normalisation of counts.
            #[test]
            fn dist_matches_counts(
                answers in proptest::collection::vec("[a-d]", 1..30)
            ) {
                let keys: Vec<AnswerKey> =
                    answers.iter().map(|a| AnswerKey::new(a).unwrap()).collect();
                let counts = AnswerCounts::from_answers(keys.clone());
                let records: Vec<GenerationRecord> = keys
                    .iter()
                    .map(|a| GenerationRecord {
                        model: "m".into(),
                        problem: "p".into(),
                        answer: a.clone(),
                        tokens: 0,
                    })
                    .collect();
                let ds = GenerationDataset::from_records(
                    records,
                    vec![("p".into(), AnswerKey::new("a").unwrap())],
                )
                .unwrap();
                let dist = ds.empirical_dist("m", "p").unwrap();
                let total: f64 = dist.iter().map(|(_, p)| p).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                for (k, c) in counts.iter() {
                    prop_assert_eq!(dist.prob(k), c as f64 / counts.total() as f64);
                }
            }
        }
    }
}
