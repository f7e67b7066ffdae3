//! Recasting of the SICK NLI corpus into relation-annotated paraphrase pairs.
//!
//! SICK ships tab-separated records with labels in both directions. Only pairs
//! from meaning-preserving transformation groups are used. The official
//! release has no group column, so the group must come either from a
//! `transformation_group` column or from a side table keyed by `pair_ID`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_json, write_jsonl};
use crate::oracle::{balance_corpus, derive_relation, BalanceMode};
use crate::types::{AnnotatedPair, NliLabel, Relation, SentencePair, Source};

/// Transformation groups whose pairs preserve meaning.
pub const MEANING_PRESERVING_GROUPS: [&str; 5] = ["S1aS2a", "S1aS2b", "S1bS2a", "S1bS2b", "S1aS1b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    /// SICK's TRIAL split is the development split.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "dev" | "trial" | "validation" => Ok(Split::Dev),
            "test" | "test_annotated" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SickRecord {
    pub pair_id: String,
    pub sentence_a: String,
    pub sentence_b: String,
    pub label_ab: NliLabel,
    pub label_ba: NliLabel,
    pub transformation_group: String,
    pub split: Split,
}

/// A record that did not enter the paraphrase data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub pair_id: String,
    pub transformation_group: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecastCounts {
    #[serde(rename = "EQ")]
    pub eq: usize,
    #[serde(rename = "FWD")]
    pub fwd: usize,
    #[serde(rename = "REV")]
    pub rev: usize,
    #[serde(rename = "Others")]
    pub others: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitData {
    /// EQ, FWD and REV pairs, each original followed by its reversal.
    pub pairs: Vec<AnnotatedPair>,
    /// NEUTRAL and INVALID pairs.
    pub others: Vec<AnnotatedPair>,
}

impl SplitData {
    pub fn counts(&self) -> RecastCounts {
        let mut c = RecastCounts { others: self.others.len(), ..Default::default() };
        for p in &self.pairs {
            match p.relation {
                Relation::Eq => c.eq += 1,
                Relation::Fwd => c.fwd += 1,
                Relation::Rev => c.rev += 1,
                _ => {}
            }
        }
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecastDataset {
    pub splits: BTreeMap<Split, SplitData>,
    pub rejects: Vec<Reject>,
    /// Records dropped because the pair is contradictory.
    pub contradictions: usize,
}

impl RecastDataset {
    pub fn counts(&self) -> BTreeMap<Split, RecastCounts> {
        self.splits.iter().map(|(s, d)| (*s, d.counts())).collect()
    }

    pub fn split(&self, split: Split) -> &[AnnotatedPair] {
        self.splits.get(&split).map(|d| d.pairs.as_slice()).unwrap_or(&[])
    }

    /// Writes `{split}.jsonl` (control pairs then others), `counts.json` and
    /// `rejects.jsonl` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for split in Split::ALL {
            let data = self.splits.get(&split).cloned().unwrap_or_default();
            let rows: Vec<&AnnotatedPair> = data.pairs.iter().chain(&data.others).collect();
            write_jsonl(&dir.join(format!("{split}.jsonl")), &rows)?;
        }
        write_json(&dir.join("counts.json"), &self.counts())?;
        write_jsonl(&dir.join("rejects.jsonl"), &self.rejects)?;
        Ok(())
    }

    /// Pairs whose surface form (in either order) occurs in more than one split.
    pub fn leaked_pairs(&self) -> Vec<(Vec<String>, Vec<String>)> {
        let mut seen: HashMap<(Vec<String>, Vec<String>), Split> = HashMap::new();
        let mut leaked = HashSet::new();
        for (split, data) in &self.splits {
            for p in data.pairs.iter().chain(&data.others) {
                let (a, b) = (p.pair.x.clone(), p.pair.y.clone());
                let key = if a <= b { (a, b) } else { (b, a) };
                match seen.get(&key) {
                    Some(s) if s != split => {
                        leaked.insert(key);
                    }
                    Some(_) => {}
                    None => {
                        seen.insert(key, *split);
                    }
                }
            }
        }
        let mut out: Vec<_> = leaked.into_iter().collect();
        out.sort();
        out
    }
}

/// Recasts SICK records. Records outside the meaning-preserving groups go to
/// the rejects list; contradictions are dropped and counted. Every EQ, FWD
/// and REV pair is followed by its reversal (EQ stays EQ, FWD and REV swap).
pub fn recast(records: &[SickRecord]) -> RecastDataset {
    let mut out = RecastDataset::default();
    for split in Split::ALL {
        out.splits.insert(split, SplitData::default());
    }
    for r in records {
        if !MEANING_PRESERVING_GROUPS.contains(&r.transformation_group.as_str()) {
            out.rejects.push(Reject {
                pair_id: r.pair_id.clone(),
                transformation_group: r.transformation_group.clone(),
                reason: "transformation group is not meaning-preserving".into(),
            });
            continue;
        }
        let pair = match SentencePair::from_text(&r.sentence_a, &r.sentence_b) {
            Ok(p) => p,
            Err(e) => {
                out.rejects.push(Reject {
                    pair_id: r.pair_id.clone(),
                    transformation_group: r.transformation_group.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let relation = derive_relation(r.label_ab, r.label_ba);
        let data = out.splits.get_mut(&r.split).expect("all splits present");
        match relation {
            Relation::Eq | Relation::Fwd | Relation::Rev => {
                let reversed = pair.swapped();
                data.pairs.push(AnnotatedPair::new(pair, relation, Source::Gold));
                data.pairs.push(AnnotatedPair::new(reversed, relation.reversed(), Source::Gold));
            }
            Relation::Neutral | Relation::Invalid => data.others.push(AnnotatedPair::new(pair, relation, Source::Gold)),
            Relation::Contra => out.contradictions += 1,
        }
    }
    out
}

/// Keeps EQ, FWD and REV pairs and upsamples the minority relations.
pub fn filter_for_training(pairs: &[AnnotatedPair], seed: u64) -> Result<Vec<AnnotatedPair>> {
    let control: Vec<AnnotatedPair> = pairs.iter().filter(|p| p.relation.is_control()).cloned().collect();
    balance_corpus(&control, BalanceMode::Upsample, seed)
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

/// Reads a `pair_ID → transformation group` table (tab-separated with a
/// header naming `pair_ID` and `transformation_group`).
pub fn read_group_table(path: &Path) -> Result<HashMap<String, String>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let id = column(&headers, &["pair_ID", "pair_id"])
        .ok_or_else(|| Error::Malformed { line: 1, reason: "group table lacks pair_ID".into() })?;
    let group = column(&headers, &["transformation_group", "group"])
        .ok_or_else(|| Error::Malformed { line: 1, reason: "group table lacks transformation_group".into() })?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if let (Some(i), Some(g)) = (rec.get(id), rec.get(group)) {
            out.insert(i.trim().to_string(), g.trim().to_string());
        }
    }
    Ok(out)
}

/// Reads a SICK distribution file by column name. The group comes from a
/// `transformation_group` column when present, else from `groups`; records
/// with no group get an empty tag and end up rejected by [`recast`].
pub fn read_sick(path: &Path, groups: Option<&HashMap<String, String>>) -> Result<Vec<SickRecord>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let need = |names: &[&str]| {
        column(&headers, names).ok_or_else(|| Error::Malformed { line: 1, reason: format!("missing column {}", names[0]) })
    };
    let id = need(&["pair_ID", "pair_id"])?;
    let a = need(&["sentence_A", "sentence_a"])?;
    let b = need(&["sentence_B", "sentence_b"])?;
    let ab = need(&["entailment_AB", "label_ab"])?;
    let ba = need(&["entailment_BA", "label_ba"])?;
    let split = need(&["SemEval_set", "split"])?;
    let group = column(&headers, &["transformation_group", "group"]);

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let field = |c: usize| {
            rec.get(c).map(str::trim).ok_or_else(|| Error::Malformed { line, reason: format!("missing field {c}") })
        };
        let malformed = |e: Error| Error::Malformed { line, reason: e.to_string() };
        let pair_id = field(id)?.to_string();
        let transformation_group = match group {
            Some(g) => field(g)?.to_string(),
            None => groups.and_then(|m| m.get(&pair_id)).cloned().unwrap_or_default(),
        };
        out.push(SickRecord {
            sentence_a: field(a)?.to_string(),
            sentence_b: field(b)?.to_string(),
            label_ab: field(ab)?.parse().map_err(malformed)?,
            label_ba: field(ba)?.parse().map_err(malformed)?,
            split: field(split)?.parse().map_err(malformed)?,
            transformation_group,
            pair_id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use NliLabel::{Contradiction as C, Entailment as E, Neutral as N};

    fn rec(id: &str, a: &str, b: &str, ab: NliLabel, ba: NliLabel, group: &str, split: Split) -> SickRecord {
        SickRecord {
            pair_id: id.into(),
            sentence_a: a.into(),
            sentence_b: b.into(),
            label_ab: ab,
            label_ba: ba,
            transformation_group: group.into(),
            split,
        }
    }

    #[test]
    fn equivalence_gets_reversed_twin() {
        let d = recast(&[rec("1", "a man runs", "a guy runs", E, E, "S1aS2a", Split::Train)]);
        let pairs = d.split(Split::Train);
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.relation == Relation::Eq));
        assert_eq!(pairs[1].pair, pairs[0].pair.swapped());
    }

    #[test]
    fn forward_gets_reverse_twin() {
        let d = recast(&[rec("1", "a man runs fast", "a man runs", E, N, "S1aS1b", Split::Test)]);
        let pairs = d.split(Split::Test);
        assert_eq!(pairs[0].relation, Relation::Fwd);
        assert_eq!(pairs[1].relation, Relation::Rev);
        assert_eq!(pairs[1].pair.x, pairs[0].pair.y);
    }

    #[test]
    fn others_contradictions_and_rejects() {
        let d = recast(&[
            rec("1", "a b", "c d", N, N, "S1aS2b", Split::Train),
            rec("2", "a b", "c d", N, C, "S1aS2b", Split::Train),
            rec("3", "a b", "not a b", C, C, "S1aS2b", Split::Train),
            rec("4", "a b", "a b", E, E, "S1aS1c", Split::Train),
            rec("5", "a b", "a b", E, E, "", Split::Train),
        ]);
        let c = d.counts()[&Split::Train];
        assert_eq!(c, RecastCounts { eq: 0, fwd: 0, rev: 0, others: 2 });
        assert_eq!(d.contradictions, 1);
        assert_eq!(d.rejects.len(), 2);
    }

    #[test]
    fn direction_parity_holds() {
        let d = recast(&[
            rec("1", "a b c", "a b", E, N, "S1aS2a", Split::Train),
            rec("2", "a b", "a b c", N, E, "S1bS2b", Split::Train),
        ]);
        let c = d.counts()[&Split::Train];
        assert_eq!((c.fwd, c.rev), (2, 2));
    }

    #[test]
    fn training_filter_balances_by_upsampling() {
        let mut records = Vec::new();
        for i in 0..6 {
            records.push(rec(&i.to_string(), &format!("a{i} b"), &format!("b a{i}"), E, E, "S1aS2a", Split::Train));
        }
        for i in 0..2 {
            records.push(rec(&format!("f{i}"), &format!("f{i} g h"), &format!("f{i} g"), E, N, "S1aS2a", Split::Train));
        }
        records.push(rec("o", "p q", "r s", N, N, "S1aS2a", Split::Train));
        let d = recast(&records);
        let train = &d.splits[&Split::Train];
        let all: Vec<AnnotatedPair> = train.pairs.iter().chain(&train.others).cloned().collect();
        let balanced = filter_for_training(&all, 0).unwrap();
        let count = |r| balanced.iter().filter(|p| p.relation == r).count();
        assert_eq!((count(Relation::Eq), count(Relation::Fwd), count(Relation::Rev)), (12, 12, 12));

        let only_eq = recast(&records[..6]);
        assert!(filter_for_training(only_eq.split(Split::Train), 0).is_err());
    }

    #[test]
    fn leakage_detection() {
        let d = recast(&[
            rec("1", "a b", "b a", E, E, "S1aS2a", Split::Train),
            rec("2", "b a", "a b", E, E, "S1aS2a", Split::Test),
        ]);
        assert_eq!(d.leaked_pairs().len(), 1);
    }

    #[test]
    fn reads_official_columns_with_group_table() {
        let dir = tempfile::tempdir().unwrap();
        let sick = dir.path().join("SICK.txt");
        fs::write(
            &sick,
            "pair_ID\tsentence_A\tsentence_B\tentailment_label\trelatedness_score\tentailment_AB\tentailment_BA\tSemEval_set\n\
             1\tA man runs\tA guy runs\tENTAILMENT\t4.5\tA_entails_B\tB_entails_A\tTRAIN\n\
             2\tA man runs fast\tA man runs\tENTAILMENT\t4.0\tA_entails_B\tB_neutral_A\tTRIAL\n",
        )
        .unwrap();
        let groups = dir.path().join("groups.tsv");
        fs::write(&groups, "pair_ID\ttransformation_group\n1\tS1aS2a\n").unwrap();
        let table = read_group_table(&groups).unwrap();
        let recs = read_sick(&sick, Some(&table)).unwrap();
        assert_eq!(recs[0].label_ba, E);
        assert_eq!(recs[1].split, Split::Dev);
        assert_eq!(recs[1].transformation_group, "");
        let d = recast(&recs);
        assert_eq!(d.counts()[&Split::Train].eq, 2);
        assert_eq!(d.rejects.len(), 1);
        d.write(&dir.path().join("out")).unwrap();
        assert!(dir.path().join("out/counts.json").exists());
        assert!(matches!(read_sick(&dir.path().join("none"), None), Err(Error::MissingInput(_))));
    }
}
