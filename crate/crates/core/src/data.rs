//! Triple datasets: parsing, vocabulary encoding and the filtered-ranking index.
//!
//! Triple files hold one fact per line as `head<TAB>relation<TAB>tail`.
//! Ids are dense and assigned in first-seen order over train, then valid,
//! then test. Entities that only occur in valid/test are admitted to the
//! vocabulary (transductive link prediction).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An encoded `(head, relation, tail)` fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub const fn new(head: u32, relation: u32, tail: u32) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// A triple before vocabulary encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// Column order of the three fields on a line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TripleOrder {
    /// `head relation tail`
    #[default]
    Hrt,
    /// `head tail relation`
    Htr,
}

/// Parse tab-separated triples. Blank lines are skipped; a trailing `\r` is
/// tolerated so files written on Windows load unchanged.
pub fn parse_triples(text: &str, order: TripleOrder) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                line: idx + 1,
                found: fields.len(),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::EmptyField { line: idx + 1 });
        }
        let (h, r, t) = match order {
            TripleOrder::Hrt => (fields[0], fields[1], fields[2]),
            TripleOrder::Htr => (fields[0], fields[2], fields[1]),
        };
        out.push(RawTriple {
            head: h.to_owned(),
            relation: r.to_owned(),
            tail: t.to_owned(),
        });
    }
    Ok(out)
}

/// Bidirectional string/id mapping with dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `name`, assigning the next free id if unseen.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn encode(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Known-true completions used to filter ranking candidates.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    by_rel_tail: HashMap<(u32, u32), Vec<u32>>,
    by_head_rel: HashMap<(u32, u32), Vec<u32>>,
}

impl FilterIndex {
    /// Build from every known triple (normally train ∪ valid ∪ test).
    pub fn build<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut by_rel_tail: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        let mut by_head_rel: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for t in triples {
            by_rel_tail
                .entry((t.relation, t.tail))
                .or_default()
                .push(t.head);
            by_head_rel
                .entry((t.head, t.relation))
                .or_default()
                .push(t.tail);
        }
        for v in by_rel_tail.values_mut().chain(by_head_rel.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        Self {
            by_rel_tail,
            by_head_rel,
        }
    }

    /// Sorted heads `h` with `(h, relation, tail)` known.
    pub fn heads(&self, relation: u32, tail: u32) -> &[u32] {
        self.by_rel_tail
            .get(&(relation, tail))
            .map_or(&[], Vec::as_slice)
    }

    /// Sorted tails `t` with `(head, relation, t)` known.
    pub fn tails(&self, head: u32, relation: u32) -> &[u32] {
        self.by_head_rel
            .get(&(head, relation))
            .map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.tails(triple.head, triple.relation)
            .binary_search(&triple.tail)
            .is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub filter: FilterIndex,
}

const SPLITS: [(Split, &[&str]); 3] = [
    (Split::Train, &["train.txt", "train.tsv", "train"]),
    (Split::Valid, &["valid.txt", "valid.tsv", "valid", "dev.txt"]),
    (Split::Test, &["test.txt", "test.tsv", "test"]),
];

fn locate_split(dir: &Path, split: Split, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::MissingSplit {
            split: split.name(),
            dir: dir.to_path_buf(),
        })
}

/// Paths of the train/valid/test files in `dir`, in that order.
pub fn split_paths(dir: &Path) -> Result<[PathBuf; 3]> {
    let [a, b, c] = SPLITS;
    Ok([
        locate_split(dir, a.0, a.1)?,
        locate_split(dir, b.0, b.1)?,
        locate_split(dir, c.0, c.1)?,
    ])
}

/// Load `train`, `valid` and `test` triple files from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>, order: TripleOrder) -> Result<Dataset> {
    let dir = dir.as_ref();
    let paths = split_paths(dir)?;
    let mut raw = Vec::with_capacity(3);
    for path in &paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        raw.push(parse_triples(&text, order)?);
    }
    let test = raw.pop().unwrap_or_default();
    let valid = raw.pop().unwrap_or_default();
    let train = raw.pop().unwrap_or_default();
    Dataset::from_raw(&train, &valid, &test)
}

impl Dataset {
    pub fn from_raw(train: &[RawTriple], valid: &[RawTriple], test: &[RawTriple]) -> Result<Self> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut encode = |raw: &[RawTriple]| -> Vec<Triple> {
            raw.iter()
                .map(|t| {
                    let head = entities.intern(&t.head);
                    let relation = relations.intern(&t.relation);
                    let tail = entities.intern(&t.tail);
                    Triple::new(head, relation, tail)
                })
                .collect()
        };
        let train = encode(train);
        let valid = encode(valid);
        let test = encode(test);
        let ds = Self::assemble(entities, relations, train, valid, test);
        ds.check_disjoint()?;
        Ok(ds)
    }

    /// Build from already-encoded triples; entity/relation names are the ids
    /// rendered as `e{id}` / `r{id}`.
    pub fn from_encoded(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let mut entities = Vocab::new();
        for i in 0..num_entities {
            entities.intern(&format!("e{i}"));
        }
        let mut relations = Vocab::new();
        for i in 0..num_relations {
            relations.intern(&format!("r{i}"));
        }
        for t in train.iter().chain(&valid).chain(&test) {
            check_ids(t, num_entities, num_relations)?;
        }
        let ds = Self::assemble(entities, relations, train, valid, test);
        ds.check_disjoint()?;
        Ok(ds)
    }

    fn assemble(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Self {
        let filter = FilterIndex::build(train.iter().chain(&valid).chain(&test));
        Self {
            entities,
            relations,
            train,
            valid,
            test,
            filter,
        }
    }

    fn check_disjoint(&self) -> Result<()> {
        let splits = [
            (Split::Train, &self.train),
            (Split::Valid, &self.valid),
            (Split::Test, &self.test),
        ];
        let mut seen: HashMap<Triple, Split> = HashMap::new();
        for (split, triples) in splits {
            let mut local = HashSet::new();
            for t in triples.iter() {
                if !local.insert(*t) {
                    continue;
                }
                if let Some(prev) = seen.insert(*t, split) {
                    return Err(Error::OverlappingSplits {
                        head: self.entity_name(t.head),
                        relation: self.relation_name(t.relation),
                        tail: self.entity_name(t.tail),
                        first: prev.name(),
                        second: split.name(),
                    });
                }
            }
        }
        Ok(())
    }

    fn entity_name(&self, id: u32) -> String {
        self.entities.decode(id).unwrap_or("?").to_owned()
    }

    fn relation_name(&self, id: u32) -> String {
        self.relations.decode(id).unwrap_or("?").to_owned()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.num_entities(),
            relations: self.num_relations(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        check_ids(t, self.num_entities(), self.num_relations())
    }
}

pub(crate) fn check_ids(t: &Triple, num_entities: usize, num_relations: usize) -> Result<()> {
    if t.head as usize >= num_entities {
        return Err(Error::EntityOutOfRange {
            id: t.head,
            count: num_entities,
        });
    }
    if t.tail as usize >= num_entities {
        return Err(Error::EntityOutOfRange {
            id: t.tail,
            count: num_entities,
        });
    }
    if t.relation as usize >= num_relations {
        return Err(Error::RelationOutOfRange {
            id: t.relation,
            count: num_relations,
        });
    }
    Ok(())
}

/// Render triples back to the TSV form `load_dataset` reads.
pub fn format_triples(triples: &[Triple], entities: &Vocab, relations: &Vocab) -> String {
    let mut out = String::new();
    for t in triples {
        let h = entities.decode(t.head).unwrap_or("?");
        let r = relations.decode(t.relation).unwrap_or("?");
        let tl = entities.decode(t.tail).unwrap_or("?");
        out.push_str(h);
        out.push('\t');
        out.push_str(r);
        out.push('\t');
        out.push_str(tl);
        out.push('\n');
    }
    out
}

/// Write a dataset as `train.txt`, `valid.txt`, `test.txt` under `dir`.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, triples) in [("train.txt", &ds.train), ("valid.txt", &ds.valid), ("test.txt", &ds.test)] {
        let path = dir.join(name);
        fs::write(&path, format_triples(triples, &ds.entities, &ds.relations))
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
